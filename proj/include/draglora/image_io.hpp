#pragma once

// PNG and mask I/O. Images map [-1, 1] <-> [0, 255]; masks are 1 x H x W in {0, 1}.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "draglora/tensor.hpp"

namespace draglora {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<unsigned char> pixels;
};

namespace detail {

struct PngReadBuffer {
  const unsigned char* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_read_mem(png_structp png, png_bytep out, png_size_t n) {
  auto* b = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (b->pos + n > b->size) png_error(png, "truncated PNG");
  std::memcpy(out, b->data + b->pos, n);
  b->pos += n;
}

inline void png_write_mem(png_structp png, png_bytep in, png_size_t n) {
  auto* s = static_cast<std::string*>(png_get_io_ptr(png));
  s->append(reinterpret_cast<const char*>(in), n);
}

inline void png_flush_mem(png_structp) {}

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

inline void png_warn_fn(png_structp, png_const_charp) {}

}  // namespace detail

// Decodes any PNG into 8-bit gray or RGB (alpha dropped, palettes expanded).
inline RawImage decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    throw ImageError("not a PNG image");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warn_fn);
  if (!png) throw ImageError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  RawImage img;
  std::vector<png_bytep> rows;
  detail::PngReadBuffer buf{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("PNG decode failed: " + err);
  }
  png_set_read_fn(png, &buf, detail::png_read_mem);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = static_cast<int>(png_get_channels(png, info));
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  rows.resize(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = img.pixels.data() + static_cast<std::size_t>(y) * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (img.channels != 1 && img.channels != 3) throw ImageError("unsupported PNG channel count");
  return img;
}

inline std::string encode_png(const RawImage& img) {
  std::string out, err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warn_fn);
  if (!png) throw ImageError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("PNG encode failed: " + err);
  }
  png_set_write_fn(png, &out, detail::png_write_mem, detail::png_flush_mem);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(img.pixels.data() + static_cast<std::size_t>(y) * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline unsigned char to_byte(double v) {
  const double s = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<unsigned char>(std::clamp(s, 0.0, 255.0));
}

template <class T>
RawImage tensor_to_raw(const Tensor<T>& img) {
  if (img.rank() != 3 || (img.dim(0) != 3 && img.dim(0) != 1)) throw ImageError("expected a 1xHxW or 3xHxW image tensor");
  RawImage r{img.dim(2), img.dim(1), img.dim(0), {}};
  r.pixels.resize(img.size());
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < r.channels; ++c)
        r.pixels[static_cast<std::size_t>((y * r.width + x) * r.channels + c)] = to_byte(static_cast<double>(img.at(c, y, x)));
  return r;
}

inline Tensor<float> raw_to_tensor(const RawImage& r) {
  Tensor<float> t({3, r.height, r.width});
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const int src = r.channels == 1 ? 0 : c;
        t.at(c, y, x) = static_cast<float>(r.pixels[static_cast<std::size_t>((y * r.width + x) * r.channels + src)] / 127.5 - 1.0);
      }
  return t;
}

template <class T>
std::string image_png(const Tensor<T>& img) {
  return encode_png(tensor_to_raw(img));
}

inline Tensor<float> image_from_png(const std::string& bytes) { return raw_to_tensor(decode_png(bytes)); }

// Masks: any pixel >= 128 (first channel) is editable.
inline Tensor<float> png_mask(const std::string& bytes) {
  RawImage r = decode_png(bytes);
  Tensor<float> m({1, r.height, r.width});
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      m.at(0, y, x) = r.pixels[static_cast<std::size_t>((y * r.width + x) * r.channels)] >= 128 ? 1.0f : 0.0f;
  return m;
}

inline std::string mask_png(const Tensor<float>& m) {
  RawImage r{m.dim(2), m.dim(1), 1, {}};
  r.pixels.resize(static_cast<std::size_t>(r.width) * r.height);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) r.pixels[static_cast<std::size_t>(y * r.width + x)] = m.at(0, y, x) >= 0.5f ? 255 : 0;
  return encode_png(r);
}

inline Tensor<float> full_mask(int H, int W) { return Tensor<float>({1, H, W}, 1.0f); }

inline bool mask_is_binary(const Tensor<float>& m) {
  return std::all_of(m.data.begin(), m.data.end(), [](float v) { return v == 0.0f || v == 1.0f; });
}

// Run-length encoding over the row-major mask: alternating run lengths, starting with
// a (possibly empty) run of zeros.
inline nlohmann::json mask_to_rle(const Tensor<float>& m) {
  std::vector<int> runs;
  float cur = 0.0f;
  int len = 0;
  for (float v : m.data) {
    const float b = v >= 0.5f ? 1.0f : 0.0f;
    if (b != cur) {
      runs.push_back(len);
      cur = b;
      len = 0;
    }
    ++len;
  }
  runs.push_back(len);
  return {{"rle", runs}, {"size", {m.dim(1), m.dim(2)}}};
}

inline Tensor<float> mask_from_rle(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("rle") || !j.contains("size")) throw ImageError("mask RLE needs 'rle' and 'size'");
  const auto size = j.at("size").get<std::vector<int>>();
  if (size.size() != 2 || size[0] <= 0 || size[1] <= 0) throw ImageError("mask RLE size must be [H, W]");
  Tensor<float> m({1, size[0], size[1]});
  std::size_t pos = 0;
  float v = 0.0f;
  for (const auto& r : j.at("rle")) {
    const int n = r.get<int>();
    if (n < 0 || pos + static_cast<std::size_t>(n) > m.size()) throw ImageError("mask RLE runs exceed mask size");
    for (int i = 0; i < n; ++i) m[pos++] = v;
    v = 1.0f - v;
  }
  if (pos != m.size()) throw ImageError("mask RLE runs do not cover the mask");
  return m;
}

}  // namespace draglora
