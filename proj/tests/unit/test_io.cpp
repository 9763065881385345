#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "draglora/checkpoint.hpp"
#include "draglora/image_io.hpp"
#include "draglora/toyworld.hpp"

using namespace draglora;

namespace {

Checkpoint tiny_checkpoint(std::uint64_t seed = 3) {
  ToyUNet<float> net(reduced_unet_config(), seed);
  return make_checkpoint(net, ScheduleParams{}, seed, "abc");
}

CheckpointError::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const CheckpointError& e) {
    return e.kind;
  }
  ADD_FAILURE() << "no CheckpointError thrown";
  return CheckpointError::Kind::io;
}

}  // namespace

TEST(Checkpoint, RoundTripGivesIdenticalForward) {
  auto ck = tiny_checkpoint();
  auto bytes = serialize_checkpoint(ck);
  auto back = parse_checkpoint(bytes);
  EXPECT_EQ(back.arch, ck.arch);
  EXPECT_EQ(back.schedule, ck.schedule);
  EXPECT_EQ(back.dataset_hash, "abc");
  EXPECT_EQ(back.model_hash(), ck.model_hash());
  auto z = Rng(1).normal_tensor<float>({3, 8, 8});
  EXPECT_EQ(predict_noise<float>(ck.model(), nullptr, z, 400, 2), predict_noise<float>(back.model(), nullptr, z, 400, 2));
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  auto path = (std::filesystem::temp_directory_path() / "draglora_ck_test.dlc").string();
  auto ck = tiny_checkpoint();
  save_checkpoint(path, ck);
  EXPECT_EQ(load_checkpoint(path).model_hash(), ck.model_hash());
  std::filesystem::remove(path);
  EXPECT_EQ(kind_of([&] { load_checkpoint(path); }), CheckpointError::Kind::io);
}

TEST(Checkpoint, TruncatedIsCorrupt) {
  auto bytes = serialize_checkpoint(tiny_checkpoint());
  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_EQ(kind_of([&] { parse_checkpoint(bytes.substr(0, n)); }), CheckpointError::Kind::corrupt) << n;
  }
}

TEST(Checkpoint, EditedHeaderIsHashMismatch) {
  auto bytes = serialize_checkpoint(tiny_checkpoint());
  auto pos = bytes.find("\"abc\"");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 1] = 'x';
  EXPECT_EQ(kind_of([&] { parse_checkpoint(bytes); }), CheckpointError::Kind::hash_mismatch);
}

TEST(Checkpoint, FlippedPayloadIsHashMismatch) {
  auto bytes = serialize_checkpoint(tiny_checkpoint());
  bytes[bytes.size() - 20] ^= 0x01;
  EXPECT_EQ(kind_of([&] { parse_checkpoint(bytes); }), CheckpointError::Kind::hash_mismatch);
}

TEST(Checkpoint, VersionMismatch) {
  auto bytes = serialize_checkpoint(tiny_checkpoint());
  bytes[4] = 9;  // little-endian u32 version right after the magic
  EXPECT_EQ(kind_of([&] { parse_checkpoint(bytes); }), CheckpointError::Kind::version_mismatch);
  bytes[0] = 'X';
  EXPECT_EQ(kind_of([&] { parse_checkpoint(bytes); }), CheckpointError::Kind::corrupt);
}

TEST(Checkpoint, AdapterRoundTripAndBaseCheck) {
  auto ck = tiny_checkpoint();
  auto a = init_adapter<float>(ck.model(), 2, 5);
  for (auto& [id, p] : a.layers) p.B.data[0] = 0.25f;
  auto bytes = serialize_adapter(a, ck.model_hash());
  auto back = parse_adapter(bytes, ck.model_hash());
  EXPECT_EQ(back.rank, 2);
  ASSERT_EQ(back.layers.size(), a.layers.size());
  for (const auto& [id, p] : a.layers) {
    EXPECT_EQ(back.layers.at(id).A, p.A);
    EXPECT_EQ(back.layers.at(id).B, p.B);
  }
  EXPECT_EQ(kind_of([&] { parse_adapter(bytes, "0000000000000000"); }), CheckpointError::Kind::hash_mismatch);
  EXPECT_EQ(kind_of([&] { parse_checkpoint(bytes); }), CheckpointError::Kind::schema);
}

TEST(Toyworld, DatasetDeterministicAndInRange) {
  auto a = gen_dataset(11, 20);
  auto b = gen_dataset(11, 20);
  EXPECT_EQ(dataset_hash(a), dataset_hash(b));
  EXPECT_NE(dataset_hash(a), dataset_hash(gen_dataset(12, 20)));
  for (const auto& s : a) {
    EXPECT_TRUE(scene_in_frame(s.spec));
    for (float v : s.image.data) {
      EXPECT_GE(v, -1.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Toyworld, DiscRenderRule) {
  SceneSpec s;
  s.cls = static_cast<int>(ShapeClass::disc);
  s.cx = 16;
  s.cy = 16;
  s.size = 6;
  auto img = render_scene(s);
  for (int c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(img.at(c, 16, 16), static_cast<float>(s.fill[static_cast<std::size_t>(c)]));
  // (2,2) is far outside the disc: background base color plus bounded texture
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(img.at(c, 2, 2), s.background[static_cast<std::size_t>(c)], 3 * s.texture_amp + 1e-6);
  EXPECT_FALSE(shape_contains(s, 2, 2));
  EXPECT_TRUE(shape_contains(s, 16, 16));
}

TEST(Toyworld, MaskCoversShape) {
  SceneSpec s;
  auto m = scene_mask(s, 1.0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (shape_contains(s, x, y)) EXPECT_EQ(m.at(0, y, x), 1.0f);
  EXPECT_EQ(m.at(0, 0, 0), 0.0f);
}

TEST(Toyworld, ZeroStepsEqualsInitialization) {
  auto data = gen_dataset(1, 8, 8);
  TrainConfig tc;
  tc.steps = 0;
  tc.val_size = 2;
  tc.seed = 4;
  auto res = train_toy_model(data, ScheduleParams{}, reduced_unet_config(), tc);
  ToyUNet<float> init(reduced_unet_config(), Rng(4).fork(1).seed());
  EXPECT_EQ(res.checkpoint.params, init.parameters());
}

TEST(Toyworld, TrainingIsByteDeterministic) {
  auto data = gen_dataset(1, 8, 8);
  TrainConfig tc;
  tc.steps = 6;
  tc.batch = 2;
  tc.val_size = 2;
  tc.eval_every = 3;
  tc.warmup = 2;
  auto a = train_toy_model(data, ScheduleParams{}, reduced_unet_config(), tc);
  auto b = train_toy_model(data, ScheduleParams{}, reduced_unet_config(), tc);
  EXPECT_EQ(serialize_checkpoint(a.checkpoint), serialize_checkpoint(b.checkpoint));
  EXPECT_NE(a.checkpoint.params, ToyUNet<float>(reduced_unet_config(), Rng(0).fork(1).seed()).parameters());
}

TEST(Toyworld, RejectsEmptyDataset) {
  EXPECT_THROW(train_toy_model({}, ScheduleParams{}, reduced_unet_config(), TrainConfig{}), ConfigError);
}

TEST(ImageIo, PngRoundTrip) {
  Tensor<float> img({3, 5, 7});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(static_cast<int>(i % 256) / 127.5 - 1.0);
  auto back = image_from_png(image_png(img));
  EXPECT_EQ(back.shape, img.shape);
  EXPECT_LE(max_abs_diff(back, img), 1.0 / 127.5);
  // quantized values survive exactly
  EXPECT_EQ(image_png(back), image_png(img));
}

TEST(ImageIo, RejectsGarbage) {
  EXPECT_THROW(image_from_png("not a png at all"), ImageError);
  auto bytes = image_png(Tensor<float>({3, 4, 4}));
  EXPECT_THROW(image_from_png(bytes.substr(0, bytes.size() / 2)), ImageError);
}

TEST(ImageIo, MaskPngAndRle) {
  Tensor<float> m({1, 6, 5});
  for (int y = 1; y < 4; ++y)
    for (int x = 2; x < 5; ++x) m.at(0, y, x) = 1.0f;
  EXPECT_EQ(png_mask(mask_png(m)), m);
  auto rle = mask_to_rle(m);
  EXPECT_EQ(rle["size"], (nlohmann::json{6, 5}));
  EXPECT_EQ(rle["rle"].front().get<int>(), 7);
  EXPECT_EQ(mask_from_rle(rle), m);
  EXPECT_EQ(mask_from_rle(mask_to_rle(full_mask(3, 3))), full_mask(3, 3));
  EXPECT_TRUE(mask_is_binary(m));
  EXPECT_THROW(mask_from_rle(nlohmann::json{{"rle", {3}}, {"size", {2, 2}}}), ImageError);
  EXPECT_THROW(mask_from_rle(nlohmann::json{{"rle", {3, 9}}, {"size", {2, 2}}}), ImageError);
  EXPECT_THROW(mask_from_rle(nlohmann::json{{"rle", {4}}}), ImageError);
}
