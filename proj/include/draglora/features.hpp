#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "draglora/autodiff.hpp"
#include "draglora/ops.hpp"

namespace draglora {

// Real-valued 2-D point in latent-grid pixels; x is the column, y the row.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  Point2 operator+(const Point2& o) const { return {x + o.x, y + o.y}; }
  Point2 operator-(const Point2& o) const { return {x - o.x, y - o.y}; }
  Point2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Point2& o) const { return x == o.x && y == o.y; }
  bool operator!=(const Point2& o) const { return !(*this == o); }
};

inline double norm(const Point2& p) { return std::hypot(p.x, p.y); }
inline double distance(const Point2& a, const Point2& b) { return norm(a - b); }

// Decoder activation aligned to the latent grid.
template <class T>
struct FeatureMap {
  Tensor<T> data;  // C x H x W
  std::string layer;
  int t_index = 0;

  int channels() const { return data.dim(0); }
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }
};

inline int patch_size(int r1) { return (2 * r1 + 1) * (2 * r1 + 1); }

// Bilinear samples of F at the (2 r1 + 1)^2 integer offsets around `p`, laid out
// channel-major: out[c * S + s]. Coordinates are clamped to the grid.
template <class T>
Tensor<T> sample_feature(const Tensor<T>& F, Point2 p, int r1) {
  const int C = F.dim(0), H = F.dim(1), W = F.dim(2);
  const int S = patch_size(r1);
  Tensor<T> out({C * S});
  int s = 0;
  for (int dy = -r1; dy <= r1; ++dy) {
    for (int dx = -r1; dx <= r1; ++dx, ++s) {
      const auto ty = ops::detail::bilinear_tap(p.y + dy, H);
      const auto tx = ops::detail::bilinear_tap(p.x + dx, W);
      for (int c = 0; c < C; ++c) {
        const double v = ty.w0 * (tx.w0 * F.at(c, ty.i0, tx.i0) + tx.w1 * F.at(c, ty.i0, tx.i1)) +
                         ty.w1 * (tx.w0 * F.at(c, ty.i1, tx.i0) + tx.w1 * F.at(c, ty.i1, tx.i1));
        out[static_cast<std::size_t>(c * S + s)] = static_cast<T>(v);
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> sample_feature(const FeatureMap<T>& F, Point2 p, int r1) {
  return sample_feature(F.data, p, r1);
}

namespace ops {

// Differentiable counterpart of sample_feature (gradient w.r.t. the feature map only).
template <class T>
Var<T> sample_patch(Var<T> F, Point2 p, int r1) {
  Tape<T>& tape = *F.tape;
  Tensor<T> out = draglora::sample_feature(F.value(), p, r1);
  const int oid = static_cast<int>(tape.node_count());
  return tape.record(std::move(out), {F}, [&tape, F, p, r1, oid] {
    const Tensor<T>& g = tape.grad(oid);
    Tensor<T>& dF = tape.grad_buffer(F.id);
    const int C = dF.dim(0), H = dF.dim(1), W = dF.dim(2);
    const int S = patch_size(r1);
    int s = 0;
    for (int dy = -r1; dy <= r1; ++dy) {
      for (int dx = -r1; dx <= r1; ++dx, ++s) {
        const auto ty = detail::bilinear_tap(p.y + dy, H);
        const auto tx = detail::bilinear_tap(p.x + dx, W);
        for (int c = 0; c < C; ++c) {
          const double gv = static_cast<double>(g[static_cast<std::size_t>(c * S + s)]);
          dF.at(c, ty.i0, tx.i0) += static_cast<T>(gv * ty.w0 * tx.w0);
          dF.at(c, ty.i0, tx.i1) += static_cast<T>(gv * ty.w0 * tx.w1);
          dF.at(c, ty.i1, tx.i0) += static_cast<T>(gv * ty.w1 * tx.w0);
          dF.at(c, ty.i1, tx.i1) += static_cast<T>(gv * ty.w1 * tx.w1);
        }
      }
    }
  });
}

}  // namespace ops

// Per-element mean absolute difference between two patches. This is the feature
// distance used by motion supervision, point tracking, and minD.
template <class T>
double patch_distance(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "patch_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

}  // namespace draglora
