#pragma once

// Desk-scale evaluation analogs: feature-correspondence mean distance (MD / m-MD),
// a feature-space fidelity distance, and summary statistics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "draglora/features.hpp"
#include "draglora/rng.hpp"
#include "draglora/schedule.hpp"
#include "draglora/unet.hpp"

namespace draglora {

struct MetricConfig {
  int timestep = 300;  // about 0.3 T: mid-noise features
  std::uint64_t noise_seed = 0x5EED;
};

template <class T>
struct ProbeFeatures {
  Tensor<T> features;
  Tensor<T> mid;
};

// Base-model activations of a clean image noised to the probe timestep with fixed noise.
template <class T>
ProbeFeatures<T> probe_features(const Denoiser<T>& model, const Tensor<T>& image, int cls, const NoiseSchedule& sched,
                                const MetricConfig& cfg = {}) {
  Rng rng(cfg.noise_seed);
  const Tensor<T> eps = rng.normal_tensor<T>(image.shape);
  const Tensor<T> zt = ddpm_forward(image, eps, cfg.timestep, sched);
  Tape<T> tape;
  NoGradGuard<T> guard(tape);
  auto out = model.forward(tape, tape.leaf(zt, false), cfg.timestep, cls, nullptr);
  return {out.features.value(), out.mid.value()};
}

inline double cosine_distance(const double* a, const double* b, int n) {
  double ab = 0, aa = 0, bb = 0;
  for (int i = 0; i < n; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 1.0;
  return 1.0 - ab / std::sqrt(aa * bb);
}

struct MdResult {
  double md = 0.0;
  std::vector<Point2> matches;
};

// For each handle p_i, the grid location of the edited map whose feature is most
// cosine-similar to the original feature at p_i; md is the mean distance of those
// matches to the targets. A mask restricts the search (m-MD).
template <class T>
MdResult mean_distance_features(const Tensor<T>& F_orig, const Tensor<T>& F_edit, const std::vector<Point2>& p,
                                const std::vector<Point2>& g, const Tensor<float>* mask = nullptr) {
  require_same_shape(F_orig, F_edit, "mean_distance");
  if (p.size() != g.size() || p.empty()) throw ConfigError("mean_distance needs matching non-empty point lists");
  const int C = F_edit.dim(0), H = F_edit.dim(1), W = F_edit.dim(2);
  if (mask) {
    if (mask->dim(1) != H || mask->dim(2) != W) throw ShapeError("mask does not match feature grid");
    if (std::none_of(mask->data.begin(), mask->data.end(), [](float v) { return v >= 0.5f; })) {
      throw ConfigError("m-MD requested with an empty mask");
    }
  }
  // Edited features as per-pixel vectors.
  std::vector<double> edit(static_cast<std::size_t>(C) * H * W);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) edit[static_cast<std::size_t>((y * W + x) * C + c)] = static_cast<double>(F_edit.at(c, y, x));
  MdResult res;
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Tensor<T> ref = sample_feature(F_orig, p[i], 0);
    std::vector<double> r(ref.data.begin(), ref.data.end());
    double best = std::numeric_limits<double>::infinity();
    Point2 arg{0, 0};
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (mask && mask->at(0, y, x) < 0.5f) continue;
        const double d = cosine_distance(r.data(), edit.data() + static_cast<std::size_t>((y * W + x) * C), C);
        if (d < best) {
          best = d;
          arg = {static_cast<double>(x), static_cast<double>(y)};
        }
      }
    res.matches.push_back(arg);
    sum += distance(arg, g[i]);
  }
  res.md = sum / static_cast<double>(p.size());
  return res;
}

template <class T>
MdResult mean_distance(const Denoiser<T>& model, const Tensor<T>& original, const Tensor<T>& edited,
                       const std::vector<Point2>& p, const std::vector<Point2>& g, int cls, const NoiseSchedule& sched,
                       const Tensor<float>* mask = nullptr, const MetricConfig& cfg = {}) {
  const auto a = probe_features(model, original, cls, sched, cfg);
  const auto b = probe_features(model, edited, cls, sched, cfg);
  return mean_distance_features(a.features, b.features, p, g, mask);
}

// RMS difference of bottleneck activations (0 for identical images, symmetric).
template <class T>
double fidelity(const Denoiser<T>& model, const Tensor<T>& a, const Tensor<T>& b, int cls, const NoiseSchedule& sched,
                const MetricConfig& cfg = {}) {
  require_same_shape(a, b, "fidelity");
  const auto fa = probe_features(model, a, cls, sched, cfg);
  const auto fb = probe_features(model, b, cls, sched, cfg);
  double s = 0.0;
  for (std::size_t i = 0; i < fa.mid.size(); ++i) {
    const double d = static_cast<double>(fa.mid[i]) - static_cast<double>(fb.mid[i]);
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(fa.mid.size()));
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace draglora
