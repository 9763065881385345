#pragma once

// Noise schedule, DDPM forward noising, and deterministic DDIM stepping/inversion.
//
// Latents are addressed by inference index s in [0, inference_steps]: index 0 is the
// clean signal (alpha_bar = 1) and index s >= 1 sits at training timestep
// step_map[s - 1].

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "draglora/autodiff.hpp"
#include "draglora/ops.hpp"
#include "draglora/tensor.hpp"

namespace draglora {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NoiseSchedule {
  int train_steps = 0;
  int inference_steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<int> step_map;

  // Training timestep of an inference index (index 0 maps to timestep 0).
  int timestep(int index) const {
    check_index(index);
    return index == 0 ? 0 : step_map[static_cast<std::size_t>(index - 1)];
  }

  double alpha_bar_at_index(int index) const {
    check_index(index);
    return index == 0 ? 1.0 : alpha_bars[static_cast<std::size_t>(step_map[static_cast<std::size_t>(index - 1)])];
  }

  double alpha_bar_at_timestep(int t) const {
    if (t < 0 || t >= train_steps) throw ConfigError("timestep out of range: " + std::to_string(t));
    return alpha_bars[static_cast<std::size_t>(t)];
  }

  void check_index(int index) const {
    if (index < 0 || index > inference_steps) throw ConfigError("inference index out of range: " + std::to_string(index));
  }
};

inline NoiseSchedule build_schedule(int train_steps, double beta_start, double beta_end, int inference_steps) {
  if (train_steps < 1) throw ConfigError("train_steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("require 0 < beta_start <= beta_end < 1");
  }
  if (inference_steps < 1 || train_steps % inference_steps != 0) {
    throw ConfigError("inference_steps must divide train_steps");
  }
  NoiseSchedule s;
  s.train_steps = train_steps;
  s.inference_steps = inference_steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(static_cast<std::size_t>(train_steps));
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double prod = 1.0;
  for (int t = 0; t < train_steps; ++t) {
    const double frac = train_steps == 1 ? 0.0 : static_cast<double>(t) / (train_steps - 1);
    const double beta = beta_start + frac * (beta_end - beta_start);
    s.betas[static_cast<std::size_t>(t)] = beta;
    s.alphas[static_cast<std::size_t>(t)] = 1.0 - beta;
    prod *= 1.0 - beta;
    s.alpha_bars[static_cast<std::size_t>(t)] = prod;
  }
  const int stride = train_steps / inference_steps;
  for (int i = 0; i < inference_steps; ++i) s.step_map.push_back((i + 1) * stride - 1);
  return s;
}

inline NoiseSchedule default_schedule() { return build_schedule(1000, 1e-4, 0.02, 50); }

// sqrt(ab) * z0 + sqrt(1 - ab) * eps
template <class T>
Tensor<T> ddpm_forward(const Tensor<T>& z0, const Tensor<T>& eps, double alpha_bar) {
  require_same_shape(z0, eps, "ddpm_forward");
  return axpby(static_cast<T>(std::sqrt(alpha_bar)), z0, static_cast<T>(std::sqrt(1.0 - alpha_bar)), eps);
}

template <class T>
Tensor<T> ddpm_forward(const Tensor<T>& z0, const Tensor<T>& eps, int timestep, const NoiseSchedule& sched) {
  return ddpm_forward(z0, eps, sched.alpha_bar_at_timestep(timestep));
}

// DDIM (eta = 0) transfer between two noise levels given a noise prediction:
// sqrt(ab_to) * (z - sqrt(1 - ab_from) * eps) / sqrt(ab_from) + sqrt(1 - ab_to) * eps.
// Used for both denoising (ab_to > ab_from) and inversion (ab_to < ab_from).
struct DdimCoefficients {
  double z_coef;
  double eps_coef;
};

inline DdimCoefficients ddim_coefficients(double ab_from, double ab_to) {
  const double r = std::sqrt(ab_to / ab_from);
  return {r, std::sqrt(1.0 - ab_to) - r * std::sqrt(1.0 - ab_from)};
}

template <class T>
Tensor<T> ddim_transfer(const Tensor<T>& z, const Tensor<T>& eps, double ab_from, double ab_to) {
  const auto c = ddim_coefficients(ab_from, ab_to);
  return axpby(static_cast<T>(c.z_coef), z, static_cast<T>(c.eps_coef), eps);
}

// One denoising step from inference index `from` down to `to` (to < from).
template <class T>
Tensor<T> ddim_step(const Tensor<T>& z, const Tensor<T>& eps, int from, int to, const NoiseSchedule& sched) {
  if (to >= from) throw ConfigError("ddim_step requires to < from");
  return ddim_transfer(z, eps, sched.alpha_bar_at_index(from), sched.alpha_bar_at_index(to));
}

// One inversion step from inference index `from` up to `to` (to > from).
template <class T>
Tensor<T> ddim_invert_step(const Tensor<T>& z, const Tensor<T>& eps, int from, int to, const NoiseSchedule& sched) {
  if (to <= from) throw ConfigError("ddim_invert_step requires to > from");
  return ddim_transfer(z, eps, sched.alpha_bar_at_index(from), sched.alpha_bar_at_index(to));
}

// Differentiable DDIM step (gradients flow into both z and eps).
template <class T>
Var<T> ddim_step(Var<T> z, Var<T> eps, int from, int to, const NoiseSchedule& sched) {
  if (to >= from) throw ConfigError("ddim_step requires to < from");
  const auto c = ddim_coefficients(sched.alpha_bar_at_index(from), sched.alpha_bar_at_index(to));
  return ops::axpby(static_cast<T>(c.z_coef), z, static_cast<T>(c.eps_coef), eps);
}

// Clean-signal estimate (z - sqrt(1 - ab) * eps) / sqrt(ab).
template <class T>
Var<T> predict_x0(Var<T> z, Var<T> eps, double alpha_bar) {
  const double r = 1.0 / std::sqrt(alpha_bar);
  return ops::axpby(static_cast<T>(r), z, static_cast<T>(-r * std::sqrt(1.0 - alpha_bar)), eps);
}

// One-step DDPM renoising from index `from` to the next noisier index `to`, with
// alpha = ab_to / ab_from: sqrt(alpha) * z + sqrt(1 - alpha) * eps.
template <class T>
Tensor<T> ddpm_renoise(const Tensor<T>& z, const Tensor<T>& eps, int from, int to, const NoiseSchedule& sched) {
  if (to <= from) throw ConfigError("ddpm_renoise requires to > from");
  const double alpha = sched.alpha_bar_at_index(to) / sched.alpha_bar_at_index(from);
  return axpby(static_cast<T>(std::sqrt(alpha)), z, static_cast<T>(std::sqrt(1.0 - alpha)), eps);
}

}  // namespace draglora
