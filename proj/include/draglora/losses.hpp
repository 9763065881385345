#pragma once

// Drag (motion supervision), mask, and DDS objectives over the LoRA factors.

#include <cmath>
#include <vector>

#include "draglora/features.hpp"
#include "draglora/lora.hpp"
#include "draglora/rng.hpp"
#include "draglora/schedule.hpp"
#include "draglora/unet.hpp"

namespace draglora {

struct LossWeights {
  double lambda_mask = 0.1;
  double lambda_dds = 50.0;
  bool operator==(const LossWeights&) const = default;
};

// Fixed references for one drag session: F0 and z34_ref come from the initial
// latent under the reconstruction adapter.
template <class T>
struct DragTargets {
  Tensor<T> F0;
  std::vector<Point2> h0;
  Tensor<T> z34_ref;
  int r1 = 1;
  std::vector<Tensor<T>> ref_patches;  // sample_feature(F0, h0_i, r1), detached
};

template <class T>
DragTargets<T> make_drag_targets(Tensor<T> F0, std::vector<Point2> h0, Tensor<T> z34_ref, int r1) {
  if (r1 < 0) throw ConfigError("patch radius r1 must be >= 0");
  DragTargets<T> d{std::move(F0), std::move(h0), std::move(z34_ref), r1, {}};
  for (const auto& p : d.h0) d.ref_patches.push_back(sample_feature(d.F0, p, r1));
  return d;
}

// Sum over active points of the mean absolute difference between the live patch at
// n_i and the detached reference patch at h0_i.
template <class T>
Var<T> drag_loss(Var<T> F, const DragTargets<T>& targets, const std::vector<Point2>& n,
                 const std::vector<bool>* active = nullptr) {
  if (n.empty() || targets.h0.empty()) throw ConfigError("drag_loss needs at least one point");
  if (n.size() != targets.h0.size()) throw ConfigError("drag_loss: temporal target count does not match handles");
  Tape<T>& tape = *F.tape;
  Var<T> total = tape.constant(Tensor<T>({1}));
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (active && !(*active)[i]) continue;
    Var<T> live = ops::sample_patch(F, n[i], targets.r1);
    total = ops::add(total, ops::l1_to_const(live, targets.ref_patches[i], true));
  }
  return total;
}

// Mask given as 1 x H x W (broadcast over channels) or C x H x W; 1 marks editable pixels.
template <class T>
Tensor<T> background_weights(const Tensor<T>& M, const std::vector<int>& latent_shape) {
  const int C = latent_shape[0], H = latent_shape[1], W = latent_shape[2];
  if (M.rank() != 3 || M.dim(1) != H || M.dim(2) != W || (M.dim(0) != 1 && M.dim(0) != C)) {
    throw ShapeError("mask shape " + shape_str(M.shape) + " not broadcastable to latent " + shape_str(latent_shape));
  }
  Tensor<T> w(latent_shape);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) w.at(c, y, x) = T(1) - M.at(M.dim(0) == 1 ? 0 : c, y, x);
  return w;
}

// Sum-L1 of the background difference (z34 - z34_ref) * (1 - M).
template <class T>
Var<T> mask_loss(Var<T> z34, const Tensor<T>& z34_ref, const Tensor<T>& M) {
  require_same_shape(z34.value(), z34_ref, "mask_loss");
  return ops::weighted_l1(z34, z34_ref, background_weights(M, z34.shape()));
}

template <class T>
struct DdsSample {
  int t_prime = 0;
  Tensor<T> eps;
};

// t' uniform over [0.1 T, 0.9 T] with fresh Gaussian noise.
template <class T>
DdsSample<T> sample_dds(Rng& rng, const NoiseSchedule& sched, const std::vector<int>& shape) {
  const int lo = static_cast<int>(std::lround(0.1 * sched.train_steps));
  const int hi = static_cast<int>(std::lround(0.9 * sched.train_steps));
  DdsSample<T> s;
  s.t_prime = rng.uniform_int(lo, hi);
  s.eps = rng.normal_tensor<T>(shape);
  return s;
}

template <class T>
struct DdsTerm {
  Var<T> surrogate;          // <sg(eps_ori - eps_drag), z0_hat>
  Tensor<T> residual;        // eps_ori - eps_drag
};

// Surrogate whose gradient w.r.t. the adapter is (eps_ori - eps_drag) dz0_hat/d(dtheta).
// `eps35` must be the taped prediction at (z35, drag timestep) under the live adapter.
template <class T>
DdsTerm<T> dds_surrogate(Var<T> eps35, const Tensor<T>& z35, double alpha_bar, const Denoiser<T>& model,
                         const LoRAAdapter<T>& lora, int cls, const DdsSample<T>& s, const NoiseSchedule& sched) {
  Tape<T>& tape = *eps35.tape;
  Var<T> z0_hat = predict_x0(tape.constant(z35), eps35, alpha_bar);
  const Tensor<T> zt = ddpm_forward(z0_hat.value(), s.eps, s.t_prime, sched);
  const Tensor<T> eps_drag = predict_noise(model, &lora, zt, s.t_prime, cls);
  const Tensor<T> eps_ori = predict_noise<T>(model, nullptr, zt, s.t_prime, cls);
  Tensor<T> residual = axpby(T(1), eps_ori, T(-1), eps_drag);
  return {ops::dot_const(z0_hat, residual), std::move(residual)};
}

// Standalone DDS gradient for an adapter at latent z35 (drag index `drag_index`).
template <class T>
LoraGrads<T> dds_gradient(const Denoiser<T>& model, const LoRAAdapter<T>& lora, const Tensor<T>& z35, int cls,
                          const NoiseSchedule& sched, int drag_index, const LossWeights& w, const DdsSample<T>& s) {
  Tape<T> tape;
  auto bind = bind_adapter(tape, lora, true);
  auto out = model.forward(tape, tape.leaf(z35, false), sched.timestep(drag_index), cls, &bind);
  auto term = dds_surrogate(out.eps, z35, sched.alpha_bar_at_index(drag_index), model, lora, cls, s, sched);
  tape.backward(term.surrogate, static_cast<T>(w.lambda_dds));
  return collect_grads(bind);
}

template <class T>
struct StepLosses {
  double drag = 0.0;
  double mask = 0.0;
  double dds = 0.0;  // surrogate value (its level is arbitrary, only the gradient matters)
  double total = 0.0;
  LoraGrads<T> grads;
};

// Everything the combined objective needs from one taped forward at (z35, adapter).
template <class T>
struct LossInputs {
  const Denoiser<T>* model = nullptr;
  const LoRAAdapter<T>* lora = nullptr;
  const LoraBinding<T>* binding = nullptr;  // trainable binding used for `out`
  const DenoiserOutputs<T>* out = nullptr;
  const Tensor<T>* z35 = nullptr;
  const DragTargets<T>* targets = nullptr;
  const std::vector<Point2>* n = nullptr;
  const std::vector<bool>* active = nullptr;
  const Tensor<T>* mask = nullptr;
  const DdsSample<T>* dds = nullptr;
  const NoiseSchedule* sched = nullptr;
  int drag_index = 35;
  int cls = 0;
};

// L = L_drag + lambda_mask L_mask + lambda_dds L_DDS, backpropagated once. Terms with a
// zero weight are not built at all.
template <class T>
StepLosses<T> total_loss_step(const LossInputs<T>& in, const LossWeights& w) {
  Tape<T>& tape = *in.out->eps.tape;
  StepLosses<T> res;
  Var<T> total = drag_loss(in.out->features, *in.targets, *in.n, in.active);
  res.drag = static_cast<double>(total.value()[0]);
  if (w.lambda_mask != 0.0) {
    Var<T> z35v = tape.constant(*in.z35);
    Var<T> z34 = ddim_step(z35v, in.out->eps, in.drag_index, in.drag_index - 1, *in.sched);
    Var<T> lm = mask_loss(z34, in.targets->z34_ref, *in.mask);
    res.mask = static_cast<double>(lm.value()[0]);
    total = ops::axpby(T(1), total, static_cast<T>(w.lambda_mask), lm);
  }
  if (w.lambda_dds != 0.0) {
    auto term = dds_surrogate(in.out->eps, *in.z35, in.sched->alpha_bar_at_index(in.drag_index), *in.model, *in.lora,
                              in.cls, *in.dds, *in.sched);
    res.dds = static_cast<double>(term.surrogate.value()[0]);
    total = ops::axpby(T(1), total, static_cast<T>(w.lambda_dds), term.surrogate);
  }
  res.total = static_cast<double>(total.value()[0]);
  if (!std::isfinite(res.total)) return res;
  tape.backward(total);
  res.grads = collect_grads(*in.binding);
  return res;
}

}  // namespace draglora
