#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "draglora/rng.hpp"
#include "draglora/schedule.hpp"
#include "draglora/unet.hpp"

namespace draglora {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
struct LoraPair {
  Tensor<T> A;  // rank x d_in
  Tensor<T> B;  // d_out x rank
  bool operator==(const LoraPair&) const = default;
};

// Online-trainable low-rank deltas keyed by projection id ("mid.attn.q", ...).
template <class T>
struct LoRAAdapter {
  int rank = 0;
  double scale = 1.0;
  std::map<std::string, LoraPair<T>> layers;

  bool operator==(const LoRAAdapter&) const = default;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [id, p] : layers) n += p.A.size() + p.B.size();
    return n;
  }

  bool is_zero_delta() const {
    for (const auto& [id, p] : layers)
      for (T v : p.B.data)
        if (v != T(0)) return false;
    return true;
  }

  template <class U>
  LoRAAdapter<U> cast() const {
    LoRAAdapter<U> out;
    out.rank = rank;
    out.scale = scale;
    for (const auto& [id, p] : layers) out.layers[id] = {p.A.template cast<U>(), p.B.template cast<U>()};
    return out;
  }
};

// Gradients share the adapter's layout.
template <class T>
using LoraGrads = std::map<std::string, LoraPair<T>>;

// A ~ U(-1/sqrt(d_in), 1/sqrt(d_in)), B = 0: the initial delta is exactly zero.
template <class T>
LoRAAdapter<T> init_adapter(const Denoiser<T>& model, int rank, std::uint64_t seed, double scale = 1.0) {
  if (rank < 1) throw ConfigError("LoRA rank must be >= 1");
  LoRAAdapter<T> a;
  a.rank = rank;
  a.scale = scale;
  Rng rng(seed);
  for (const auto& site : model.lora_sites()) {
    if (rank > std::min(site.d_in, site.d_out)) {
      throw ConfigError("LoRA rank " + std::to_string(rank) + " exceeds dimension of " + site.id);
    }
    LoraPair<T> p{Tensor<T>({rank, site.d_in}), Tensor<T>({site.d_out, rank})};
    const double bound = 1.0 / std::sqrt(static_cast<double>(site.d_in));
    for (auto& v : p.A.data) v = static_cast<T>(rng.uniform(-bound, bound));
    a.layers.emplace(site.id, std::move(p));
  }
  return a;
}

// Deep copy (adapters are plain values; this names the intent at call sites).
template <class T>
LoRAAdapter<T> clone_from(const LoRAAdapter<T>& rec) {
  return rec;
}

template <class T>
LoraGrads<T> zero_grads_like(const LoRAAdapter<T>& a) {
  LoraGrads<T> g;
  for (const auto& [id, p] : a.layers) g[id] = {zeros_like(p.A), zeros_like(p.B)};
  return g;
}

// Binds the adapter's factors onto `tape`; with `trainable` they become gradient leaves.
template <class T>
LoraBinding<T> bind_adapter(Tape<T>& tape, const LoRAAdapter<T>& a, bool trainable) {
  LoraBinding<T> b;
  for (const auto& [id, p] : a.layers) {
    b.sites[id] = {tape.leaf(p.A, trainable), tape.leaf(p.B, trainable), static_cast<T>(a.scale)};
  }
  return b;
}

template <class T>
LoraGrads<T> collect_grads(const LoraBinding<T>& b) {
  LoraGrads<T> g;
  for (const auto& [id, s] : b.sites) g[id] = {s.A.grad(), s.B.grad()};
  return g;
}

template <class T>
void add_grads(LoraGrads<T>& acc, const LoraGrads<T>& g) {
  for (auto& [id, p] : acc) {
    const auto& q = g.at(id);
    for (std::size_t i = 0; i < p.A.size(); ++i) p.A[i] += q.A[i];
    for (std::size_t i = 0; i < p.B.size(); ++i) p.B[i] += q.B[i];
  }
}

// Noise prediction with an optional adapter, no gradient recording.
template <class T>
Tensor<T> predict_noise(const Denoiser<T>& model, const LoRAAdapter<T>* lora, const Tensor<T>& z, int timestep, int cls) {
  Tape<T> tape;
  NoGradGuard<T> guard(tape);
  LoraBinding<T> b;
  if (lora) b = bind_adapter(tape, *lora, false);
  return model.forward(tape, tape.leaf(z, false), timestep, cls, lora ? &b : nullptr).eps.value();
}

// Effective weight W + scale * B * A for one projection.
template <class T>
Tensor<T> merged_weight(const Tensor<T>& W, const LoraPair<T>& p, double scale) {
  Tensor<T> out = W;
  const int dout = W.dim(0), din = W.dim(1), r = p.A.dim(0);
  for (int i = 0; i < dout; ++i)
    for (int j = 0; j < din; ++j) {
      double s = 0.0;
      for (int k = 0; k < r; ++k)
        s += static_cast<double>(p.B[static_cast<std::size_t>(i * r + k)]) * static_cast<double>(p.A[static_cast<std::size_t>(k * din + j)]);
      out[static_cast<std::size_t>(i * din + j)] += static_cast<T>(scale * s);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig cfg;
  long step = 0;
  LoraGrads<T> m;
  LoraGrads<T> v;
};

template <class T>
AdamState<T> make_adam(const LoRAAdapter<T>& a, AdamConfig cfg) {
  AdamState<T> s;
  s.cfg = cfg;
  s.m = zero_grads_like(a);
  s.v = zero_grads_like(a);
  return s;
}

namespace detail {

template <class T>
void adam_update(Tensor<T>& param, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v, const AdamConfig& c, long step) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double gi = static_cast<double>(g[i]);
    const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * gi;
    const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) - c.lr * mhat / (std::sqrt(vhat) + c.eps));
  }
}

}  // namespace detail

// Standard bias-corrected Adam step over every adapter tensor.
template <class T>
void adam_step(LoRAAdapter<T>& adapter, const LoraGrads<T>& grads, AdamState<T>& state) {
  if (grads.size() != adapter.layers.size()) throw ConfigError("adam_step: gradient keys do not match adapter");
  for (const auto& [id, g] : grads) {
    if (!adapter.layers.count(id) || !state.m.count(id)) throw ConfigError("adam_step: unknown layer " + id);
  }
  ++state.step;
  for (auto& [id, p] : adapter.layers) {
    const auto& g = grads.at(id);
    require_same_shape(p.A, g.A, "adam_step A");
    require_same_shape(p.B, g.B, "adam_step B");
    detail::adam_update(p.A, g.A, state.m[id].A, state.v[id].A, state.cfg, state.step);
    detail::adam_update(p.B, g.B, state.m[id].B, state.v[id].B, state.cfg, state.step);
  }
}

// ---------------------------------------------------------------------------
// Reconstruction LoRA

struct ReconConfig {
  int steps = 80;
  double lr = 5e-4;
  int rank = 16;
  int validation_draws = 8;
};

struct ReconReport {
  double validation_before = 0.0;
  double validation_after = 0.0;
  std::vector<double> train_losses;
};

template <class T>
double denoising_loss(const Denoiser<T>& model, const LoRAAdapter<T>& lora, const Tensor<T>& image, int cls,
                      int timestep, const Tensor<T>& eps, const NoiseSchedule& sched) {
  const Tensor<T> zt = ddpm_forward(image, eps, timestep, sched);
  const Tensor<T> pred = predict_noise(model, &lora, zt, timestep, cls);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(eps[i]);
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

// Fits an adapter to one clean image with the standard denoising objective. The base
// model is never modified. A fixed validation set of (t, eps) draws measures progress.
template <class T>
LoRAAdapter<T> train_reconstruction_lora(const Denoiser<T>& model, const Tensor<T>& image, int cls,
                                         const NoiseSchedule& sched, const ReconConfig& cfg, std::uint64_t seed,
                                         ReconReport* report = nullptr) {
  if (image.shape != model.latent_shape()) throw ShapeError("reconstruction image shape does not match model");
  Rng root(seed);
  LoRAAdapter<T> lora = init_adapter(model, cfg.rank, root.fork(1).seed());
  AdamState<T> adam = make_adam(lora, AdamConfig{cfg.lr});

  std::vector<std::pair<int, Tensor<T>>> validation;
  if (report) {
    Rng vr = root.fork(2);
    for (int i = 0; i < cfg.validation_draws; ++i) {
      const int t = vr.uniform_int(0, sched.train_steps - 1);
      validation.emplace_back(t, vr.normal_tensor<T>(image.shape));
    }
  }
  auto validate = [&] {
    double s = 0.0;
    for (const auto& [t, eps] : validation) s += denoising_loss(model, lora, image, cls, t, eps, sched);
    return validation.empty() ? 0.0 : s / static_cast<double>(validation.size());
  };
  if (report) report->validation_before = validate();

  Rng tr = root.fork(3);
  for (int step = 0; step < cfg.steps; ++step) {
    const int t = tr.uniform_int(0, sched.train_steps - 1);
    const Tensor<T> eps = tr.normal_tensor<T>(image.shape);
    const Tensor<T> zt = ddpm_forward(image, eps, t, sched);
    Tape<T> tape;
    LoraBinding<T> bind = bind_adapter(tape, lora, true);
    auto out = model.forward(tape, tape.leaf(zt, false), t, cls, &bind);
    Var<T> loss = ops::mse_to_const(out.eps, eps);
    const double lv = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(lv)) {
      throw TrainingError("reconstruction LoRA diverged at step " + std::to_string(step) + " (t=" + std::to_string(t) + ")");
    }
    if (report) report->train_losses.push_back(lv);
    tape.backward(loss);
    adam_step(lora, collect_grads(bind), adam);
  }
  if (report) report->validation_after = validate();
  return lora;
}

}  // namespace draglora
