#pragma once

// Input latent feature adaptation: a masked denoise-renoise cycle on the drag latent.

#include <cmath>
#include <functional>
#include <string>

#include "draglora/lora.hpp"
#include "draglora/losses.hpp"
#include "draglora/rng.hpp"
#include "draglora/schedule.hpp"

namespace draglora {

enum class IlfaVariant { sds, dds };

inline std::string to_string(IlfaVariant v) { return v == IlfaVariant::sds ? "sds" : "dds"; }

inline IlfaVariant parse_ilfa_variant(const std::string& s) {
  if (s == "sds") return IlfaVariant::sds;
  if (s == "dds") return IlfaVariant::dds;
  throw ConfigError("unknown ILFA variant '" + s + "' (expected sds|dds)");
}

struct IlfaConfig {
  IlfaVariant variant = IlfaVariant::sds;
  bool enabled = true;
  int burst_cap = 20;
  int budget = 160;
  bool operator==(const IlfaConfig&) const = default;
};

// Coefficients of the closed form u = z + c_rand * eps_rand - c_pred * eps_pred for a
// denoise step index -> index - 1 followed by DDPM renoising back to index.
struct IlfaCoefficients {
  double c_rand;
  double c_pred;
};

inline IlfaCoefficients ilfa_coefficients(const NoiseSchedule& sched, int index) {
  if (index < 1) throw ConfigError("ILFA needs a drag index >= 1");
  const double ab_t = sched.alpha_bar_at_index(index);
  const double alpha = ab_t / sched.alpha_bar_at_index(index - 1);
  return {std::sqrt(1.0 - alpha), std::sqrt(1.0 - ab_t) - std::sqrt(alpha - ab_t)};
}

// out = M ? u : z elementwise, so the background is copied bit for bit.
template <class T>
Tensor<T> masked_select(const Tensor<T>& u, const Tensor<T>& z, const Tensor<T>& M) {
  require_same_shape(u, z, "masked_select");
  const Tensor<T> fg = background_weights(M, z.shape);  // 1 - M
  Tensor<T> out = z;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (fg[i] == T(0)) out[i] = u[i];
  return out;
}

// One ILFA update of the drag latent. `eps_pred`, when given, must equal the adapted
// model's prediction at (z, index); it saves a forward pass.
template <class T>
Tensor<T> ilfa_step(const Tensor<T>& z, const Denoiser<T>& model, const LoRAAdapter<T>* lora, const Tensor<T>& M,
                    const NoiseSchedule& sched, const IlfaConfig& cfg, Rng& rng, int index, int cls,
                    const Tensor<T>* eps_pred = nullptr) {
  (void)background_weights(M, z.shape);
  const Tensor<T> eps = eps_pred ? *eps_pred : predict_noise(model, lora, z, sched.timestep(index), cls);
  Tensor<T> u;
  if (cfg.variant == IlfaVariant::sds) {
    const auto c = ilfa_coefficients(sched, index);
    const Tensor<T> eps_rand = rng.normal_tensor<T>(z.shape);
    u = z;
    for (std::size_t i = 0; i < u.size(); ++i) {
      u[i] = static_cast<T>(static_cast<double>(z[i]) + c.c_rand * static_cast<double>(eps_rand[i]) -
                            c.c_pred * static_cast<double>(eps[i]));
    }
  } else {
    const Tensor<T> prev = ddim_step(z, eps, index, index - 1, sched);
    const Tensor<T> eps_prev = predict_noise(model, lora, prev, sched.timestep(index - 1), cls);
    u = ddim_invert_step(prev, eps_prev, index - 1, index, sched);
  }
  return masked_select(u, z, M);
}

// Tracking feedback after each burst iteration.
struct BurstProbe {
  double max_minD = 0.0;
  bool all_reached = false;
};

template <class T>
struct BurstResult {
  Tensor<T> z;
  int iterations = 0;
  bool cap_hit = false;
};

// Repeats {ilfa_step; forward; track} while max minD < d2 and some point is unreached,
// at most `cap` times. `track` receives the new latent, its prediction, and its
// features, and reports the tracking outcome.
template <class T>
BurstResult<T> ilfa_burst(Tensor<T> z, const Denoiser<T>& model, const LoRAAdapter<T>* lora, const Tensor<T>& M,
                          const NoiseSchedule& sched, const IlfaConfig& cfg, Rng& rng, int index, int cls, double d2,
                          int cap, BurstProbe probe, Tensor<T> eps,
                          const std::function<BurstProbe(const Tensor<T>& z, const Tensor<T>& eps, const Tensor<T>& F)>& track) {
  BurstResult<T> res;
  while (probe.max_minD < d2 && !probe.all_reached) {
    if (res.iterations >= cap) {
      res.cap_hit = true;
      break;
    }
    z = ilfa_step(z, model, lora, M, sched, cfg, rng, index, cls, eps.empty() ? nullptr : &eps);
    Tape<T> tape;
    NoGradGuard<T> guard(tape);
    LoraBinding<T> b;
    if (lora) b = bind_adapter(tape, *lora, false);
    auto out = model.forward(tape, tape.leaf(z, false), sched.timestep(index), cls, lora ? &b : nullptr);
    eps = out.eps.value();
    probe = track(z, eps, out.features.value());
    ++res.iterations;
  }
  res.z = std::move(z);
  return res;
}

}  // namespace draglora
