#pragma once

// Small nets and stub denoisers shared by the unit tests.

#include <cmath>
#include <string>
#include <vector>

#include "draglora/lora.hpp"
#include "draglora/schedule.hpp"
#include "draglora/unet.hpp"

namespace fixtures {

using namespace draglora;

inline ToyUNet<double> reduced_net(std::uint64_t seed = 5) {
  ToyUNet<double> net(reduced_unet_config(), seed);
  net.randomize(seed + 1, 0.3);
  // keep normalization scales near one so activations stay well conditioned
  for (auto& [name, t] : net.parameters())
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0)
      for (auto& v : t.data) v += 1.0;
  return net;
}

template <class T>
LoRAAdapter<T> random_adapter(const Denoiser<T>& net, int rank, std::uint64_t seed, double b_std = 0.3) {
  auto a = init_adapter(net, rank, seed);
  Rng rng(seed + 100);
  for (auto& [id, p] : a.layers)
    for (auto& v : p.B.data) v = static_cast<T>(b_std * rng.normal());
  return a;
}

// eps is a fixed tensor regardless of input; features and mid are the latent itself.
template <class T>
class ConstEpsStub final : public Denoiser<T> {
 public:
  explicit ConstEpsStub(Tensor<T> eps) : eps_(std::move(eps)) {}
  std::vector<int> latent_shape() const override { return eps_.shape; }
  std::vector<LoraSiteInfo> lora_sites() const override { return {}; }
  DenoiserOutputs<T> forward(Tape<T>& tape, Var<T> z, int, int, const LoraBinding<T>*) const override {
    return {tape.constant(eps_), z, z};
  }

 private:
  Tensor<T> eps_;
};

// Exact score of the point mass at x0: eps(z, t) = (z - sqrt(ab_t) x0) / sqrt(1 - ab_t).
template <class T>
class TrueScoreStub final : public Denoiser<T> {
 public:
  TrueScoreStub(Tensor<T> x0, const NoiseSchedule& sched) : x0_(std::move(x0)), sched_(sched) {}
  std::vector<int> latent_shape() const override { return x0_.shape; }
  std::vector<LoraSiteInfo> lora_sites() const override { return {}; }
  DenoiserOutputs<T> forward(Tape<T>& tape, Var<T> z, int t, int, const LoraBinding<T>*) const override {
    const double ab = sched_.alpha_bar_at_timestep(t);
    const double r = 1.0 / std::sqrt(1.0 - ab);
    Tensor<T> e = axpby(static_cast<T>(r), z.value(), static_cast<T>(-r * std::sqrt(ab)), x0_);
    return {tape.constant(std::move(e)), z, z};
  }

 private:
  Tensor<T> x0_;
  NoiseSchedule sched_;
};

// Features are a single-channel bump whose center moves `step_px` along +x on every
// forward call after the first.
template <class T>
class TranslatingStub final : public Denoiser<T> {
 public:
  TranslatingStub(int size, Point2 start, double step_px) : size_(size), start_(start), step_(step_px) {}
  std::vector<int> latent_shape() const override { return {1, size_, size_}; }
  std::vector<LoraSiteInfo> lora_sites() const override { return {}; }
  DenoiserOutputs<T> forward(Tape<T>& tape, Var<T> z, int, int, const LoraBinding<T>*) const override {
    const Point2 c{start_.x + step_ * calls_, start_.y};
    ++calls_;
    return {tape.constant(Tensor<T>(z.shape())), tape.constant(bump(c)), z};
  }
  Tensor<T> bump(Point2 c) const {
    Tensor<T> f({1, size_, size_});
    for (int y = 0; y < size_; ++y)
      for (int x = 0; x < size_; ++x) {
        const double d2 = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y);
        f.at(0, y, x) = static_cast<T>(std::exp(-d2 / 4.0));
      }
    return f;
  }
  int calls() const { return calls_; }

 private:
  int size_;
  Point2 start_;
  double step_;
  mutable int calls_ = 0;
};

}  // namespace fixtures
