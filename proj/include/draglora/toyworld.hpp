#pragma once

// Procedural shape scenes and the toy diffusion training loop that produces the
// reference checkpoint.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "draglora/checkpoint.hpp"
#include "draglora/lora.hpp"
#include "draglora/rng.hpp"
#include "draglora/schedule.hpp"
#include "draglora/unet.hpp"

namespace draglora {

enum class ShapeClass : int { disc = 0, square = 1, triangle = 2 };

inline const char* shape_name(ShapeClass c) {
  switch (c) {
    case ShapeClass::disc: return "disc";
    case ShapeClass::square: return "square";
    case ShapeClass::triangle: return "triangle";
  }
  return "?";
}

struct SceneSpec {
  int cls = 0;
  double cx = 16.0;
  double cy = 16.0;
  double size = 6.0;  // disc radius, square half-side, triangle circumradius
  std::array<double, 3> fill{0.8, -0.6, -0.6};
  std::array<double, 3> background{-0.2, 0.0, 0.2};
  std::uint64_t texture_seed = 0;
  double texture_amp = 0.15;
  int image_size = 32;

  bool operator==(const SceneSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = {{"cls", s.cls},   {"cx", s.cx},           {"cy", s.cy},
       {"size", s.size}, {"fill", s.fill},       {"background", s.background},
       {"texture_seed", s.texture_seed}, {"texture_amp", s.texture_amp}, {"image_size", s.image_size}};
}

inline void from_json(const nlohmann::json& j, SceneSpec& s) {
  SceneSpec d;
  s.cls = j.value("cls", d.cls);
  s.cx = j.value("cx", d.cx);
  s.cy = j.value("cy", d.cy);
  s.size = j.value("size", d.size);
  s.fill = j.value("fill", d.fill);
  s.background = j.value("background", d.background);
  s.texture_seed = j.value("texture_seed", d.texture_seed);
  s.texture_amp = j.value("texture_amp", d.texture_amp);
  s.image_size = j.value("image_size", d.image_size);
}

// Half-extent of the shape's bounding box around its center.
inline double shape_extent(const SceneSpec& s) { return s.size; }

inline bool scene_in_frame(const SceneSpec& s, double margin = 2.0) {
  const double e = shape_extent(s);
  const double lo = margin, hi = s.image_size - 1 - margin;
  return s.cx - e >= lo && s.cx + e <= hi && s.cy - e >= lo && s.cy + e <= hi;
}

inline bool shape_contains(const SceneSpec& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  switch (static_cast<ShapeClass>(s.cls)) {
    case ShapeClass::disc: return dx * dx + dy * dy <= s.size * s.size;
    case ShapeClass::square: return std::abs(dx) <= s.size && std::abs(dy) <= s.size;
    case ShapeClass::triangle: {
      // Apex up; vertices on the circumcircle at 90, 210, 330 degrees.
      const double r = s.size;
      const double ax = 0, ay = -r;
      const double bx = -r * std::sqrt(3.0) / 2, by = r / 2;
      const double cx = r * std::sqrt(3.0) / 2, cy = r / 2;
      auto side = [](double px, double py, double qx, double qy, double x0, double y0) {
        return (qx - px) * (y0 - py) - (qy - py) * (x0 - px);
      };
      const double s1 = side(ax, ay, bx, by, dx, dy), s2 = side(bx, by, cx, cy, dx, dy), s3 = side(cx, cy, ax, ay, dx, dy);
      return (s1 <= 0 && s2 <= 0 && s3 <= 0) || (s1 >= 0 && s2 >= 0 && s3 >= 0);
    }
  }
  return false;
}

// Renders a 3 x S x S image in [-1, 1]. Pixel (x, y) samples the continuous scene at
// integer coordinates; shape coverage uses 4x4 supersampling for soft edges.
inline Tensor<float> render_scene(const SceneSpec& s) {
  const int S = s.image_size;
  Tensor<float> img({3, S, S});
  Rng rng(s.texture_seed);
  struct Wave { double fx, fy, phase; std::array<double, 3> amp; };
  std::array<Wave, 3> waves;
  for (auto& w : waves) {
    const double f = rng.uniform(0.08, 0.35), th = rng.uniform(0.0, 2 * M_PI);
    w = {f * std::cos(th), f * std::sin(th), rng.uniform(0.0, 2 * M_PI), {}};
    for (auto& a : w.amp) a = s.texture_amp * rng.uniform(-1.0, 1.0);
  }
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      int inside = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) inside += shape_contains(s, x - 0.375 + 0.25 * sx, y - 0.375 + 0.25 * sy);
      const double cov = inside / 16.0;
      for (int c = 0; c < 3; ++c) {
        double bg = s.background[static_cast<std::size_t>(c)];
        for (const auto& w : waves) bg += w.amp[static_cast<std::size_t>(c)] * std::sin(w.fx * x + w.fy * y + w.phase);
        const double v = cov >= 1.0 ? s.fill[static_cast<std::size_t>(c)] : (1.0 - cov) * bg + cov * s.fill[static_cast<std::size_t>(c)];
        img.at(c, y, x) = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }
  }
  return img;
}

// Binary mask (1 x S x S) covering the shape dilated by `pad` pixels (bounding-box based).
inline Tensor<float> scene_mask(const SceneSpec& s, double pad) {
  const int S = s.image_size;
  Tensor<float> m({1, S, S});
  const double e = shape_extent(s) + pad;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      if (std::abs(x - s.cx) <= e && std::abs(y - s.cy) <= e) m.at(0, y, x) = 1.0f;
  return m;
}

inline SceneSpec random_scene(Rng& rng, int image_size = 32) {
  SceneSpec s;
  s.image_size = image_size;
  s.cls = rng.uniform_int(0, 2);
  s.size = rng.uniform(4.0, 7.0);
  const double lo = 2.0 + s.size, hi = image_size - 3.0 - s.size;
  s.cx = rng.uniform(lo, hi);
  s.cy = rng.uniform(lo, hi);
  for (int c = 0; c < 3; ++c) s.background[static_cast<std::size_t>(c)] = rng.uniform(-0.5, 0.5);
  // Fill colors stay well separated from the background mean.
  do {
    for (int c = 0; c < 3; ++c) s.fill[static_cast<std::size_t>(c)] = rng.uniform(-0.9, 0.9);
  } while (std::max({std::abs(s.fill[0] - s.background[0]), std::abs(s.fill[1] - s.background[1]),
                     std::abs(s.fill[2] - s.background[2])}) < 0.6);
  s.texture_seed = rng.next_u64();
  s.texture_amp = rng.uniform(0.05, 0.2);
  return s;
}

struct Sample {
  Tensor<float> image;
  int cls = 0;
  SceneSpec spec;
};

inline std::vector<Sample> gen_dataset(std::uint64_t seed, int n, int image_size = 32) {
  if (n < 1) throw ConfigError("dataset size must be >= 1");
  Rng rng(seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SceneSpec s = random_scene(rng, image_size);
    out.push_back({render_scene(s), s.cls, s});
  }
  return out;
}

inline std::string dataset_hash(const std::vector<Sample>& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& s : data) {
    h = fnv1a(s.image.data.data(), s.image.size() * sizeof(float), h);
    h = fnv1a(&s.cls, sizeof s.cls, h);
  }
  return hex64(h);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int steps = 6000;
  int batch = 8;
  double lr = 2e-3;
  int warmup = 200;
  double min_lr_frac = 0.05;
  double clip_norm = 1.0;
  int eval_every = 250;
  int val_size = 32;
  std::uint64_t seed = 0;
};

struct CurvePoint {
  int step = 0;
  double train_ema = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<CurvePoint> curve;
  double initial_ema = 0.0;
  double final_ema = 0.0;
  bool diverged = false;
  std::string diagnostic;
};

inline nlohmann::json curve_json(const TrainResult& r) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : r.curve) pts.push_back({{"step", p.step}, {"train_ema", p.train_ema}, {"val_loss", p.val_loss}, {"lr", p.lr}});
  return {{"initial_ema", r.initial_ema}, {"final_ema", r.final_ema}, {"diverged", r.diverged}, {"points", pts}};
}

inline double lr_at(const TrainConfig& c, int step) {
  if (step < c.warmup) return c.lr * (step + 1) / c.warmup;
  const double p = c.steps <= c.warmup ? 1.0 : static_cast<double>(step - c.warmup) / (c.steps - c.warmup);
  return c.lr * (c.min_lr_frac + (1.0 - c.min_lr_frac) * 0.5 * (1.0 + std::cos(M_PI * p)));
}

template <class T>
double validation_loss(const ToyUNet<T>& model, const std::vector<Sample>& data,
                       const std::vector<std::tuple<int, int, Tensor<T>>>& val, const NoiseSchedule& sched) {
  double s = 0.0;
  for (const auto& [idx, t, eps] : val) {
    const auto& smp = data[static_cast<std::size_t>(idx)];
    const Tensor<T> zt = ddpm_forward(smp.image.template cast<T>(), eps, t, sched);
    const Tensor<T> pred = predict_noise<T>(model, nullptr, zt, t, smp.cls);
    double e = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) e += std::pow(static_cast<double>(pred[i] - eps[i]), 2);
    s += e / static_cast<double>(pred.size());
  }
  return s / static_cast<double>(val.size());
}

using TrainProgress = std::function<void(const CurvePoint&, const ToyUNet<float>&)>;

// Adam on the standard epsilon-prediction loss with warmup + cosine decay and global
// gradient clipping. Fully deterministic for a given seed (single thread, fixed order).
inline TrainResult train_toy_model(const std::vector<Sample>& data, const ScheduleParams& sp, const UNetConfig& arch,
                                   const TrainConfig& cfg, const TrainProgress& progress = {}) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  const NoiseSchedule sched = sp.build();
  Rng root(cfg.seed);
  ToyUNet<float> model(arch, root.fork(1).seed());

  std::vector<std::tuple<int, int, Tensor<float>>> val;
  {
    Rng vr = root.fork(2);
    for (int i = 0; i < cfg.val_size; ++i) {
      const int idx = vr.uniform_int(0, static_cast<int>(data.size()) - 1);
      const int t = vr.uniform_int(0, sched.train_steps - 1);
      val.emplace_back(idx, t, vr.normal_tensor<float>(data[0].image.shape));
    }
  }

  using PM = ToyUNet<float>::ParamMap;
  PM m, v;
  for (const auto& [n, t] : model.parameters()) {
    m[n] = zeros_like(t);
    v[n] = zeros_like(t);
  }

  TrainResult res;
  const std::string dhash = dataset_hash(data);
  Rng tr = root.fork(3);
  double ema = 0.0;
  PM last_good = model.parameters();

  for (int step = 0; step < cfg.steps; ++step) {
    PM grads;
    for (const auto& [n, t] : model.parameters()) grads[n] = zeros_like(t);
    double loss_sum = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& smp = data[static_cast<std::size_t>(tr.uniform_int(0, static_cast<int>(data.size()) - 1))];
      const int t = tr.uniform_int(0, sched.train_steps - 1);
      const Tensor<float> eps = tr.normal_tensor<float>(smp.image.shape);
      const Tensor<float> zt = ddpm_forward(smp.image, eps, t, sched);
      Tape<float> tape;
      std::map<std::string, Var<float>> bound;
      auto out = model.forward_trainable(tape, tape.leaf(zt, false), t, smp.cls, bound);
      Var<float> loss = ops::mse_to_const(out.eps, eps);
      loss_sum += static_cast<double>(loss.value()[0]);
      tape.backward(loss);
      for (auto& [n, g] : grads) {
        const auto& gb = bound.at(n).grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gb[i];
      }
    }
    const double loss = loss_sum / cfg.batch;
    if (!std::isfinite(loss)) {
      model.load_parameters(last_good);
      res.diverged = true;
      res.diagnostic = "non-finite training loss at step " + std::to_string(step);
      break;
    }
    last_good = model.parameters();
    double gnorm2 = 0.0;
    for (auto& [n, g] : grads)
      for (auto& x : g.data) {
        x /= static_cast<float>(cfg.batch);
        gnorm2 += static_cast<double>(x) * x;
      }
    const double clip = cfg.clip_norm > 0 && std::sqrt(gnorm2) > cfg.clip_norm ? cfg.clip_norm / std::sqrt(gnorm2) : 1.0;
    AdamConfig ac;
    ac.lr = lr_at(cfg, step);
    for (auto& [n, p] : model.parameters()) {
      Tensor<float>& g = grads.at(n);
      if (clip != 1.0)
        for (auto& x : g.data) x = static_cast<float>(x * clip);
      detail::adam_update(p, g, m.at(n), v.at(n), ac, step + 1);
    }
    ema = step == 0 ? loss : 0.98 * ema + 0.02 * loss;
    if (step == 0) res.initial_ema = ema;
    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
      CurvePoint cp{step + 1, ema, validation_loss(model, data, val, sched), ac.lr};
      res.curve.push_back(cp);
      if (progress) progress(cp, model);
    }
  }
  res.final_ema = ema;
  res.checkpoint = make_checkpoint(model, sp, cfg.seed, dhash);
  res.checkpoint.extra = {{"train_steps", cfg.steps}, {"batch", cfg.batch}, {"lr", cfg.lr}, {"dataset_size", data.size()}};
  return res;
}

}  // namespace draglora
