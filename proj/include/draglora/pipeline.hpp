#pragma once

// Drag session lifecycle: setup (reconstruction adapter, inversion, references), the
// adaptive two-mode update loop, final denoising, and the drag-back protocol.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "draglora/checkpoint.hpp"
#include "draglora/ilfa.hpp"
#include "draglora/log.hpp"
#include "draglora/lora.hpp"
#include "draglora/losses.hpp"
#include "draglora/metrics.hpp"
#include "draglora/records.hpp"
#include "draglora/schedule.hpp"
#include "draglora/tracking.hpp"
#include "draglora/unet.hpp"

namespace draglora {

class SessionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  int K = 80;
  int k_ini = 10;
  double l1 = 1.0;
  double l2 = 1.4;
  double d1 = 1.0;
  double d2 = 1.3;
  double lr_drag = 1e-4;
  LossWeights weights;
  TrackConfig track;
  IlfaConfig ilfa;
  bool use_ass = true;
  int drag_index = 35;
  int lora_rank = 16;
  ReconConfig recon;
  std::uint64_t seed = 0;

  void validate(const NoiseSchedule* sched = nullptr) const {
    if (!(d1 <= d2)) throw ConfigError("config: require d1 <= d2");
    if (!(l1 < l2)) throw ConfigError("config: require l1 < l2");
    if (!(K > k_ini && k_ini >= 0)) throw ConfigError("config: require K > k_ini >= 0");
    if (lr_drag <= 0) throw ConfigError("config: lr_drag must be positive");
    if (weights.lambda_mask < 0 || weights.lambda_dds < 0) throw ConfigError("config: loss weights must be non-negative");
    if (ilfa.burst_cap < 0 || ilfa.budget < 0) throw ConfigError("config: ILFA caps must be non-negative");
    if (lora_rank < 1) throw ConfigError("config: lora_rank must be >= 1");
    if (recon.steps < 0) throw ConfigError("config: recon steps must be >= 0");
    track.validate();
    if (drag_index < 1 || (sched && drag_index > sched->inference_steps)) throw ConfigError("config: drag_index out of range");
  }
  bool operator==(const PipelineConfig& o) const {
    return K == o.K && k_ini == o.k_ini && l1 == o.l1 && l2 == o.l2 && d1 == o.d1 && d2 == o.d2 && lr_drag == o.lr_drag &&
           weights == o.weights && track == o.track && ilfa == o.ilfa && use_ass == o.use_ass &&
           drag_index == o.drag_index && lora_rank == o.lora_rank && recon.steps == o.recon.steps &&
           recon.lr == o.recon.lr && seed == o.seed;
  }
};

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  return {{"K", c.K},
          {"k_ini", c.k_ini},
          {"l1", c.l1},
          {"l2", c.l2},
          {"d1", c.d1},
          {"d2", c.d2},
          {"lr_drag", c.lr_drag},
          {"lambda_mask", c.weights.lambda_mask},
          {"lambda_dds", c.weights.lambda_dds},
          {"track",
           {{"r1", c.track.r1},
            {"r2", c.track.r2},
            {"strategy", to_string(c.track.strategy)},
            {"d2_retreat", c.track.d2_retreat},
            {"retreat", c.track.retreat},
            {"angle_limit", c.track.angle_limit},
            {"linear_samples", c.track.linear_samples}}},
          {"ilfa",
           {{"variant", to_string(c.ilfa.variant)},
            {"enabled", c.ilfa.enabled},
            {"burst_cap", c.ilfa.burst_cap},
            {"budget", c.ilfa.budget}}},
          {"use_ass", c.use_ass},
          {"drag_index", c.drag_index},
          {"lora_rank", c.lora_rank},
          {"recon_steps", c.recon.steps},
          {"recon_lr", c.recon.lr},
          {"seed", c.seed}};
}

// Applies the keys present in `j` on top of `c`; unknown keys are rejected.
inline PipelineConfig apply_config_json(PipelineConfig c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config overrides must be a JSON object");
  auto reject = [](const std::string& path) { throw ConfigError("unknown config key '" + path + "'"); };
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "K") c.K = v.get<int>();
      else if (key == "k_ini") c.k_ini = v.get<int>();
      else if (key == "l1") c.l1 = v.get<double>();
      else if (key == "l2") c.l2 = v.get<double>();
      else if (key == "d1") c.d1 = v.get<double>();
      else if (key == "d2") c.d2 = v.get<double>();
      else if (key == "lr_drag") c.lr_drag = v.get<double>();
      else if (key == "lambda_mask") c.weights.lambda_mask = v.get<double>();
      else if (key == "lambda_dds") c.weights.lambda_dds = v.get<double>();
      else if (key == "use_ass") c.use_ass = v.get<bool>();
      else if (key == "drag_index") c.drag_index = v.get<int>();
      else if (key == "lora_rank") c.lora_rank = v.get<int>();
      else if (key == "recon_steps") c.recon.steps = v.get<int>();
      else if (key == "recon_lr") c.recon.lr = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "track") {
        for (const auto& [tk, tv] : v.items()) {
          if (tk == "r1") c.track.r1 = tv.get<int>();
          else if (tk == "r2") c.track.r2 = tv.get<int>();
          else if (tk == "strategy") c.track.strategy = parse_strategy(tv.get<std::string>());
          else if (tk == "d2_retreat") c.track.d2_retreat = tv.get<double>();
          else if (tk == "retreat") c.track.retreat = tv.get<bool>();
          else if (tk == "angle_limit") c.track.angle_limit = tv.get<double>();
          else if (tk == "linear_samples") c.track.linear_samples = tv.get<int>();
          else reject("track." + tk);
        }
      } else if (key == "ilfa") {
        for (const auto& [ik, iv] : v.items()) {
          if (ik == "variant") c.ilfa.variant = parse_ilfa_variant(iv.get<std::string>());
          else if (ik == "enabled") c.ilfa.enabled = iv.get<bool>();
          else if (ik == "burst_cap") c.ilfa.burst_cap = iv.get<int>();
          else if (ik == "budget") c.ilfa.budget = iv.get<int>();
          else reject("ilfa." + ik);
        }
      } else {
        reject(key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
  return c;
}

// The no-DDS / no-ILFA / no-ASS reference configuration with plain neighborhood tracking.
inline PipelineConfig ablation_baseline(PipelineConfig c) {
  c.weights.lambda_dds = 0.0;
  c.ilfa.enabled = false;
  c.use_ass = false;
  c.track.strategy = TrackStrategy::neighborhood;
  c.track.retreat = false;
  return c;
}

enum class SessionStatus { idle, running, done, failed };

inline std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::idle: return "idle";
    case SessionStatus::running: return "running";
    case SessionStatus::done: return "done";
    case SessionStatus::failed: return "failed";
  }
  return "?";
}

struct DragPoint {
  Point2 p;
  Point2 g;
};

template <class T>
struct DragSession {
  std::string id;
  PipelineConfig cfg;
  Tensor<T> image;
  Tensor<T> mask;  // 1 x H x W
  int cls = 0;
  std::vector<PointPair> pairs;
  std::vector<double> minD;
  LoRAAdapter<T> lora_rec;
  LoRAAdapter<T> lora;
  AdamState<T> adam;
  Tensor<T> z;        // live drag latent
  Tensor<T> z35_ref;  // inverted latent at the drag index
  DragTargets<T> targets;
  int k = 0;
  int ilfa_only_steps = 0;
  std::vector<StepRecord> records;
  Rng rng_dds;
  Rng rng_ilfa;
  SessionStatus status = SessionStatus::idle;
  std::string failure;
  double recon_val_before = 0.0;
  double recon_val_after = 0.0;

  double mean_dT() const {
    double s = 0.0;
    for (const auto& p : pairs) s += distance(p.h, p.g);
    return pairs.empty() ? 0.0 : s / static_cast<double>(pairs.size());
  }
  double initial_mean_dT() const {
    double s = 0.0;
    for (const auto& p : pairs) s += distance(p.p, p.g);
    return pairs.empty() ? 0.0 : s / static_cast<double>(pairs.size());
  }
  int doo_records() const {
    return static_cast<int>(std::count_if(records.begin(), records.end(), [](const StepRecord& r) { return r.mode == StepMode::doo_ilfa; }));
  }
  int ilfa_records() const { return static_cast<int>(records.size()) - doo_records(); }
};

// Hash of the evolving session state (latent, adapter, handles).
template <class T>
std::string session_state_hash(const DragSession<T>& s) {
  std::uint64_t h = fnv1a(s.z.data.data(), s.z.size() * sizeof(T));
  for (const auto& [id, p] : s.lora.layers) {
    h = fnv1a(p.A.data.data(), p.A.size() * sizeof(T), h);
    h = fnv1a(p.B.data.data(), p.B.size() * sizeof(T), h);
  }
  for (const auto& pp : s.pairs) {
    h = fnv1a(&pp.h.x, sizeof(double), h);
    h = fnv1a(&pp.h.y, sizeof(double), h);
  }
  h = fnv1a(s.targets.F0.data.data(), s.targets.F0.size() * sizeof(T), h);
  return hex64(h);
}

// DDIM inversion trajectory z_0 .. z_target. Each step evaluates the model on the
// current latent at the next (noisier) timestep.
template <class T>
std::vector<Tensor<T>> invert_to(const Tensor<T>& z0, const Denoiser<T>& model, const LoRAAdapter<T>* lora,
                                 const NoiseSchedule& sched, int target, int cls) {
  sched.check_index(target);
  std::vector<Tensor<T>> traj{z0};
  for (int s = 0; s < target; ++s) {
    const Tensor<T> eps = predict_noise(model, lora, traj.back(), sched.timestep(s + 1), cls);
    traj.push_back(ddim_invert_step(traj.back(), eps, s, s + 1, sched));
  }
  return traj;
}

// Deterministic DDIM denoising from index `from` down to `to`.
template <class T>
Tensor<T> denoise(Tensor<T> z, const Denoiser<T>& model, const LoRAAdapter<T>* lora, const NoiseSchedule& sched,
                  int from, int to, int cls) {
  for (int s = from; s > to; --s) {
    const Tensor<T> eps = predict_noise(model, lora, z, sched.timestep(s), cls);
    z = ddim_step(z, eps, s, s - 1, sched);
  }
  return z;
}

template <class T>
void validate_session_inputs(const Tensor<T>& image, const Tensor<T>& mask, const std::vector<DragPoint>& points,
                             const Denoiser<T>& model) {
  if (image.shape != model.latent_shape()) {
    throw ShapeError("image shape " + shape_str(image.shape) + " does not match model " + shape_str(model.latent_shape()));
  }
  if (!all_finite(image)) throw ConfigError("image contains non-finite values");
  if (points.empty()) throw ConfigError("points: at least one point pair is required");
  const int H = image.dim(1), W = image.dim(2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (const Point2& q : {points[i].p, points[i].g}) {
      if (!std::isfinite(q.x) || !std::isfinite(q.y) || q.x < 0 || q.y < 0 || q.x > W - 1 || q.y > H - 1) {
        throw ConfigError("points[" + std::to_string(i) + "]: coordinate outside the " + std::to_string(W) + "x" +
                          std::to_string(H) + " image");
      }
    }
  }
  if (mask.rank() != 3 || mask.dim(0) != 1 || mask.dim(1) != H || mask.dim(2) != W) {
    throw ConfigError("mask: shape " + shape_str(mask.shape) + " does not match image grid 1x" + std::to_string(H) + "x" +
                      std::to_string(W));
  }
  for (T v : mask.data)
    if (v != T(0) && v != T(1)) throw ConfigError("mask: values must be binary");
}

// Prepares a session: reconstruction adapter (trained unless supplied), inversion to
// the drag index, and the fixed references F0 and z34_ref.
template <class T>
DragSession<T> start_session(const Tensor<T>& image, const Tensor<T>& mask, const std::vector<DragPoint>& points, int cls,
                             const Denoiser<T>& model, const NoiseSchedule& sched, const PipelineConfig& cfg,
                             const LoRAAdapter<T>* lora_rec = nullptr) {
  cfg.validate(&sched);
  validate_session_inputs(image, mask, points, model);
  DragSession<T> s;
  s.cfg = cfg;
  s.image = image;
  s.mask = mask;
  s.cls = cls;
  Rng root(cfg.seed);
  s.rng_dds = root.fork(2);
  s.rng_ilfa = root.fork(3);
  if (lora_rec) {
    s.lora_rec = *lora_rec;
  } else {
    ReconConfig rc = cfg.recon;
    rc.rank = cfg.lora_rank;
    ReconReport rep;
    s.lora_rec = train_reconstruction_lora(model, image, cls, sched, rc, root.fork(1).seed(), &rep);
    s.recon_val_before = rep.validation_before;
    s.recon_val_after = rep.validation_after;
  }
  const auto traj = invert_to(image, model, &s.lora_rec, sched, cfg.drag_index, cls);
  s.z35_ref = traj.back();
  s.z = s.z35_ref;

  Tape<T> tape;
  NoGradGuard<T> guard(tape);
  auto bind = bind_adapter(tape, s.lora_rec, false);
  auto out = model.forward(tape, tape.leaf(s.z35_ref, false), sched.timestep(cfg.drag_index), cls, &bind);
  Tensor<T> z34_ref = ddim_step(s.z35_ref, out.eps.value(), cfg.drag_index, cfg.drag_index - 1, sched);

  std::vector<Point2> h0;
  for (const auto& dp : points) {
    PointPair pp = make_pair_from(dp.p, dp.g);
    pp.reached = distance(pp.h, pp.g) <= cfg.l1;
    s.pairs.push_back(pp);
    s.minD.push_back(0.0);
    h0.push_back(dp.p);
  }
  s.targets = make_drag_targets(out.features.value(), h0, std::move(z34_ref), cfg.track.r1);
  s.lora = clone_from(s.lora_rec);
  AdamConfig ac;
  ac.lr = cfg.lr_drag;
  s.adam = make_adam(s.lora, ac);
  return s;
}

using StepSink = std::function<void(const StepRecord&)>;

template <class T>
struct PipelineHooks {
  // Replaces track_point (test stubs); retreat_filter still applies.
  std::function<TrackResult(const Tensor<T>& F, const Tensor<T>& ref, const PointPair& pair, const TrackConfig& cfg,
                            double previous_minD)>
      tracker;
  std::function<bool()> cancelled;
};

namespace detail {

template <class T>
StepRecord make_record(const DragSession<T>& s, StepMode mode) {
  StepRecord r;
  r.ordinal = static_cast<int>(s.records.size());
  r.mode = mode;
  r.k = s.k;
  r.strategy = to_string(s.cfg.track.strategy);
  for (std::size_t i = 0; i < s.pairs.size(); ++i) {
    const auto& pp = s.pairs[i];
    PointState ps;
    ps.h = pp.h;
    ps.minD = s.minD[i];
    ps.dT = distance(pp.h, pp.g);
    if (pp.n) ps.dn = distance(pp.h, *pp.n);
    ps.reached = pp.reached;
    r.points.push_back(ps);
  }
  return r;
}

}  // namespace detail

// Runs the adaptive update loop until every handle is within l1 of its target, K
// optimization steps have been taken, or the ILFA-only budget is spent.
template <class T>
void run_drag(DragSession<T>& s, const Denoiser<T>& model, const NoiseSchedule& sched, const StepSink& sink = {},
              const PipelineHooks<T>& hooks = {}) {
  if (s.status != SessionStatus::idle) throw SessionError("run_drag: session is " + to_string(s.status) + ", expected idle");
  s.status = SessionStatus::running;
  const PipelineConfig& cfg = s.cfg;
  const int idx = cfg.drag_index;
  const int t = sched.timestep(idx);

  auto emit = [&](StepRecord r) {
    s.records.push_back(r);
    if (sink) sink(s.records.back());
  };

  // Tracks every unreached point against F and returns the aggregated probe.
  auto track_all = [&](const Tensor<T>& F) {
    for (std::size_t i = 0; i < s.pairs.size(); ++i) {
      PointPair& pp = s.pairs[i];
      if (pp.reached) continue;
      const TrackResult r = hooks.tracker ? hooks.tracker(F, s.targets.ref_patches[i], pp, cfg.track, s.minD[i])
                                          : track_point(F, s.targets.ref_patches[i], pp, cfg.track, s.minD[i]);
      pp.h = retreat_filter(pp.h, r.h, r.minD, cfg.track);
      s.minD[i] = r.minD;
      if (distance(pp.h, pp.g) <= cfg.l1) pp.reached = true;
    }
    BurstProbe probe{0.0, true};
    for (std::size_t i = 0; i < s.pairs.size(); ++i) {
      if (s.pairs[i].reached) continue;
      probe.all_reached = false;
      probe.max_minD = std::max(probe.max_minD, s.minD[i]);
    }
    return probe;
  };

  auto all_reached = [&] { return std::all_of(s.pairs.begin(), s.pairs.end(), [](const PointPair& p) { return p.reached; }); };

  auto fail = [&](const std::string& why) {
    s.status = SessionStatus::failed;
    s.failure = why;
    log::warn("session " + s.id + " failed: " + why);
  };

  while (true) {
    if (hooks.cancelled && hooks.cancelled()) return fail("cancelled");
    if (all_reached() || s.k >= cfg.K) break;
    if (cfg.ilfa.budget > 0 && s.ilfa_only_steps >= cfg.ilfa.budget) break;

    Tape<T> tape;
    auto bind = bind_adapter(tape, s.lora, true);
    auto out = model.forward(tape, tape.leaf(s.z, false), t, s.cls, &bind);
    const BurstProbe probe = track_all(out.features.value());
    if (probe.all_reached) break;

    // max |h - n| over unreached points; infinite while some n is unset
    double max_dn = 0.0;
    for (const auto& pp : s.pairs) {
      if (pp.reached) continue;
      max_dn = std::max(max_dn, pp.n ? distance(pp.h, *pp.n) : std::numeric_limits<double>::infinity());
    }
    const bool confident = cfg.use_ass && cfg.ilfa.enabled && cfg.ilfa.burst_cap > 0 &&
                           s.ilfa_only_steps < cfg.ilfa.budget && s.k > cfg.k_ini && probe.max_minD < cfg.d1 &&
                           max_dn < cfg.l2;

    if (confident) {
      const int cap = std::min(cfg.ilfa.burst_cap, cfg.ilfa.budget - s.ilfa_only_steps);
      int iter = 0;
      auto burst = ilfa_burst<T>(
          s.z, model, &s.lora, s.mask, sched, cfg.ilfa, s.rng_ilfa, idx, s.cls, cfg.d2, cap, probe, out.eps.value(),
          [&](const Tensor<T>&, const Tensor<T>&, const Tensor<T>& F) {
            const BurstProbe p = track_all(F);
            StepRecord rec = detail::make_record(s, StepMode::ilfa_only);
            rec.entry_max_minD = probe.max_minD;
            rec.entry_max_dn = max_dn;
            rec.burst_iter = iter++;
            emit(std::move(rec));
            return p;
          });
      s.z = std::move(burst.z);
      s.ilfa_only_steps += burst.iterations;
      continue;
    }

    std::vector<Point2> n(s.pairs.size());
    std::vector<bool> active(s.pairs.size());
    for (std::size_t i = 0; i < s.pairs.size(); ++i) {
      active[i] = !s.pairs[i].reached;
      if (active[i]) s.pairs[i].n = temporal_target(s.pairs[i]);
      n[i] = s.pairs[i].n.value_or(s.pairs[i].h);
    }
    const DdsSample<T> dds = sample_dds<T>(s.rng_dds, sched, s.z.shape);
    LossInputs<T> in;
    in.model = &model;
    in.lora = &s.lora;
    in.binding = &bind;
    in.out = &out;
    in.z35 = &s.z;
    in.targets = &s.targets;
    in.n = &n;
    in.active = &active;
    in.mask = &s.mask;
    in.dds = &dds;
    in.sched = &sched;
    in.drag_index = idx;
    in.cls = s.cls;
    const StepLosses<T> L = total_loss_step(in, cfg.weights);
    if (!std::isfinite(L.total)) {
      return fail("non-finite loss at k=" + std::to_string(s.k) + " (drag " + fmt_double(L.drag) + ", mask " +
                  fmt_double(L.mask) + ", dds " + fmt_double(L.dds) + ")");
    }
    adam_step(s.lora, L.grads, s.adam);
    if (cfg.ilfa.enabled) s.z = ilfa_step(s.z, model, &s.lora, s.mask, sched, cfg.ilfa, s.rng_ilfa, idx, s.cls);
    ++s.k;
    StepRecord rec = detail::make_record(s, StepMode::doo_ilfa);
    rec.loss_drag = L.drag;
    rec.loss_mask = L.mask;
    rec.loss_dds = L.dds;
    emit(std::move(rec));
  }
  s.status = SessionStatus::done;
}

// Legality of a record stream against the controller's branch rules. Returns one
// message per violation; empty means the trace is consistent with `cfg`.
inline std::vector<std::string> check_trace(const std::vector<StepRecord>& recs, const PipelineConfig& cfg) {
  std::vector<std::string> bad;
  auto at = [](std::size_t i) { return "record " + std::to_string(i) + ": "; };
  const std::size_t head = std::min(recs.size(), static_cast<std::size_t>(cfg.k_ini + 1));
  for (std::size_t i = 0; i < head; ++i)
    if (recs[i].mode != StepMode::doo_ilfa) bad.push_back(at(i) + "ILFA_ONLY inside the warmup prefix");
  int prev_k = 0, ilfa = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const StepRecord& r = recs[i];
    if (r.ordinal != static_cast<int>(i)) bad.push_back(at(i) + "ordinal out of sequence");
    if (r.k > cfg.K) bad.push_back(at(i) + "k exceeds K");
    for (const auto& p : r.points)
      if (p.reached && p.dT > cfg.l1) bad.push_back(at(i) + "point marked reached outside l1");
    if (r.mode == StepMode::doo_ilfa) {
      if (r.k != prev_k + 1) bad.push_back(at(i) + "DOO step does not advance k by one");
    } else {
      ++ilfa;
      if (r.k != prev_k) bad.push_back(at(i) + "ILFA_ONLY step changed k");
      if (!(r.k > cfg.k_ini)) bad.push_back(at(i) + "ILFA_ONLY before k exceeds k_ini");
      if (!r.entry_max_minD || !(*r.entry_max_minD < cfg.d1)) bad.push_back(at(i) + "entry minD guard not satisfied");
      if (!r.entry_max_dn || !(*r.entry_max_dn < cfg.l2)) bad.push_back(at(i) + "entry |h-n| guard not satisfied");
      if (r.burst_iter >= cfg.ilfa.burst_cap) bad.push_back(at(i) + "burst exceeds its cap");
      if (r.burst_iter > 0) {
        const StepRecord* p = i > 0 ? &recs[i - 1] : nullptr;
        if (!p || p->mode != StepMode::ilfa_only || p->burst_iter != r.burst_iter - 1) {
          bad.push_back(at(i) + "burst continuation without its predecessor");
        } else {
          double m = 0.0;
          bool all = true;
          for (const auto& q : p->points) {
            if (q.reached) continue;
            all = false;
            m = std::max(m, q.minD);
          }
          if (all || !(m < cfg.d2)) bad.push_back(at(i) + "burst continued past its exit condition");
        }
      }
    }
    prev_k = r.k;
  }
  if (ilfa > cfg.ilfa.budget) bad.push_back("ILFA_ONLY steps exceed the budget");
  return bad;
}

// Denoises the edited drag latent to a clean image with the optimized adapter.
template <class T>
Tensor<T> finalize(const DragSession<T>& s, const Denoiser<T>& model, const NoiseSchedule& sched) {
  if (s.status != SessionStatus::done) throw SessionError("finalize: session is " + to_string(s.status) + ", expected done");
  return denoise(s.z, model, &s.lora, sched, s.cfg.drag_index, 0, s.cls);
}

template <class T>
struct DragBackReport {
  Tensor<T> first_edit;
  Tensor<T> second_edit;
  std::vector<StepRecord> first_records;
  std::vector<StepRecord> second_records;
  double distance = 0.0;  // fidelity(second_edit, original)
  SessionStatus first_status = SessionStatus::idle;
  SessionStatus second_status = SessionStatus::idle;
};

// Drag, then retrain the reconstruction adapter on the edit and drag back with the
// point pairs swapped; reports how far the round trip lands from the original.
template <class T>
DragBackReport<T> drag_back(const Tensor<T>& image, const Tensor<T>& mask, const std::vector<DragPoint>& points, int cls,
                            const Denoiser<T>& model, const NoiseSchedule& sched, const PipelineConfig& cfg,
                            const StepSink& sink1 = {}, const StepSink& sink2 = {}, const PipelineHooks<T>& hooks = {}) {
  DragBackReport<T> rep;
  auto s1 = start_session(image, mask, points, cls, model, sched, cfg);
  run_drag(s1, model, sched, sink1, hooks);
  rep.first_status = s1.status;
  rep.first_records = s1.records;
  if (s1.status != SessionStatus::done) throw SessionError("drag-back first round failed: " + s1.failure);
  rep.first_edit = finalize(s1, model, sched);

  std::vector<DragPoint> swapped;
  for (const auto& dp : points) swapped.push_back({dp.g, dp.p});
  PipelineConfig cfg2 = cfg;
  cfg2.seed = cfg.seed + 1;
  auto s2 = start_session(rep.first_edit, mask, swapped, cls, model, sched, cfg2);
  run_drag(s2, model, sched, sink2, hooks);
  rep.second_status = s2.status;
  rep.second_records = s2.records;
  if (s2.status != SessionStatus::done) throw SessionError("drag-back second round failed: " + s2.failure);
  rep.second_edit = finalize(s2, model, sched);
  rep.distance = fidelity(model, rep.second_edit, image, cls, sched);
  return rep;
}

}  // namespace draglora
