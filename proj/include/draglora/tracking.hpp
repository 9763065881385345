#pragma once

// Point tracking over candidate regions, minD confidence, and minD-based retreat.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "draglora/features.hpp"
#include "draglora/schedule.hpp"

namespace draglora {

enum class TrackStrategy { neighborhood, distance_closer, angle_closer, linear };

inline std::string to_string(TrackStrategy s) {
  switch (s) {
    case TrackStrategy::neighborhood: return "neighborhood";
    case TrackStrategy::distance_closer: return "distance";
    case TrackStrategy::angle_closer: return "angle";
    case TrackStrategy::linear: return "linear";
  }
  return "?";
}

inline TrackStrategy parse_strategy(const std::string& s) {
  if (s == "neighborhood") return TrackStrategy::neighborhood;
  if (s == "distance" || s == "distance-closer") return TrackStrategy::distance_closer;
  if (s == "angle" || s == "angle-closer") return TrackStrategy::angle_closer;
  if (s == "linear") return TrackStrategy::linear;
  throw ConfigError("unknown tracking strategy '" + s + "' (expected neighborhood|distance|angle|linear)");
}

struct TrackConfig {
  int r2 = 3;
  TrackStrategy strategy = TrackStrategy::distance_closer;
  double d2_retreat = 1.3;
  bool retreat = true;
  double angle_limit = 45.0;  // degrees
  int linear_samples = 10;
  int r1 = 1;

  void validate() const {
    if (r2 < 1) throw ConfigError("r2 must be >= 1");
    if (r1 < 0) throw ConfigError("r1 must be >= 0");
    if (linear_samples < 1) throw ConfigError("linear_samples must be >= 1");
    if (angle_limit < 0 || angle_limit > 180) throw ConfigError("angle_limit must be within [0, 180]");
  }
  bool operator==(const TrackConfig&) const = default;
};

struct PointPair {
  Point2 p;
  Point2 g;
  Point2 h;
  std::optional<Point2> n;
  bool reached = false;
};

inline PointPair make_pair_from(Point2 p, Point2 g) { return {p, g, p, std::nullopt, false}; }

// Angle in degrees between a and b; a zero vector has angle 0 to everything.
inline double angle_between(const Point2& a, const Point2& b) {
  const double cross = a.x * b.y - a.y * b.x;
  const double dot = a.x * b.x + a.y * b.y;
  if (cross == 0.0 && dot >= 0.0) return 0.0;
  return std::atan2(std::abs(cross), dot) * 180.0 / M_PI;
}

// Integer grid points with |q - h|_inf <= r2, row-major.
inline std::vector<Point2> neighborhood(const Point2& h, int r2) {
  std::vector<Point2> out;
  const int y0 = static_cast<int>(std::ceil(h.y - r2)), y1 = static_cast<int>(std::floor(h.y + r2));
  const int x0 = static_cast<int>(std::ceil(h.x - r2)), x1 = static_cast<int>(std::floor(h.x + r2));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) out.push_back({static_cast<double>(x), static_cast<double>(y)});
  return out;
}

inline bool in_candidate_region(const Point2& q, const Point2& h, const Point2& g, const TrackConfig& cfg) {
  if (std::abs(q.x - h.x) > cfg.r2 || std::abs(q.y - h.y) > cfg.r2) return false;
  const double hg = distance(h, g);
  switch (cfg.strategy) {
    case TrackStrategy::neighborhood: return true;
    case TrackStrategy::distance_closer: return distance(q, g) <= hg;
    case TrackStrategy::angle_closer: return distance(q, h) <= hg && angle_between(q - h, g - h) <= cfg.angle_limit;
    case TrackStrategy::linear: return false;  // not a grid predicate
  }
  return false;
}

inline std::vector<Point2> candidate_set(const Point2& h, const Point2& g, const TrackConfig& cfg) {
  if (cfg.strategy == TrackStrategy::linear) {
    std::vector<Point2> out;
    const double len = distance(h, g);
    if (len == 0.0) return out;
    const Point2 d = (g - h) * (1.0 / len);
    const double reach = std::min(static_cast<double>(cfg.r2), len);
    const int L = cfg.linear_samples;
    for (int i = 0; i < L; ++i) {
      const double s = L == 1 ? reach : reach * i / (L - 1);
      out.push_back(h + d * s);
    }
    return out;
  }
  std::vector<Point2> out;
  for (const auto& q : neighborhood(h, cfg.r2))
    if (in_candidate_region(q, h, g, cfg)) out.push_back(q);
  return out;
}

// Candidates that fall outside the W x H grid are dropped before matching.
inline std::vector<Point2> clip_to_grid(std::vector<Point2> c, int W, int H) {
  std::vector<Point2> out;
  for (const auto& q : c)
    if (q.x >= 0 && q.y >= 0 && q.x <= W - 1 && q.y <= H - 1) out.push_back(q);
  return out;
}

// Strict total order used to break exact distance ties: prefer progress toward g,
// then lexicographic (x, y).
inline bool tie_less(const Point2& a, const Point2& b, const Point2& g) {
  const double da = distance(a, g), db = distance(b, g);
  if (da != db) return da < db;
  if (a.x != b.x) return a.x < b.x;
  return a.y < b.y;
}

struct TrackResult {
  Point2 h;
  double minD = 0.0;
  std::size_t candidates = 0;
};

// Argmin over the candidate region of the patch distance to the reference patch
// (minD is the minimizing distance). With no candidates the handle stays put.
template <class T>
TrackResult track_point(const Tensor<T>& F, const Tensor<T>& ref_patch, const PointPair& pair, const TrackConfig& cfg,
                        double previous_minD = 0.0) {
  const int H = F.dim(1), W = F.dim(2);
  auto cands = clip_to_grid(candidate_set(pair.h, pair.g, cfg), W, H);
  TrackResult best{pair.h, previous_minD, cands.size()};
  bool found = false;
  for (const auto& q : cands) {
    const double d = patch_distance(sample_feature(F, q, cfg.r1), ref_patch);
    if (!found || d < best.minD || (d == best.minD && tie_less(q, best.h, pair.g))) {
      best.h = q;
      best.minD = d;
      found = true;
    }
  }
  return best;
}

inline Point2 retreat_filter(const Point2& prev_h, const Point2& new_h, double minD, const TrackConfig& cfg) {
  return cfg.retreat && minD > cfg.d2_retreat ? prev_h : new_h;
}

// One unit step from h toward g.
inline Point2 temporal_target(const PointPair& pair) {
  const double len = distance(pair.h, pair.g);
  if (len == 0.0) throw ConfigError("temporal target undefined when the handle sits on its target");
  return pair.h + (pair.g - pair.h) * (1.0 / len);
}

}  // namespace draglora
