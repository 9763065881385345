#pragma once

// Step telemetry: one record per pipeline iteration, serialized as JSON lines.

#include <cmath>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "draglora/features.hpp"
#include "draglora/schedule.hpp"

namespace draglora {

enum class StepMode { doo_ilfa, ilfa_only };

inline std::string to_string(StepMode m) { return m == StepMode::doo_ilfa ? "DOO_ILFA" : "ILFA_ONLY"; }

inline StepMode parse_step_mode(const std::string& s) {
  if (s == "DOO_ILFA") return StepMode::doo_ilfa;
  if (s == "ILFA_ONLY") return StepMode::ilfa_only;
  throw ConfigError("unknown step mode " + s);
}

struct PointState {
  Point2 h;
  double minD = 0.0;
  double dT = 0.0;                // |h - g|
  std::optional<double> dn;       // |h - n|, unset before the first optimization
  bool reached = false;
  bool operator==(const PointState&) const = default;
};

struct StepRecord {
  int ordinal = 0;
  StepMode mode = StepMode::doo_ilfa;
  int k = 0;  // DOO steps completed after this record
  std::string strategy;
  std::vector<PointState> points;
  std::optional<double> loss_drag;
  std::optional<double> loss_mask;
  std::optional<double> loss_dds;
  // ILFA_ONLY only: guard inputs at burst entry, and position within the burst
  std::optional<double> entry_max_minD;
  std::optional<double> entry_max_dn;
  int burst_iter = 0;

  double mean_minD() const {
    double s = 0.0;
    for (const auto& p : points) s += p.minD;
    return points.empty() ? 0.0 : s / static_cast<double>(points.size());
  }
  double mean_dT() const {
    double s = 0.0;
    for (const auto& p : points) s += p.dT;
    return points.empty() ? 0.0 : s / static_cast<double>(points.size());
  }
  bool operator==(const StepRecord&) const = default;
};

namespace detail {
inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
inline std::optional<double> json_opt(const nlohmann::json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}
}  // namespace detail

inline nlohmann::json to_json_value(const StepRecord& r) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : r.points) {
    pts.push_back({{"h", {p.h.x, p.h.y}}, {"minD", p.minD}, {"dT", p.dT}, {"dn", detail::opt_json(p.dn)}, {"reached", p.reached}});
  }
  return {{"ordinal", r.ordinal},
          {"mode", to_string(r.mode)},
          {"k", r.k},
          {"strategy", r.strategy},
          {"points", pts},
          {"mean_minD", r.mean_minD()},
          {"mean_dT", r.mean_dT()},
          {"loss", {{"drag", detail::opt_json(r.loss_drag)}, {"mask", detail::opt_json(r.loss_mask)}, {"dds", detail::opt_json(r.loss_dds)}}},
          {"entry", {{"max_minD", detail::opt_json(r.entry_max_minD)}, {"max_dn", detail::opt_json(r.entry_max_dn)}}},
          {"burst_iter", r.burst_iter}};
}

inline StepRecord record_from_json(const nlohmann::json& j) {
  StepRecord r;
  r.ordinal = j.at("ordinal").get<int>();
  r.mode = parse_step_mode(j.at("mode").get<std::string>());
  r.k = j.at("k").get<int>();
  r.strategy = j.value("strategy", "");
  for (const auto& p : j.at("points")) {
    PointState s;
    s.h = {p.at("h").at(0).get<double>(), p.at("h").at(1).get<double>()};
    s.minD = p.at("minD").get<double>();
    s.dT = p.at("dT").get<double>();
    s.dn = detail::json_opt(p.at("dn"));
    s.reached = p.at("reached").get<bool>();
    r.points.push_back(s);
  }
  const auto& l = j.at("loss");
  r.loss_drag = detail::json_opt(l.at("drag"));
  r.loss_mask = detail::json_opt(l.at("mask"));
  r.loss_dds = detail::json_opt(l.at("dds"));
  if (j.contains("entry")) {
    r.entry_max_minD = detail::json_opt(j.at("entry").at("max_minD"));
    r.entry_max_dn = detail::json_opt(j.at("entry").at("max_dn"));
  }
  r.burst_iter = j.value("burst_iter", 0);
  return r;
}

inline std::string record_line(const StepRecord& r) { return to_json_value(r).dump(); }

inline std::string records_jsonl(const std::vector<StepRecord>& recs) {
  std::string out;
  for (const auto& r : recs) out += record_line(r) + "\n";
  return out;
}

// Per-step series of mean minD and mean dT.
struct CurveSeries {
  std::vector<int> step;
  std::vector<std::string> mode;
  std::vector<double> minD;
  std::vector<double> dT;
  std::vector<std::optional<double>> loss_drag;
  std::vector<std::optional<double>> loss_mask;
};

inline CurveSeries curves(const std::vector<StepRecord>& recs) {
  if (recs.empty()) throw ConfigError("curves need at least one record");
  CurveSeries c;
  for (const auto& r : recs) {
    c.step.push_back(r.ordinal);
    c.mode.push_back(to_string(r.mode));
    c.minD.push_back(r.mean_minD());
    c.dT.push_back(r.mean_dT());
    c.loss_drag.push_back(r.loss_drag);
    c.loss_mask.push_back(r.loss_mask);
  }
  return c;
}

inline std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

inline std::string curves_csv(const CurveSeries& c) {
  std::string out = "step,mode,mean_minD,mean_dT,loss_drag,loss_mask\n";
  for (std::size_t i = 0; i < c.step.size(); ++i) {
    out += std::to_string(c.step[i]) + "," + c.mode[i] + "," + fmt_double(c.minD[i]) + "," + fmt_double(c.dT[i]) + "," +
           (c.loss_drag[i] ? fmt_double(*c.loss_drag[i]) : "") + "," + (c.loss_mask[i] ? fmt_double(*c.loss_mask[i]) : "") + "\n";
  }
  return out;
}

inline nlohmann::json curves_json(const CurveSeries& c) {
  return {{"step", c.step}, {"mode", c.mode}, {"minD", c.minD}, {"dT", c.dT}};
}

}  // namespace draglora
