#pragma once

// Seeded shape-translation drag tasks: one handle at the shape center, target a fixed
// number of pixels away along a cardinal direction, mask covering source and destination.

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "draglora/image_io.hpp"
#include "draglora/pipeline.hpp"
#include "draglora/toyworld.hpp"

namespace draglora {

struct DragTask {
  std::string id;
  SceneSpec scene;
  std::vector<DragPoint> points;
  Tensor<float> mask;
  std::uint64_t seed = 0;

  Tensor<float> image() const { return render_scene(scene); }
};

// Box over the shape at its start and end positions, padded.
inline Tensor<float> translation_mask(const SceneSpec& s, double dx, double dy, double pad) {
  const int S = s.image_size;
  Tensor<float> m({1, S, S});
  const double e = shape_extent(s) + pad;
  const double x0 = std::min(s.cx, s.cx + dx) - e, x1 = std::max(s.cx, s.cx + dx) + e;
  const double y0 = std::min(s.cy, s.cy + dy) - e, y1 = std::max(s.cy, s.cy + dy) + e;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      if (x >= x0 && x <= x1 && y >= y0 && y <= y1) m.at(0, y, x) = 1.0f;
  return m;
}

// Tasks draw from their own stream, disjoint from any training dataset seed.
inline std::vector<DragTask> make_translation_tasks(std::uint64_t seed, int n, double drag_px = 6.0, double pad = 2.0) {
  if (n < 1) throw ConfigError("task count must be >= 1");
  Rng rng = Rng(seed).fork(0x7A5C);
  std::vector<DragTask> out;
  for (int i = 0; i < n; ++i) {
    const int dir = rng.uniform_int(0, 3);
    const double dx = dir == 0 ? drag_px : dir == 1 ? -drag_px : 0.0;
    const double dy = dir == 2 ? drag_px : dir == 3 ? -drag_px : 0.0;
    SceneSpec s;
    do {
      s = random_scene(rng);
      // whole-pixel centers keep handles on the grid
      s.cx = std::round(s.cx);
      s.cy = std::round(s.cy);
    } while (!scene_in_frame(s) || !scene_in_frame([&] {
      SceneSpec moved = s;
      moved.cx += dx;
      moved.cy += dy;
      return moved;
    }()));
    DragTask t;
    t.id = "task" + std::to_string(i);
    t.scene = s;
    t.points = {{{s.cx, s.cy}, {s.cx + dx, s.cy + dy}}};
    t.mask = translation_mask(s, dx, dy, pad);
    t.seed = rng.next_u64() >> 1;  // stays exact in JSON
    out.push_back(std::move(t));
  }
  return out;
}

inline nlohmann::json task_to_json(const DragTask& t) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& dp : t.points) pts.push_back({dp.p.x, dp.p.y, dp.g.x, dp.g.y});
  return {{"id", t.id}, {"scene", t.scene}, {"points", pts}, {"mask", mask_to_rle(t.mask)}, {"seed", t.seed}};
}

inline DragTask task_from_json(const nlohmann::json& j) {
  try {
    DragTask t;
    t.id = j.at("id").get<std::string>();
    t.scene = j.at("scene").get<SceneSpec>();
    for (const auto& p : j.at("points")) {
      if (p.size() != 4) throw ConfigError("task " + t.id + ": each point needs 4 numbers");
      t.points.push_back({{p[0].get<double>(), p[1].get<double>()}, {p[2].get<double>(), p[3].get<double>()}});
    }
    const auto& m = j.at("mask");
    if (m.is_string() && m.get<std::string>() == "all") {
      t.mask = full_mask(t.scene.image_size, t.scene.image_size);
    } else {
      t.mask = mask_from_rle(m);
    }
    t.seed = j.at("seed").get<std::uint64_t>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed task: ") + e.what());
  } catch (const ImageError& e) {
    throw ConfigError(std::string("malformed task mask: ") + e.what());
  }
}

inline nlohmann::json tasks_to_json(const std::vector<DragTask>& tasks) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : tasks) arr.push_back(task_to_json(t));
  return {{"tasks", arr}};
}

inline std::vector<DragTask> tasks_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("tasks") || !j["tasks"].is_array()) throw ConfigError("tasks file needs a 'tasks' array");
  std::vector<DragTask> out;
  for (const auto& t : j["tasks"]) out.push_back(task_from_json(t));
  if (out.empty()) throw ConfigError("tasks file is empty");
  return out;
}

inline std::vector<DragTask> load_tasks(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const CheckpointError& e) {
    throw ConfigError("cannot read tasks file " + path);
  }
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("tasks file " + path + " is not valid JSON");
  return tasks_from_json(j);
}

}  // namespace draglora
