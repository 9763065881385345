#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "draglora/eval.hpp"
#include "draglora/service.hpp"
#include "draglora/tasks.hpp"
#include "draglora/toyworld.hpp"

using namespace draglora;
namespace fs = std::filesystem;

namespace {

// Bad user input (flags, files, configs): exit code 1.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

std::string default_ckpt() { return env_or("DRAGLORA_CKPT", std::string(DRAGLORA_REPO_DATA) + "/toy.dlc"); }

Checkpoint open_checkpoint(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError& e) {
    throw InputError("checkpoint " + path + ": " + e.what());
  }
}

nlohmann::json read_json_file(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const CheckpointError&) {
    throw InputError("cannot read " + path);
  }
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw InputError(path + " is not valid JSON");
  return j;
}

void write_out(const fs::path& p, const std::string& bytes) { write_file(p.string(), bytes); }

// "px,py,gx,gy;px,py,gx,gy"
std::vector<DragPoint> parse_points_flag(const std::string& s) {
  std::vector<DragPoint> out;
  std::stringstream pairs(s);
  std::string item;
  while (std::getline(pairs, item, ';')) {
    if (item.empty()) continue;
    std::vector<double> v;
    std::stringstream nums(item);
    std::string n;
    while (std::getline(nums, n, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(n, &used));
        if (used != n.size()) throw std::invalid_argument(n);
      } catch (const std::exception&) {
        throw InputError("points: '" + n + "' is not a number");
      }
    }
    if (v.size() != 4) throw InputError("points: each pair needs px,py,gx,gy (got '" + item + "')");
    out.push_back({{v[0], v[1]}, {v[2], v[3]}});
  }
  if (out.empty()) throw InputError("points: at least one pair is required");
  return out;
}

std::string points_flag(const std::vector<DragPoint>& pts) {
  std::string s;
  for (const auto& dp : pts) {
    if (!s.empty()) s += ";";
    s += fmt_double(dp.p.x) + "," + fmt_double(dp.p.y) + "," + fmt_double(dp.g.x) + "," + fmt_double(dp.g.y);
  }
  return s;
}

// Everything a drag run needs; the resolved form is echoed as config.json.
struct RunConfig {
  PipelineConfig pipeline;
  std::string ckpt;
  std::string image;                 // PNG path
  std::optional<SceneSpec> scene;    // or a generated scene
  std::string points;
  nlohmann::json mask = "all";       // "all", PNG path, or RLE object
  std::optional<int> cls;
  std::string adapter;               // optional reconstruction adapter

  nlohmann::json to_json(const std::string& model_hash) const {
    nlohmann::json j{{"pipeline", config_to_json(pipeline)}, {"ckpt", ckpt},  {"model_hash", model_hash},
                     {"points", points},                     {"mask", mask},  {"image", image},
                     {"adapter", adapter}};
    j["scene"] = scene ? nlohmann::json(*scene) : nlohmann::json(nullptr);
    j["cls"] = cls ? nlohmann::json(*cls) : nlohmann::json(nullptr);
    return j;
  }
};

// File keys first, then flags (flags win).
void apply_run_file(RunConfig& rc, const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("config file must hold a JSON object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "pipeline") rc.pipeline = apply_config_json(rc.pipeline, v);
      else if (k == "ckpt") rc.ckpt = v.get<std::string>();
      else if (k == "image") rc.image = v.get<std::string>();
      else if (k == "scene") rc.scene = v.is_null() ? std::nullopt : std::optional<SceneSpec>(v.get<SceneSpec>());
      else if (k == "points") rc.points = v.get<std::string>();
      else if (k == "mask") rc.mask = v;
      else if (k == "cls") rc.cls = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
      else if (k == "adapter") rc.adapter = v.get<std::string>();
      else if (k == "model_hash") continue;  // informational in echoed configs
      else rc.pipeline = apply_config_json(rc.pipeline, nlohmann::json{{k, v}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("config file: ") + e.what());
  }
}

Tensor<float> load_mask(const nlohmann::json& m, int H, int W) {
  try {
    if (m.is_string() && m.get<std::string>() == "all") return full_mask(H, W);
    if (m.is_object()) return mask_from_rle(m);
    if (m.is_string()) {
      const std::string p = m.get<std::string>();
      if (p.size() > 5 && p.substr(p.size() - 5) == ".json") return mask_from_rle(read_json_file(p));
      return png_mask(read_file(p));
    }
  } catch (const ImageError& e) {
    throw InputError(std::string("mask: ") + e.what());
  } catch (const CheckpointError& e) {
    throw InputError(std::string("mask: ") + e.what());
  }
  throw InputError("mask must be \"all\", a PNG path, or an RLE JSON file");
}

struct ResolvedInputs {
  Tensor<float> image;
  Tensor<float> mask;
  std::vector<DragPoint> points;
  int cls = 0;
};

ResolvedInputs resolve_inputs(const RunConfig& rc, const ToyUNet<float>& model) {
  ResolvedInputs in;
  if (!rc.image.empty() && rc.scene) throw InputError("give either --image or --scene, not both");
  if (!rc.image.empty()) {
    try {
      in.image = image_from_png(read_file(rc.image));
    } catch (const std::exception& e) {
      throw InputError("image " + rc.image + ": " + e.what());
    }
  } else if (rc.scene) {
    in.image = render_scene(*rc.scene);
  } else {
    throw InputError("an input is required: --image, --scene, or --task");
  }
  const int H = in.image.dim(1), W = in.image.dim(2);
  in.mask = load_mask(rc.mask, H, W);
  if (rc.points.empty()) throw InputError("--points is required");
  in.points = parse_points_flag(rc.points);
  in.cls = rc.cls.value_or(rc.scene ? rc.scene->cls : 0);
  if (in.cls < 0 || in.cls >= model.config().num_classes) throw InputError("cls out of range");
  return in;
}

// Flags shared by drag, dragback and recon-lora.
struct InputFlags {
  std::string config, ckpt, image, scene, task_file, task_id, points, mask, ept, ilfa, adapter;
  std::optional<std::uint64_t> seed;
  std::optional<int> cls;
  std::string out;

  void add(CLI::App* app, bool drag_flags = true) {
    app->add_option("--config", config, "JSON run config (an echoed config.json replays a run)");
    app->add_option("--ckpt", ckpt, "model checkpoint (default $DRAGLORA_CKPT or data/toy.dlc)");
    app->add_option("--image", image, "input PNG");
    app->add_option("--scene", scene, "JSON file with a generator scene");
    app->add_option("--task", task_file, "tasks JSON file");
    app->add_option("--task-id", task_id, "task id within --task (default: first)");
    app->add_option("--points", points, "px,py,gx,gy[;...]");
    app->add_option("--mask", mask, "mask PNG path, RLE JSON path, or \"all\"");
    app->add_option("--cls", cls, "class id");
    app->add_option("--seed", seed);
    app->add_option("--out", out, "output directory")->required();
    if (drag_flags) {
      app->add_option("--ept", ept, "tracking strategy: neighborhood|distance|angle|linear");
      app->add_option("--ilfa", ilfa, "ILFA variant: sds|dds|off");
      app->add_option("--adapter", adapter, "reconstruction adapter from recon-lora");
    }
  }

  RunConfig resolve() const {
    RunConfig rc;
    rc.ckpt = default_ckpt();
    if (!config.empty()) apply_run_file(rc, read_json_file(config));
    if (!task_file.empty()) {
      std::vector<DragTask> tasks;
      try {
        tasks = load_tasks(task_file);
      } catch (const ConfigError& e) {
        throw InputError(e.what());
      }
      const DragTask* t = &tasks.front();
      if (!task_id.empty()) {
        auto it = std::find_if(tasks.begin(), tasks.end(), [&](const DragTask& x) { return x.id == task_id; });
        if (it == tasks.end()) throw InputError("no task '" + task_id + "' in " + task_file);
        t = &*it;
      }
      rc.scene = t->scene;
      rc.image.clear();
      rc.points = points_flag(t->points);
      rc.mask = mask_to_rle(t->mask);
      rc.cls = t->scene.cls;
      rc.pipeline.seed = t->seed;
    }
    if (!ckpt.empty()) rc.ckpt = ckpt;
    if (!image.empty()) {
      rc.image = image;
      rc.scene.reset();
    }
    if (!scene.empty()) {
      try {
        rc.scene = read_json_file(scene).get<SceneSpec>();
      } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("scene: ") + e.what());
      }
      rc.image.clear();
    }
    if (!points.empty()) rc.points = points;
    if (!mask.empty()) rc.mask = mask;
    if (cls) rc.cls = *cls;
    if (seed) rc.pipeline.seed = *seed;
    if (!ept.empty()) rc.pipeline.track.strategy = parse_strategy(ept);
    if (ilfa == "off") {
      rc.pipeline.ilfa.enabled = false;
    } else if (!ilfa.empty()) {
      rc.pipeline.ilfa.enabled = true;
      rc.pipeline.ilfa.variant = parse_ilfa_variant(ilfa);
    }
    if (!adapter.empty()) rc.adapter = adapter;
    return rc;
  }
};

void write_run_outputs(const fs::path& dir, const std::string& prefix, const std::vector<StepRecord>& recs) {
  write_out(dir / (prefix + ".jsonl"), records_jsonl(recs));
  if (!recs.empty()) {
    const auto c = curves(recs);
    const std::string stem = prefix == "records" ? "curves" : "curves" + prefix.substr(7);
    write_out(dir / (stem + ".csv"), curves_csv(c));
    write_out(dir / (stem + ".json"), curves_json(c).dump() + "\n");
  }
}

int cmd_train(std::uint64_t seed, int steps, int n, int batch, double lr, const std::string& out, const std::string& curve_out) {
  if (steps < 0 || n < 1 || batch < 1 || lr <= 0) throw InputError("train-toy: steps >= 0, images >= 1, batch >= 1, lr > 0");
  auto data = gen_dataset(seed, n);
  TrainConfig tc;
  tc.steps = steps;
  tc.batch = batch;
  tc.lr = lr;
  tc.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  auto res = train_toy_model(data, ScheduleParams{}, UNetConfig{}, tc, [&](const CurvePoint& p, const ToyUNet<float>& m) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "step %d ema %.4f val %.4f lr %.2e (%.0fs)\n", p.step, p.train_ema, p.val_loss, p.lr, s);
    save_checkpoint(out, make_checkpoint(m, ScheduleParams{}, seed, dataset_hash(data)));
  });
  save_checkpoint(out, res.checkpoint);
  if (!curve_out.empty()) write_file(curve_out, curve_json(res).dump(2) + "\n");
  if (res.diverged) {
    std::fprintf(stderr, "training diverged\n");
    return 2;
  }
  return 0;
}

int cmd_recon(const InputFlags& f, int steps, int rank) {
  RunConfig rc = f.resolve();
  const Checkpoint ck = open_checkpoint(rc.ckpt);
  const auto model = ck.model();
  const auto sched = ck.schedule.build();
  const auto in = resolve_inputs(rc, model);
  ReconConfig c = rc.pipeline.recon;
  if (steps >= 0) c.steps = steps;
  c.rank = rank > 0 ? rank : rc.pipeline.lora_rank;
  ReconReport rep;
  const auto lora = train_reconstruction_lora(model, in.image, in.cls, sched, c, Rng(rc.pipeline.seed).fork(1).seed(), &rep);
  const fs::path dir(f.out);
  fs::create_directories(dir);
  write_out(dir / "adapter.dla", serialize_adapter(lora, ck.model_hash()));
  nlohmann::json j{{"steps", c.steps},
                   {"rank", c.rank},
                   {"lr", c.lr},
                   {"seed", rc.pipeline.seed},
                   {"validation_before", rep.validation_before},
                   {"validation_after", rep.validation_after},
                   {"train_losses", rep.train_losses},
                   {"model_hash", ck.model_hash()}};
  write_out(dir / "recon.json", j.dump(2) + "\n");
  std::printf("validation loss %.6f -> %.6f (%.1f%% lower)\n", rep.validation_before, rep.validation_after,
              100.0 * (1.0 - rep.validation_after / rep.validation_before));
  return 0;
}

int cmd_drag(const InputFlags& f) {
  RunConfig rc = f.resolve();
  const Checkpoint ck = open_checkpoint(rc.ckpt);
  const auto model = ck.model();
  const auto sched = ck.schedule.build();
  const auto in = resolve_inputs(rc, model);
  std::optional<LoRAAdapter<float>> rec;
  if (!rc.adapter.empty()) {
    try {
      rec = parse_adapter(read_file(rc.adapter), ck.model_hash());
    } catch (const CheckpointError& e) {
      throw InputError("adapter " + rc.adapter + ": " + e.what());
    }
  }
  const fs::path dir(f.out);
  fs::create_directories(dir);
  write_out(dir / "config.json", rc.to_json(ck.model_hash()).dump(2) + "\n");

  const auto t0 = std::chrono::steady_clock::now();
  auto s = start_session(in.image, in.mask, in.points, in.cls, model, sched, rc.pipeline, rec ? &*rec : nullptr);
  run_drag(s, model, sched);
  write_run_outputs(dir, "records", s.records);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json summary{{"status", to_string(s.status)},
                         {"failure", s.failure},
                         {"steps", s.records.size()},
                         {"doo_steps", s.doo_records()},
                         {"ilfa_steps", s.ilfa_records()},
                         {"initial_dT", s.initial_mean_dT()},
                         {"final_dT", s.mean_dT()},
                         {"background_identical", background_preserved(s)},
                         {"wall_s", wall}};
  if (s.status == SessionStatus::done) {
    const auto edited = finalize(s, model, sched);
    write_out(dir / "edited.png", image_png(edited));
    std::vector<Point2> p, g;
    for (const auto& dp : in.points) {
      p.push_back(dp.p);
      g.push_back(dp.g);
    }
    summary["md"] = mean_distance(model, in.image, edited, p, g, in.cls, sched).md;
    summary["fidelity"] = fidelity(model, in.image, edited, in.cls, sched);
  }
  write_out(dir / "summary.json", summary.dump(2) + "\n");
  std::printf("%s: %zu steps (%d DOO_ILFA, %d ILFA_ONLY), mean dT %.2f -> %.2f\n", to_string(s.status).c_str(),
              s.records.size(), s.doo_records(), s.ilfa_records(), s.initial_mean_dT(), s.mean_dT());
  if (s.status != SessionStatus::done) {
    std::fprintf(stderr, "session failed: %s\n", s.failure.c_str());
    return 2;
  }
  return 0;
}

int cmd_dragback(const InputFlags& f) {
  RunConfig rc = f.resolve();
  const Checkpoint ck = open_checkpoint(rc.ckpt);
  const auto model = ck.model();
  const auto sched = ck.schedule.build();
  const auto in = resolve_inputs(rc, model);
  const fs::path dir(f.out);
  fs::create_directories(dir);
  write_out(dir / "config.json", rc.to_json(ck.model_hash()).dump(2) + "\n");
  const auto rep = drag_back(in.image, in.mask, in.points, in.cls, model, sched, rc.pipeline);
  write_run_outputs(dir, "records", rep.first_records);
  write_run_outputs(dir, "records_back", rep.second_records);
  write_out(dir / "first_edit.png", image_png(rep.first_edit));
  write_out(dir / "edited.png", image_png(rep.second_edit));
  nlohmann::json j{{"distance", rep.distance},
                   {"first_steps", rep.first_records.size()},
                   {"second_steps", rep.second_records.size()},
                   {"model_hash", ck.model_hash()}};
  write_out(dir / "report.json", j.dump(2) + "\n");
  std::printf("drag-back distance to the original %.4f\n", rep.distance);
  return 0;
}

int cmd_eval(const std::string& tasks_path, const std::string& ckpt_flag, const std::string& config_path,
             const std::string& out, bool baseline, int jobs) {
  std::vector<DragTask> tasks;
  try {
    tasks = load_tasks(tasks_path);
  } catch (const ConfigError& e) {
    throw InputError(e.what());
  }
  RunConfig rc;
  rc.ckpt = ckpt_flag.empty() ? default_ckpt() : ckpt_flag;
  if (!config_path.empty()) apply_run_file(rc, read_json_file(config_path));
  if (!ckpt_flag.empty()) rc.ckpt = ckpt_flag;
  PipelineConfig cfg = baseline ? ablation_baseline(rc.pipeline) : rc.pipeline;
  cfg.validate();
  const Checkpoint ck = open_checkpoint(rc.ckpt);
  const auto model = ck.model();
  const auto sched = ck.schedule.build();

  std::vector<TaskOutcome> rows(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) rows[i] = run_task(tasks[i], model, sched, cfg);
  };
  std::vector<std::thread> pool;
  for (int i = 1; i < std::max(1, jobs); ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  const fs::path dir(out);
  fs::create_directories(dir / "curves");
  fs::create_directories(dir / "records");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& o = rows[i];
    write_out(dir / "records" / (o.id + ".jsonl"), records_jsonl(o.records));
    if (!o.records.empty()) write_out(dir / "curves" / (o.id + ".csv"), curves_csv(curves(o.records)));
    if (o.status == SessionStatus::done) write_out(dir / (o.id + ".png"), image_png(o.edited));
    std::printf("%-8s %-6s dT %.2f -> %.2f  DOO %2d  ILFA %3d  md %.2f  m-md %.2f  fid %.3f  %.1fs\n", o.id.c_str(),
                to_string(o.status).c_str(), o.initial_dT, o.final_dT, o.doo_steps, o.ilfa_steps, o.md, o.m_md,
                o.fidelity, o.wall_s);
  }
  nlohmann::json meta{{"tasks_file", tasks_path},
                      {"ckpt", rc.ckpt},
                      {"model_hash", ck.model_hash()},
                      {"config", config_to_json(cfg)},
                      {"baseline", baseline}};
  const auto report = eval_report(rows, meta);
  write_out(dir / "report.json", report.dump(2) + "\n");
  const auto& agg = report["aggregate"];
  std::printf("median dT %.2f -> %.2f, %d/%zu runs with ILFA_ONLY, md mean %.2f, %.1fs total\n",
              agg["initial_dT_median"].get<double>(), agg["final_dT_median"].get<double>(),
              agg["runs_with_ilfa_only"].get<int>(), rows.size(), agg["md_mean"].get<double>(),
              agg["wall_s_total"].get<double>());
  for (const auto& o : rows)
    if (o.status != SessionStatus::done) return 2;
  return 0;
}

Service* g_service = nullptr;

int cmd_serve(const std::string& ckpt_flag, const std::string& data_dir, int port, int workers) {
  ServiceConfig sc;
  sc.data_dir = data_dir;
  sc.workers = workers;
  if (workers < 1) throw InputError("--workers must be >= 1");
  Service svc(open_checkpoint(ckpt_flag.empty() ? default_ckpt() : ckpt_flag), sc);
  g_service = &svc;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  log::info("listening on 127.0.0.1:" + std::to_string(port) + ", sessions under " + data_dir);
  if (!svc.listen("127.0.0.1", port)) {
    g_service = nullptr;
    std::fprintf(stderr, "cannot listen on port %d\n", port);
    return 2;
  }
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"draglora: desk-scale drag editing with online LoRA"};
  app.require_subcommand(1);
  std::string log_level = env_or("DRAGLORA_LOG", "info");
  app.add_option("--log", log_level, "debug|info|warn|error");

  auto* train = app.add_subcommand("train-toy", "Generate the shape dataset and train the toy denoiser");
  std::uint64_t tseed = 0;
  int tsteps = 6000, timages = 2000, tbatch = 8;
  double tlr = 2e-3;
  std::string tout = "toy.dlc", tcurve;
  train->add_option("--seed", tseed);
  train->add_option("--steps", tsteps);
  train->add_option("--images", timages);
  train->add_option("--batch", tbatch);
  train->add_option("--lr", tlr);
  train->add_option("--out", tout);
  train->add_option("--curve", tcurve, "write the loss curve JSON here");

  auto* recon = app.add_subcommand("recon-lora", "Fit the reconstruction adapter for one image");
  InputFlags rflags;
  rflags.add(recon, false);
  int rsteps = -1, rrank = 0;
  recon->add_option("--steps", rsteps);
  recon->add_option("--rank", rrank);

  auto* drag = app.add_subcommand("drag", "Run one drag edit");
  InputFlags dflags;
  dflags.add(drag);

  auto* back = app.add_subcommand("dragback", "Drag, then drag back with swapped points");
  InputFlags bflags;
  bflags.add(back);

  auto* eval = app.add_subcommand("eval", "Run a task suite and write report.json");
  std::string etasks = std::string(DRAGLORA_REPO_DATA) + "/tasks.json", eckpt, econfig, eout;
  bool ebaseline = false;
  int ejobs = 1;
  eval->add_option("--tasks", etasks);
  eval->add_option("--ckpt", eckpt);
  eval->add_option("--config", econfig);
  eval->add_option("--out", eout)->required();
  eval->add_flag("--baseline", ebaseline, "no-DDS / no-ILFA / no-ASS reference configuration");
  eval->add_option("--jobs", ejobs, "tasks run in parallel");

  auto* gen = app.add_subcommand("gen-tasks", "Write a seeded shape-translation task suite");
  std::uint64_t gseed = 1000;
  int gn = 10;
  double gpx = 6.0;
  std::string gout;
  gen->add_option("--seed", gseed);
  gen->add_option("--n", gn);
  gen->add_option("--drag-px", gpx);
  gen->add_option("--out", gout)->required();

  auto* serve = app.add_subcommand("serve", "Run the HTTP session service");
  std::string sckpt, sdir = env_or("DRAGLORA_DATA_DIR", "draglora_sessions");
  int sport = std::atoi(env_or("DRAGLORA_PORT", "8080").c_str()), sworkers = 2;
  serve->add_option("--ckpt", sckpt);
  serve->add_option("--data-dir", sdir);
  serve->add_option("--port", sport);
  serve->add_option("--workers", sworkers);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    log::set_level(log::parse_level(log_level.c_str()));
    if (train->parsed()) return cmd_train(tseed, tsteps, timages, tbatch, tlr, tout, tcurve);
    if (recon->parsed()) return cmd_recon(rflags, rsteps, rrank);
    if (drag->parsed()) return cmd_drag(dflags);
    if (back->parsed()) return cmd_dragback(bflags);
    if (eval->parsed()) return cmd_eval(etasks, eckpt, econfig, eout, ebaseline, ejobs);
    if (gen->parsed()) {
      write_file(gout, tasks_to_json(make_translation_tasks(gseed, gn, gpx)).dump(2) + "\n");
      return 0;
    }
    if (serve->parsed()) return cmd_serve(sckpt, sdir, sport, sworkers);
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failed: %s\n", e.what());
    return 2;
  }
  return 0;
}
