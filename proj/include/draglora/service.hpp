#pragma once

// HTTP session service: one directory per session (envelope.json, records.jsonl, PNGs),
// a fixed worker pool running session pipelines, and SSE replay/follow of step records.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "draglora/checkpoint.hpp"
#include "draglora/eval.hpp"
#include "draglora/image_io.hpp"
#include "draglora/pipeline.hpp"
#include "draglora/toyworld.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines a `_res` macro that clashes
// with Eigen parameter names.
#include <httplib.h>

namespace draglora {

struct ServiceConfig {
  std::string data_dir = "draglora_sessions";
  int workers = 2;
  int queue_capacity = 8;  // jobs waiting beyond the running ones
  std::size_t max_image_bytes = 1 << 20;
  PipelineConfig pipeline;
};

// A request problem that maps to a 4xx status, with the offending field path.
struct RequestError {
  int status = 400;
  std::string message;
  std::string field;
};

// Fixed-size FIFO pool. submit() refuses work once running + queued reaches the limit.
class WorkerPool {
 public:
  WorkerPool(int workers, int queue_capacity) : limit_(workers + queue_capacity) {
    for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { loop(); });
  }
  ~WorkerPool() {
    {
      std::lock_guard lk(m_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  bool submit(std::function<void()> job) {
    std::lock_guard lk(m_);
    if (stop_ || static_cast<int>(queue_.size()) + busy_ >= limit_) return false;
    queue_.push_back(std::move(job));
    cv_.notify_one();
    return true;
  }

  // Reserves room for `n` jobs at once (a session's prepare + drag must not be split).
  bool has_room(int n) {
    std::lock_guard lk(m_);
    return static_cast<int>(queue_.size()) + busy_ + n <= limit_;
  }

 private:
  void loop() {
    while (true) {
      std::function<void()> job;
      {
        std::unique_lock lk(m_);
        cv_.wait(lk, [&] { return stop_ || !queue_.empty(); });
        if (stop_ || queue_.empty()) return;  // queued work is dropped on shutdown
        job = std::move(queue_.front());
        queue_.pop_front();
        ++busy_;
      }
      try {
        job();
      } catch (const std::exception& e) {
        log::error(std::string("worker job threw: ") + e.what());
      }
      std::lock_guard lk(m_);
      --busy_;
    }
  }

  int limit_;
  int busy_ = 0;
  bool stop_ = false;
  std::mutex m_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> queue_;
  std::vector<std::thread> threads_;
};

inline std::string new_uuid() {
  static std::mutex m;
  static std::mt19937_64 gen{std::random_device{}()};
  std::lock_guard lk(m);
  std::uint64_t a = gen(), b = gen();
  a = (a & 0xFFFFFFFFFFFF0FFFull) | 0x0000000000004000ull;
  b = (b & 0x3FFFFFFFFFFFFFFFull) | 0x8000000000000000ull;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx", static_cast<unsigned>(a >> 32),
                static_cast<unsigned>((a >> 16) & 0xFFFF), static_cast<unsigned>(a & 0xFFFF),
                static_cast<unsigned>(b >> 48), static_cast<unsigned long long>(b & 0xFFFFFFFFFFFFull));
  return buf;
}

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// "px,py,gx,gy" arrays or {"p":[x,y],"g":[x,y]} objects.
inline std::vector<DragPoint> parse_points_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw RequestError{400, "points must be a non-empty array", "points"};
  std::vector<DragPoint> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string field = "points[" + std::to_string(i) + "]";
    const auto& e = j[i];
    auto num = [&](const nlohmann::json& v) {
      if (!v.is_number()) throw RequestError{400, "coordinates must be numbers", field};
      return v.get<double>();
    };
    if (e.is_array() && e.size() == 4) {
      out.push_back({{num(e[0]), num(e[1])}, {num(e[2]), num(e[3])}});
    } else if (e.is_object() && e.contains("p") && e.contains("g") && e["p"].size() == 2 && e["g"].size() == 2) {
      out.push_back({{num(e["p"][0]), num(e["p"][1])}, {num(e["g"][0]), num(e["g"][1])}});
    } else {
      throw RequestError{400, "expected [px,py,gx,gy] or {\"p\":[x,y],\"g\":[x,y]}", field};
    }
  }
  return out;
}

class Service {
 public:
  Service(Checkpoint ck, ServiceConfig cfg)
      : cfg_(std::move(cfg)),
        ck_(std::move(ck)),
        model_(ck_.model()),
        sched_(ck_.schedule.build()),
        model_hash_(ck_.model_hash()),
        pool_(std::make_unique<WorkerPool>(cfg_.workers, cfg_.queue_capacity)) {
    cfg_.pipeline.validate(&sched_);
    std::filesystem::create_directories(sessions_dir());
    reload();
    routes();
  }

  ~Service() {
    stop();
    for (auto& [id, e] : sessions_) e->cancel = true;
    pool_.reset();  // joins workers
  }

  httplib::Server& server() { return http_; }
  int bind_any(const std::string& host = "127.0.0.1") { return http_.bind_to_any_port(host); }
  bool listen_after_bind() { return http_.listen_after_bind(); }
  bool listen(const std::string& host, int port) { return http_.listen(host, port); }
  void stop() { http_.stop(); }

  // Blocks until the session reaches done or failed (tests and batch clients).
  std::string wait_terminal(const std::string& id, std::chrono::seconds timeout = std::chrono::seconds(600)) {
    auto e = find(id);
    if (!e) return "";
    std::unique_lock lk(e->m);
    e->cv.wait_for(lk, timeout, [&] { return e->finished; });
    return e->envelope["status"].get<std::string>();
  }

 private:
  struct Entry {
    std::mutex m;
    std::condition_variable cv;
    nlohmann::json envelope;
    std::vector<std::string> events;  // SSE payloads, index = event id
    bool finished = false;            // terminal event appended
    std::atomic<bool> cancel{false};
    std::filesystem::path dir;
    // inputs and prepared state (live sessions only)
    Tensor<float> image;
    Tensor<float> mask;
    std::vector<DragPoint> points;
    int cls = 0;
    PipelineConfig cfg;
    std::optional<DragSession<float>> session;
    std::promise<void> prepared_promise;
    std::shared_future<void> prepared;
  };
  using EntryPtr = std::shared_ptr<Entry>;

  std::filesystem::path sessions_dir() const { return std::filesystem::path(cfg_.data_dir) / "sessions"; }

  EntryPtr find(const std::string& id) {
    std::lock_guard lk(m_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  static void write_text(const std::filesystem::path& p, const std::string& s) {
    const auto tmp = p.string() + ".tmp";
    write_file(tmp, s);
    std::filesystem::rename(tmp, p);
  }

  // Caller holds e.m.
  void persist(Entry& e) { write_text(e.dir / "envelope.json", e.envelope.dump(2) + "\n"); }

  void set_status(Entry& e, const std::string& status, const std::string& failure = "") {
    e.envelope["status"] = status;
    e.envelope["failure"] = failure;
    persist(e);
  }

  // Appends the terminal event and wakes followers. Caller holds e.m.
  void finish(Entry& e) {
    nlohmann::json ev{{"type", "status"}, {"status", e.envelope["status"]}, {"failure", e.envelope["failure"]}};
    e.events.push_back(ev.dump());
    e.finished = true;
    e.cv.notify_all();
  }

  void fail(Entry& e, const std::string& why) {
    std::lock_guard lk(e.m);
    if (e.finished) return;
    set_status(e, "failed", why);
    finish(e);
  }

  // Sessions found on disk never resume: unfinished ones become failed.
  void reload() {
    for (const auto& d : std::filesystem::directory_iterator(sessions_dir())) {
      const auto env_path = d.path() / "envelope.json";
      if (!std::filesystem::exists(env_path)) continue;
      auto e = std::make_shared<Entry>();
      e->dir = d.path();
      try {
        e->envelope = nlohmann::json::parse(read_file(env_path.string()));
      } catch (const std::exception& ex) {
        log::warn("skipping unreadable session " + d.path().string() + ": " + ex.what());
        continue;
      }
      const std::string status = e->envelope.value("status", "failed");
      if (status != "done" && status != "failed") set_status(*e, "failed", "service restarted");
      for (const char* name : {"records.jsonl", "records_back.jsonl"}) {
        const auto p = d.path() / name;
        if (!std::filesystem::exists(p)) continue;
        std::istringstream in(read_file(p.string()));
        std::string line;
        const int round = std::string(name) == "records.jsonl" ? 1 : 2;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          e->events.push_back(record_event(nlohmann::json::parse(line), round));
        }
      }
      finish(*e);
      const std::string id = e->envelope.value("id", d.path().filename().string());
      if (e->envelope.contains("idempotency_key") && e->envelope["idempotency_key"].is_string()) {
        idem_[e->envelope["idempotency_key"].get<std::string>()] = id;
      }
      sessions_[id] = e;
    }
  }

  static std::string record_event(const nlohmann::json& rec, int round) {
    return nlohmann::json{{"type", "record"}, {"round", round}, {"record", rec}}.dump();
  }

  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void reply_error(httplib::Response& res, const RequestError& e) {
    nlohmann::json body{{"error", e.message}};
    if (!e.field.empty()) body["field"] = e.field;
    reply(res, e.status, body);
  }

  // Form field lookup across multipart parts and JSON bodies.
  struct Payload {
    std::map<std::string, std::string> fields;
  };

  Payload read_payload(const httplib::Request& req) const {
    Payload p;
    if (req.is_multipart_form_data()) {
      for (const auto& [name, part] : req.files) p.fields[name] = part.content;
      return p;
    }
    const auto j = nlohmann::json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw RequestError{400, "body must be multipart/form-data or a JSON object", ""};
    for (const auto& [k, v] : j.items()) p.fields[k] = v.is_string() ? v.get<std::string>() : v.dump();
    return p;
  }

  static nlohmann::json parse_field_json(const Payload& p, const std::string& name) {
    const auto j = nlohmann::json::parse(p.fields.at(name), nullptr, false);
    if (j.is_discarded()) throw RequestError{400, "field is not valid JSON", name};
    return j;
  }

  void create_session(const httplib::Request& req, httplib::Response& res) {
    const std::string idem = req.get_header_value("Idempotency-Key");
    if (!idem.empty()) {
      std::lock_guard lk(m_);
      auto it = idem_.find(idem);
      if (it != idem_.end()) {
        auto e = sessions_.at(it->second);
        std::lock_guard elk(e->m);
        return reply(res, 200, e->envelope);
      }
    }
    auto e = std::make_shared<Entry>();
    Payload p = read_payload(req);
    const auto H = model_.latent_shape()[1], W = model_.latent_shape()[2];

    SceneSpec scene;
    bool from_generator = false;
    if (p.fields.count("image")) {
      if (p.fields["image"].size() > cfg_.max_image_bytes) throw RequestError{413, "image exceeds the size limit", "image"};
      try {
        e->image = image_from_png(p.fields["image"]);
      } catch (const ImageError& ex) {
        throw RequestError{400, ex.what(), "image"};
      }
      if (e->image.dim(1) != H || e->image.dim(2) != W) {
        throw RequestError{400, "image must be " + std::to_string(W) + "x" + std::to_string(H), "image"};
      }
    } else if (p.fields.count("generator")) {
      try {
        scene = parse_field_json(p, "generator").get<SceneSpec>();
      } catch (const nlohmann::json::exception& ex) {
        throw RequestError{400, ex.what(), "generator"};
      }
      if (scene.image_size != H || scene.cls < 0 || scene.cls > 2) throw RequestError{400, "unsupported scene", "generator"};
      e->image = render_scene(scene);
      from_generator = true;
    } else {
      throw RequestError{400, "an image PNG or a generator scene is required", "image"};
    }

    e->cls = from_generator ? scene.cls : 0;
    if (p.fields.count("cls")) {
      try {
        e->cls = std::stoi(p.fields["cls"]);
      } catch (const std::exception&) {
        throw RequestError{400, "cls must be an integer", "cls"};
      }
      if (e->cls < 0 || e->cls >= ck_.arch.num_classes) throw RequestError{400, "class id out of range", "cls"};
    }

    if (!p.fields.count("points")) throw RequestError{400, "points are required", "points"};
    e->points = parse_points_json(parse_field_json(p, "points"));
    for (std::size_t i = 0; i < e->points.size(); ++i) {
      for (const Point2& q : {e->points[i].p, e->points[i].g}) {
        if (q.x < 0 || q.y < 0 || q.x > W - 1 || q.y > H - 1) {
          throw RequestError{400, "point outside the image", "points[" + std::to_string(i) + "]"};
        }
      }
    }

    const std::string mask_field = p.fields.count("mask") ? p.fields["mask"] : "all";
    try {
      if (mask_field == "all") {
        e->mask = full_mask(H, W);
      } else if (!mask_field.empty() && mask_field[0] == '{') {
        e->mask = mask_from_rle(parse_field_json(p, "mask"));
      } else {
        e->mask = png_mask(mask_field);
      }
    } catch (const ImageError& ex) {
      throw RequestError{400, ex.what(), "mask"};
    }
    if (e->mask.dim(1) != H || e->mask.dim(2) != W) throw RequestError{400, "mask does not match the image grid", "mask"};

    e->cfg = cfg_.pipeline;
    if (p.fields.count("config")) {
      try {
        e->cfg = apply_config_json(e->cfg, parse_field_json(p, "config"));
        e->cfg.validate(&sched_);
      } catch (const ConfigError& ex) {
        throw RequestError{400, ex.what(), "config"};
      }
    }

    const std::string id = new_uuid();
    e->dir = sessions_dir() / id;
    std::filesystem::create_directories(e->dir);
    write_file((e->dir / "image.png").string(), image_png(e->image));
    write_file((e->dir / "mask.png").string(), mask_png(e->mask));
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& dp : e->points) pts.push_back({dp.p.x, dp.p.y, dp.g.x, dp.g.y});
    e->envelope = {{"id", id},
                   {"status", "idle"},
                   {"failure", ""},
                   {"kind", nullptr},
                   {"created", utc_now()},
                   {"config", config_to_json(e->cfg)},
                   {"cls", e->cls},
                   {"points", pts},
                   {"model_hash", model_hash_},
                   {"idempotency_key", idem.empty() ? nlohmann::json(nullptr) : nlohmann::json(idem)},
                   {"artifacts",
                    {{"image", "image.png"}, {"mask", "mask.png"}, {"records", "records.jsonl"}, {"result", "edited.png"},
                     {"report", "report.json"}}}};
    if (from_generator) e->envelope["generator"] = scene;
    e->prepared = e->prepared_promise.get_future().share();

    std::lock_guard lk(m_);
    if (!idem.empty() && idem_.count(idem)) {  // lost a race with an identical request
      std::filesystem::remove_all(e->dir);
      auto other = sessions_.at(idem_.at(idem));
      std::lock_guard elk(other->m);
      return reply(res, 200, other->envelope);
    }
    // Room for the preparation and a following drag.
    if (!pool_->has_room(2) || !pool_->submit([this, e] { prepare(e); })) {
      std::filesystem::remove_all(e->dir);
      throw RequestError{503, "worker pool saturated", ""};
    }
    {
      std::lock_guard elk(e->m);
      persist(*e);
    }
    sessions_[id] = e;
    if (!idem.empty()) idem_[idem] = id;
    std::lock_guard elk(e->m);
    reply(res, 201, e->envelope);
  }

  void prepare(const EntryPtr& e) {
    try {
      auto s = start_session(e->image, e->mask, e->points, e->cls, model_, sched_, e->cfg);
      std::lock_guard lk(e->m);
      s.id = e->envelope["id"];
      e->envelope["recon"] = {{"validation_before", s.recon_val_before}, {"validation_after", s.recon_val_after}};
      persist(*e);
      e->session = std::move(s);
    } catch (const std::exception& ex) {
      fail(*e, std::string("preparation failed: ") + ex.what());
    }
    e->prepared_promise.set_value();
  }

  // Marks the session running for `kind`; false when it is not idle.
  bool claim(Entry& e, const std::string& kind) {
    std::lock_guard lk(e.m);
    if (e.envelope["status"] != "idle") return false;
    e.envelope["kind"] = kind;
    set_status(e, "running");
    return true;
  }

  StepSink sink_for(const EntryPtr& e, int round, const std::string& file) {
    return [this, e, round, file](const StepRecord& r) {
      const std::string line = record_line(r);
      {
        std::ofstream out(e->dir / file, std::ios::app | std::ios::binary);
        out << line << "\n";
      }
      std::lock_guard lk(e->m);
      e->events.push_back(record_event(nlohmann::json::parse(line), round));
      e->cv.notify_all();
    };
  }

  nlohmann::json session_report(const DragSession<float>& s, const Tensor<float>& edited) {
    std::vector<Point2> p, g;
    for (const auto& pp : s.pairs) {
      p.push_back(pp.p);
      g.push_back(pp.g);
    }
    nlohmann::json rep = {{"status", to_string(s.status)},
                          {"steps", s.records.size()},
                          {"doo_steps", s.doo_records()},
                          {"ilfa_steps", s.ilfa_records()},
                          {"initial_dT", s.initial_mean_dT()},
                          {"final_dT", s.mean_dT()},
                          {"background_identical", background_preserved(s)},
                          {"md", mean_distance(model_, s.image, edited, p, g, s.cls, sched_).md},
                          {"fidelity", fidelity(model_, s.image, edited, s.cls, sched_)},
                          {"model_hash", model_hash_}};
    return rep;
  }

  void run_drag_job(const EntryPtr& e) {
    e->prepared.wait();
    DragSession<float>* s = nullptr;
    {
      std::lock_guard lk(e->m);
      if (e->finished) return;  // preparation failed or cancelled
      s = &*e->session;
    }
    PipelineHooks<float> hooks;
    hooks.cancelled = [e] { return e->cancel.load(); };
    try {
      run_drag(*s, model_, sched_, sink_for(e, 1, "records.jsonl"), hooks);
      if (s->status != SessionStatus::done) return fail(*e, s->failure);
      const Tensor<float> edited = finalize(*s, model_, sched_);
      write_file((e->dir / "edited.png").string(), image_png(edited));
      write_text(e->dir / "report.json", session_report(*s, edited).dump(2) + "\n");
      std::lock_guard lk(e->m);
      set_status(*e, "done");
      finish(*e);
    } catch (const std::exception& ex) {
      fail(*e, ex.what());
    }
  }

  void run_dragback_job(const EntryPtr& e) {
    e->prepared.wait();
    {
      std::lock_guard lk(e->m);
      if (e->finished) return;
    }
    PipelineHooks<float> hooks;
    hooks.cancelled = [e] { return e->cancel.load(); };
    try {
      auto rep = drag_back(e->image, e->mask, e->points, e->cls, model_, sched_, e->cfg, sink_for(e, 1, "records.jsonl"),
                           sink_for(e, 2, "records_back.jsonl"), hooks);
      write_file((e->dir / "first_edit.png").string(), image_png(rep.first_edit));
      write_file((e->dir / "edited.png").string(), image_png(rep.second_edit));
      auto stream = [](const std::vector<StepRecord>& recs) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& r : recs) a.push_back(to_json_value(r));
        return a;
      };
      nlohmann::json report{{"status", "done"},
                            {"distance", rep.distance},
                            {"first_records", stream(rep.first_records)},
                            {"second_records", stream(rep.second_records)},
                            {"model_hash", model_hash_}};
      write_text(e->dir / "report.json", report.dump(2) + "\n");
      std::lock_guard lk(e->m);
      set_status(*e, "done");
      finish(*e);
    } catch (const SessionError& ex) {
      fail(*e, e->cancel ? "cancelled" : ex.what());
    } catch (const std::exception& ex) {
      fail(*e, ex.what());
    }
  }

  void start_job(const httplib::Request& req, httplib::Response& res, const std::string& kind) {
    auto e = find(req.path_params.at("id"));
    if (!e) throw RequestError{404, "unknown session", "id"};
    if (!claim(*e, kind)) {
      std::lock_guard lk(e->m);
      throw RequestError{409, "session is " + e->envelope["status"].get<std::string>() + ", expected idle", ""};
    }
    const bool ok = pool_->submit([this, e, kind] { kind == "drag" ? run_drag_job(e) : run_dragback_job(e); });
    if (!ok) {
      std::lock_guard lk(e->m);
      e->envelope["kind"] = nullptr;
      set_status(*e, "idle");
      throw RequestError{503, "worker pool saturated", ""};
    }
    std::lock_guard lk(e->m);
    reply(res, 202, e->envelope);
  }

  void events(const httplib::Request& req, httplib::Response& res) {
    auto e = find(req.path_params.at("id"));
    if (!e) throw RequestError{404, "unknown session", "id"};
    std::string last = req.get_header_value("Last-Event-ID");
    if (last.empty() && req.has_param("last_event_id")) last = req.get_param_value("last_event_id");
    std::size_t next = 0;
    if (!last.empty()) {
      try {
        next = static_cast<std::size_t>(std::stoll(last) + 1);
      } catch (const std::exception&) {
        throw RequestError{400, "Last-Event-ID must be an integer", "Last-Event-ID"};
      }
    }
    auto cursor = std::make_shared<std::size_t>(next);
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [e, cursor](std::size_t, httplib::DataSink& sink) {
      std::unique_lock lk(e->m);
      e->cv.wait_for(lk, std::chrono::milliseconds(500), [&] { return e->events.size() > *cursor || e->finished; });
      std::string out;
      for (; *cursor < e->events.size(); ++*cursor) {
        const bool terminal = e->finished && *cursor + 1 == e->events.size();
        out += "id: " + std::to_string(*cursor) + "\nevent: " + (terminal ? "status" : "record") +
               "\ndata: " + e->events[*cursor] + "\n\n";
      }
      const bool done = e->finished && *cursor >= e->events.size();
      lk.unlock();
      if (!out.empty() && !sink.write(out.data(), out.size())) return false;
      if (out.empty() && !sink.is_writable()) return false;
      if (done) sink.done();
      return true;
    });
  }

  void routes() {
    auto guard = [](auto fn) {
      return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
          fn(req, res);
        } catch (const RequestError& e) {
          reply_error(res, e);
        } catch (const std::exception& e) {
          reply_error(res, {500, e.what(), ""});
        }
      };
    };
    http_.set_payload_max_length(cfg_.max_image_bytes * 4);
    http_.Get("/v1/healthz", guard([this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"status", "ok"}, {"model_hash", model_hash_}, {"workers", cfg_.workers}});
    }));
    http_.Post("/v1/sessions", guard([this](const httplib::Request& req, httplib::Response& res) { create_session(req, res); }));
    http_.Get("/v1/sessions", guard([this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json arr = nlohmann::json::array();
      std::lock_guard lk(m_);
      for (const auto& [id, e] : sessions_) {
        std::lock_guard elk(e->m);
        arr.push_back(e->envelope);
      }
      reply(res, 200, {{"sessions", arr}});
    }));
    http_.Get("/v1/sessions/:id", guard([this](const httplib::Request& req, httplib::Response& res) {
      auto e = find(req.path_params.at("id"));
      if (!e) throw RequestError{404, "unknown session", "id"};
      std::lock_guard lk(e->m);
      reply(res, 200, e->envelope);
    }));
    http_.Post("/v1/sessions/:id/drag",
               guard([this](const httplib::Request& req, httplib::Response& res) { start_job(req, res, "drag"); }));
    http_.Post("/v1/sessions/:id/dragback",
               guard([this](const httplib::Request& req, httplib::Response& res) { start_job(req, res, "dragback"); }));
    http_.Post("/v1/sessions/:id/cancel", guard([this](const httplib::Request& req, httplib::Response& res) {
      auto e = find(req.path_params.at("id"));
      if (!e) throw RequestError{404, "unknown session", "id"};
      e->cancel = true;
      {
        std::lock_guard lk(e->m);
        if (e->finished) throw RequestError{409, "session already " + e->envelope["status"].get<std::string>(), ""};
        // an idle session has no job that would observe the flag
        if (e->envelope["status"] == "idle") {
          set_status(*e, "failed", "cancelled");
          finish(*e);
        }
        reply(res, 202, e->envelope);
      }
    }));
    http_.Get("/v1/sessions/:id/events",
              guard([this](const httplib::Request& req, httplib::Response& res) { events(req, res); }));
    http_.Get("/v1/sessions/:id/result", guard([this](const httplib::Request& req, httplib::Response& res) {
      auto e = artifact_entry(req);
      res.set_content(read_file((e->dir / "edited.png").string()), "image/png");
    }));
    http_.Get("/v1/sessions/:id/report", guard([this](const httplib::Request& req, httplib::Response& res) {
      auto e = artifact_entry(req);
      res.set_content(read_file((e->dir / "report.json").string()), "application/json");
    }));
  }

  EntryPtr artifact_entry(const httplib::Request& req) {
    auto e = find(req.path_params.at("id"));
    if (!e) throw RequestError{404, "unknown session", "id"};
    std::lock_guard lk(e->m);
    if (e->envelope["status"] != "done") throw RequestError{409, "not done", ""};
    return e;
  }

  ServiceConfig cfg_;
  Checkpoint ck_;
  ToyUNet<float> model_;
  NoiseSchedule sched_;
  std::string model_hash_;
  std::mutex m_;
  std::map<std::string, EntryPtr> sessions_;
  std::map<std::string, std::string> idem_;
  std::unique_ptr<WorkerPool> pool_;
  httplib::Server http_;
};

}  // namespace draglora
