#pragma once

// Tensor container shared by model checkpoints and adapter files.
//
//   "DLC1" | u32 version | u64 header_len | header JSON | f32 LE payload | u64 FNV-1a(header + payload)
//
// The header lists every tensor (name, shape, offset) plus a hash of the payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "draglora/lora.hpp"
#include "draglora/schedule.hpp"
#include "draglora/unet.hpp"

namespace draglora {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, corrupt, hash_mismatch, version_mismatch, schema };
  CheckpointError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
  Kind kind;
};

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr char kContainerMagic[4] = {'D', 'L', 'C', '1'};

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct TensorContainer {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor<float>> tensors;
};

inline std::uint64_t payload_hash(const std::map<std::string, Tensor<float>>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : tensors) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(t.data.data(), t.size() * sizeof(float), h);
  }
  return h;
}

inline std::string serialize_container(const TensorContainer& c) {
  nlohmann::json header = c.meta;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    index.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  header["tensors"] = index;
  header["tensor_hash"] = hex64(payload_hash(c.tensors));
  const std::string hs = header.dump();

  std::string out;
  out.append(kContainerMagic, 4);
  auto put = [&out](const auto& v) { out.append(reinterpret_cast<const char*>(&v), sizeof v); };
  put(kContainerVersion);
  put(static_cast<std::uint64_t>(hs.size()));
  const std::size_t body_start = out.size();
  out += hs;
  for (const auto& [name, t] : c.tensors) out.append(reinterpret_cast<const char*>(t.data.data()), t.size() * sizeof(float));
  put(fnv1a(out.data() + body_start, out.size() - body_start));
  return out;
}

inline TensorContainer parse_container(const std::string& bytes) {
  using K = CheckpointError::Kind;
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kContainerMagic, 4) != 0) {
    throw CheckpointError(K::corrupt, "corrupt checkpoint: bad magic or truncated header");
  }
  std::uint32_t version;
  std::uint64_t hlen;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&hlen, bytes.data() + 8, 8);
  if (version != kContainerVersion) {
    throw CheckpointError(K::version_mismatch, "checkpoint version " + std::to_string(version) + " unsupported (expected " +
                                                   std::to_string(kContainerVersion) + ")");
  }
  if (hlen > bytes.size() || 16 + hlen + 8 > bytes.size()) throw CheckpointError(K::corrupt, "corrupt checkpoint: truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(K::corrupt, std::string("corrupt checkpoint header: ") + e.what());
  }
  std::uint64_t payload_bytes = 0;
  try {
    for (const auto& e : header.at("tensors")) payload_bytes += shape_numel(e.at("shape").get<std::vector<int>>()) * sizeof(float);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(K::corrupt, std::string("corrupt checkpoint index: ") + e.what());
  }
  if (bytes.size() != 16 + hlen + payload_bytes + 8) throw CheckpointError(K::corrupt, "corrupt checkpoint: truncated or oversized payload");

  std::uint64_t trailer;
  std::memcpy(&trailer, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a(bytes.data() + 16, bytes.size() - 24) != trailer) {
    throw CheckpointError(K::hash_mismatch, "checkpoint hash mismatch: header or payload modified");
  }

  TensorContainer c;
  const char* payload = bytes.data() + 16 + hlen;
  for (const auto& e : header.at("tensors")) {
    Tensor<float> t(e.at("shape").get<std::vector<int>>());
    std::memcpy(t.data.data(), payload + e.at("offset").get<std::uint64_t>(), t.size() * sizeof(float));
    c.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
  }
  if (hex64(payload_hash(c.tensors)) != header.value("tensor_hash", "")) {
    throw CheckpointError(K::hash_mismatch, "checkpoint tensor hash does not match header");
  }
  header.erase("tensors");
  c.meta = std::move(header);
  return c;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Model checkpoints

struct ScheduleParams {
  int train_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int inference_steps = 50;

  NoiseSchedule build() const { return build_schedule(train_steps, beta_start, beta_end, inference_steps); }
  bool operator==(const ScheduleParams&) const = default;
};

inline void to_json(nlohmann::json& j, const ScheduleParams& s) {
  j = {{"train_steps", s.train_steps}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}, {"inference_steps", s.inference_steps}};
}
inline void from_json(const nlohmann::json& j, ScheduleParams& s) {
  s.train_steps = j.at("train_steps").get<int>();
  s.beta_start = j.at("beta_start").get<double>();
  s.beta_end = j.at("beta_end").get<double>();
  s.inference_steps = j.at("inference_steps").get<int>();
}

struct Checkpoint {
  UNetConfig arch;
  ScheduleParams schedule;
  std::uint64_t seed = 0;
  std::string dataset_hash;
  nlohmann::json extra = nlohmann::json::object();
  std::map<std::string, Tensor<float>> params;

  ToyUNet<float> model() const {
    ToyUNet<float> m(arch, 0);
    m.load_parameters(params);
    return m;
  }

  // Identifies the weights; adapters record it to refuse mismatched bases.
  std::string model_hash() const { return hex64(payload_hash(params)); }
};

inline Checkpoint make_checkpoint(const ToyUNet<float>& model, const ScheduleParams& sched, std::uint64_t seed,
                                  const std::string& dataset_hash) {
  return {model.config(), sched, seed, dataset_hash, nlohmann::json::object(), model.parameters()};
}

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  TensorContainer c;
  c.meta = {{"kind", "model"},
            {"format_version", kContainerVersion},
            {"arch", ck.arch},
            {"schedule", ck.schedule},
            {"seed", ck.seed},
            {"dataset_hash", ck.dataset_hash},
            {"extra", ck.extra}};
  c.tensors = ck.params;
  return serialize_container(c);
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  TensorContainer c = parse_container(bytes);
  if (c.meta.value("kind", "") != "model") throw CheckpointError(CheckpointError::Kind::schema, "container is not a model checkpoint");
  Checkpoint ck;
  try {
    ck.arch = c.meta.at("arch").get<UNetConfig>();
    ck.schedule = c.meta.at("schedule").get<ScheduleParams>();
    ck.seed = c.meta.at("seed").get<std::uint64_t>();
    ck.dataset_hash = c.meta.at("dataset_hash").get<std::string>();
    ck.extra = c.meta.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::schema, std::string("checkpoint header: ") + e.what());
  }
  ck.params = std::move(c.tensors);
  try {
    (void)ck.model();
  } catch (const ShapeError& e) {
    throw CheckpointError(CheckpointError::Kind::schema, std::string("checkpoint tensors do not match architecture: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file(path, serialize_checkpoint(ck)); }
inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// Adapter files

inline std::string serialize_adapter(const LoRAAdapter<float>& a, const std::string& base_model_hash) {
  TensorContainer c;
  c.meta = {{"kind", "adapter"}, {"rank", a.rank}, {"scale", a.scale}, {"base_model_hash", base_model_hash}};
  for (const auto& [id, p] : a.layers) {
    c.tensors[id + ".A"] = p.A;
    c.tensors[id + ".B"] = p.B;
  }
  return serialize_container(c);
}

inline LoRAAdapter<float> parse_adapter(const std::string& bytes, const std::string& expected_base_hash = "") {
  TensorContainer c = parse_container(bytes);
  if (c.meta.value("kind", "") != "adapter") throw CheckpointError(CheckpointError::Kind::schema, "container is not an adapter");
  if (!expected_base_hash.empty() && c.meta.value("base_model_hash", "") != expected_base_hash) {
    throw CheckpointError(CheckpointError::Kind::hash_mismatch, "adapter was trained for a different base model");
  }
  LoRAAdapter<float> a;
  a.rank = c.meta.at("rank").get<int>();
  a.scale = c.meta.at("scale").get<double>();
  for (auto& [name, t] : c.tensors) {
    const auto dot = name.rfind('.');
    if (dot == std::string::npos) throw CheckpointError(CheckpointError::Kind::schema, "bad adapter entry " + name);
    const std::string id = name.substr(0, dot), part = name.substr(dot + 1);
    if (part == "A") a.layers[id].A = std::move(t);
    else if (part == "B") a.layers[id].B = std::move(t);
    else throw CheckpointError(CheckpointError::Kind::schema, "bad adapter entry " + name);
  }
  return a;
}

}  // namespace draglora
