#pragma once

// Toy pixel-space UNet noise predictor.
//
//   stem -> down1.res (S) -> down1.down -> down2.res (S/2) -> down2.down -> down2.attn (S/4)
//        -> mid.res -> mid.attn -> up1.attn -> up x2 ++ skip2 -> up1.res (S/2)
//        -> up x2 ++ skip1 -> up2.res (S)  [feature layer]  -> out
//
// Timestep (sinusoidal + MLP) and class embeddings are summed and injected into every
// residual block. Attention projections q/k/v/out are the LoRA sites.

#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "draglora/autodiff.hpp"
#include "draglora/features.hpp"
#include "draglora/ops.hpp"
#include "draglora/rng.hpp"

namespace draglora {

struct UNetConfig {
  int channels = 3;
  int size = 32;
  int width = 32;
  int width2 = 64;
  int groups = 8;
  int temb_dim = 64;
  int num_classes = 3;
  bool attention = true;
  bool norm = true;

  int embed_dim() const { return 2 * temb_dim; }
  bool operator==(const UNetConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"channels", c.channels}, {"size", c.size},       {"width", c.width},
       {"width2", c.width2},     {"groups", c.groups},   {"temb_dim", c.temb_dim},
       {"num_classes", c.num_classes}, {"attention", c.attention}, {"norm", c.norm}};
}

inline void from_json(const nlohmann::json& j, UNetConfig& c) {
  c.channels = j.at("channels").get<int>();
  c.size = j.at("size").get<int>();
  c.width = j.at("width").get<int>();
  c.width2 = j.at("width2").get<int>();
  c.groups = j.at("groups").get<int>();
  c.temb_dim = j.at("temb_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.attention = j.value("attention", true);
  c.norm = j.value("norm", true);
}

// Small architecture used by the double-precision gradient checks.
inline UNetConfig reduced_unet_config() {
  UNetConfig c;
  c.size = 8;
  c.width = 4;
  c.width2 = 8;
  c.groups = 2;
  c.temb_dim = 8;
  return c;
}

struct LoraSiteInfo {
  std::string id;
  int d_in = 0;
  int d_out = 0;
};

// Low-rank factors bound onto a tape: effective weight W + scale * B * A.
template <class T>
struct LoraBinding {
  struct Site {
    Var<T> A;
    Var<T> B;
    T scale = T(1);
  };
  std::map<std::string, Site> sites;
};

template <class T>
struct DenoiserOutputs {
  Var<T> eps;
  Var<T> features;  // C_f x H x W at latent resolution
  Var<T> mid;       // bottleneck activation
};

// Anything the editing pipeline can drive: the toy UNet or a test stub.
template <class T>
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::vector<int> latent_shape() const = 0;
  virtual std::vector<LoraSiteInfo> lora_sites() const = 0;
  virtual std::string feature_layer() const { return "up1.attn2"; }
  virtual DenoiserOutputs<T> forward(Tape<T>& tape, Var<T> z, int timestep, int cls,
                                     const LoraBinding<T>* lora) const = 0;
};

template <class T>
class ToyUNet final : public Denoiser<T> {
 public:
  using ParamMap = std::map<std::string, Tensor<T>>;

  ToyUNet() = default;
  explicit ToyUNet(const UNetConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    validate(cfg);
    build_parameters();
    initialize(seed);
  }

  static void validate(const UNetConfig& c) {
    if (c.size % 4 != 0 || c.size < 4) throw ShapeError("UNet size must be a positive multiple of 4");
    if (c.width % c.groups != 0 || c.width2 % c.groups != 0) throw ShapeError("UNet widths must be divisible by groups");
    if (c.temb_dim % 2 != 0) throw ShapeError("temb_dim must be even");
    if (c.num_classes < 1) throw ShapeError("num_classes must be >= 1");
  }

  const UNetConfig& config() const { return cfg_; }
  ParamMap& parameters() { return params_; }
  const ParamMap& parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  std::vector<int> latent_shape() const override { return {cfg_.channels, cfg_.size, cfg_.size}; }

  std::vector<std::string> attention_layers() const {
    if (!cfg_.attention) return {};
    return {"down2.attn", "mid.attn", "up1.attn", "up1.attn2"};
  }

  std::vector<LoraSiteInfo> lora_sites() const override {
    std::vector<LoraSiteInfo> out;
    for (const auto& layer : attention_layers()) {
      for (const char* p : {"q", "k", "v", "out"}) out.push_back({layer + "." + p, cfg_.width2, cfg_.width2});
    }
    return out;
  }

  // Gaussian re-initialization of every parameter (used for randomized test nets).
  void randomize(std::uint64_t seed, double stddev) {
    Rng rng(seed);
    for (auto& [name, t] : params_) {
      for (auto& v : t.data) v = static_cast<T>(stddev * rng.normal());
    }
  }

  DenoiserOutputs<T> forward(Tape<T>& tape, Var<T> z, int timestep, int cls, const LoraBinding<T>* lora) const override {
    return run(tape, z, timestep, cls, lora, nullptr);
  }

  // Forward pass with every base parameter bound as a grad-requiring leaf; the bound
  // Vars are written to `bound` for reading gradients after backward.
  DenoiserOutputs<T> forward_trainable(Tape<T>& tape, Var<T> z, int timestep, int cls,
                                       std::map<std::string, Var<T>>& bound) const {
    return run(tape, z, timestep, cls, nullptr, &bound);
  }

  template <class U>
  ToyUNet<U> cast() const {
    ToyUNet<U> out;
    out.cfg_ = cfg_;
    for (const auto& [name, t] : params_) out.params_[name] = t.template cast<U>();
    return out;
  }

  // Adopts a parameter set (shapes must match the architecture exactly).
  void load_parameters(const ParamMap& params) {
    for (const auto& [name, t] : params_) {
      auto it = params.find(name);
      if (it == params.end()) throw ShapeError("missing parameter " + name);
      if (it->second.shape != t.shape) throw ShapeError("parameter shape mismatch for " + name);
    }
    if (params.size() != params_.size()) throw ShapeError("unexpected extra parameters");
    params_ = params;
  }

 private:
  template <class U>
  friend class ToyUNet;

  void add_param(const std::string& name, std::vector<int> shape) { params_[name] = Tensor<T>(std::move(shape)); }

  void add_norm(const std::string& name, int c) {
    add_param(name + ".g", {c});
    add_param(name + ".b", {c});
  }

  void add_res(const std::string& name, int cin, int cout) {
    add_norm(name + ".norm1", cin);
    add_param(name + ".conv1.w", {cout, cin, 3, 3});
    add_param(name + ".conv1.b", {cout});
    add_param(name + ".temb.w", {cout, cfg_.embed_dim()});
    add_param(name + ".temb.b", {cout});
    add_norm(name + ".norm2", cout);
    add_param(name + ".conv2.w", {cout, cout, 3, 3});
    add_param(name + ".conv2.b", {cout});
    if (cin != cout) {
      add_param(name + ".skip.w", {cout, cin, 1, 1});
      add_param(name + ".skip.b", {cout});
    }
  }

  void add_attn(const std::string& name, int c) {
    add_norm(name + ".norm", c);
    for (const char* p : {"q", "k", "v", "out"}) {
      add_param(name + "." + p + ".w", {c, c});
      add_param(name + "." + p + ".b", {c});
    }
  }

  void build_parameters() {
    const int E = cfg_.embed_dim();
    const int w1 = cfg_.width, w2 = cfg_.width2;
    add_param("time.fc1.w", {E, cfg_.temb_dim});
    add_param("time.fc1.b", {E});
    add_param("time.fc2.w", {E, E});
    add_param("time.fc2.b", {E});
    add_param("class.emb", {cfg_.num_classes, E});
    add_param("stem.w", {w1, cfg_.channels, 3, 3});
    add_param("stem.b", {w1});
    add_res("down1.res", w1, w1);
    add_param("down1.down.w", {w2, w1, 3, 3});
    add_param("down1.down.b", {w2});
    add_res("down2.res", w2, w2);
    add_param("down2.down.w", {w2, w2, 3, 3});
    add_param("down2.down.b", {w2});
    add_res("mid.res", w2, w2);
    if (cfg_.attention) {
      add_attn("down2.attn", w2);
      add_attn("mid.attn", w2);
      add_attn("up1.attn", w2);
      add_attn("up1.attn2", w2);
    }
    add_res("up1.res", 2 * w2, w2);
    add_res("up2.res", w2 + w1, w1);
    add_norm("out.norm", w1);
    add_param("out.conv.w", {cfg_.channels, w1, 3, 3});
    add_param("out.conv.b", {cfg_.channels});
  }

  static bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  }

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, t] : params_) {
      if (ends_with(name, ".g")) {
        t.fill(T(1));
      } else if (ends_with(name, ".b")) {
        t.fill(T(0));
      } else if (name == "class.emb") {
        for (auto& v : t.data) v = static_cast<T>(rng.normal());
      } else if (name == "out.conv.w" || ends_with(name, ".conv2.w") || ends_with(name, ".out.w")) {
        // Residual branches start near zero.
        const double fan_in = static_cast<double>(t.size() / static_cast<std::size_t>(t.dim(0)));
        for (auto& v : t.data) v = static_cast<T>(0.1 * rng.normal() / std::sqrt(fan_in));
      } else {
        const double fan_in = static_cast<double>(t.size() / static_cast<std::size_t>(t.dim(0)));
        for (auto& v : t.data) v = static_cast<T>(rng.normal() * std::sqrt(1.0 / fan_in));
      }
    }
  }

  struct Ctx {
    Tape<T>& tape;
    const LoraBinding<T>* lora;
    std::map<std::string, Var<T>>* bound;
  };

  Var<T> p(Ctx& ctx, const std::string& name) const {
    const Tensor<T>& t = params_.at(name);
    Var<T> v = ctx.tape.leaf(t, ctx.bound != nullptr);
    if (ctx.bound) (*ctx.bound)[name] = v;
    return v;
  }

  Var<T> norm(Ctx& ctx, const std::string& name, Var<T> x) const {
    if (!cfg_.norm) return x;
    return ops::group_norm(x, p(ctx, name + ".g"), p(ctx, name + ".b"), cfg_.groups);
  }

  Var<T> res(Ctx& ctx, const std::string& name, Var<T> x, Var<T> emb) const {
    Var<T> h = ops::silu(norm(ctx, name + ".norm1", x));
    h = ops::conv2d(h, p(ctx, name + ".conv1.w"), p(ctx, name + ".conv1.b"), 1, 1);
    Var<T> e = ops::matmul(p(ctx, name + ".temb.w"), emb);
    e = ops::add_channel_bias(e, p(ctx, name + ".temb.b"));
    h = ops::add_channel_bias(h, e);
    h = ops::silu(norm(ctx, name + ".norm2", h));
    h = ops::conv2d(h, p(ctx, name + ".conv2.w"), p(ctx, name + ".conv2.b"), 1, 1);
    Var<T> skip = x;
    if (params_.count(name + ".skip.w")) skip = ops::conv2d(x, p(ctx, name + ".skip.w"), p(ctx, name + ".skip.b"), 1, 0);
    return ops::add(h, skip);
  }

  Var<T> project(Ctx& ctx, const std::string& site, Var<T> x) const {
    Var<T> y = ops::matmul(p(ctx, site + ".w"), x);
    y = ops::add_channel_bias(y, p(ctx, site + ".b"));
    if (ctx.lora) {
      auto it = ctx.lora->sites.find(site);
      if (it != ctx.lora->sites.end()) {
        const auto& s = it->second;
        Var<T> low = ops::matmul(s.B, ops::matmul(s.A, x));
        y = ops::axpby(T(1), y, s.scale, low);
      }
    }
    return y;
  }

  Var<T> attn(Ctx& ctx, const std::string& name, Var<T> x) const {
    const auto shape = x.shape();
    const int C = shape[0], N = shape[1] * shape[2];
    Var<T> n = ops::reshape(norm(ctx, name + ".norm", x), {C, N});
    Var<T> q = project(ctx, name + ".q", n);
    Var<T> k = project(ctx, name + ".k", n);
    Var<T> v = project(ctx, name + ".v", n);
    Var<T> o = project(ctx, name + ".out", ops::attention(q, k, v));
    return ops::add(x, ops::reshape(o, shape));
  }

  Var<T> embedding(Ctx& ctx, int timestep, int cls) const {
    if (cls < 0 || cls >= cfg_.num_classes) throw ShapeError("class id out of range: " + std::to_string(cls));
    const int half = cfg_.temb_dim / 2;
    Tensor<T> sin_emb({cfg_.temb_dim, 1});
    for (int i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * i / half);
      sin_emb[static_cast<std::size_t>(i)] = static_cast<T>(std::sin(timestep * f));
      sin_emb[static_cast<std::size_t>(i + half)] = static_cast<T>(std::cos(timestep * f));
    }
    Var<T> e = ctx.tape.constant(std::move(sin_emb));
    e = ops::add_channel_bias(ops::matmul(p(ctx, "time.fc1.w"), e), p(ctx, "time.fc1.b"));
    e = ops::silu(e);
    e = ops::add_channel_bias(ops::matmul(p(ctx, "time.fc2.w"), e), p(ctx, "time.fc2.b"));
    // Class row selection as a one-hot product keeps the table differentiable.
    Tensor<T> onehot({1, cfg_.num_classes});
    onehot[static_cast<std::size_t>(cls)] = T(1);
    Var<T> cvec = ops::matmul(ctx.tape.constant(std::move(onehot)), p(ctx, "class.emb"));
    e = ops::add(e, ops::reshape(cvec, {cfg_.embed_dim(), 1}));
    return ops::silu(e);
  }

  DenoiserOutputs<T> run(Tape<T>& tape, Var<T> z, int timestep, int cls, const LoraBinding<T>* lora,
                         std::map<std::string, Var<T>>* bound) const {
    if (z.shape() != latent_shape()) {
      throw ShapeError("latent shape " + shape_str(z.shape()) + " does not match model " + shape_str(latent_shape()));
    }
    Ctx ctx{tape, lora, bound};
    Var<T> emb = embedding(ctx, timestep, cls);

    Var<T> h = ops::conv2d(z, p(ctx, "stem.w"), p(ctx, "stem.b"), 1, 1);
    Var<T> skip1 = res(ctx, "down1.res", h, emb);
    h = ops::conv2d(skip1, p(ctx, "down1.down.w"), p(ctx, "down1.down.b"), 2, 1);
    Var<T> skip2 = res(ctx, "down2.res", h, emb);
    h = ops::conv2d(skip2, p(ctx, "down2.down.w"), p(ctx, "down2.down.b"), 2, 1);
    if (cfg_.attention) h = attn(ctx, "down2.attn", h);
    h = res(ctx, "mid.res", h, emb);
    if (cfg_.attention) h = attn(ctx, "mid.attn", h);
    Var<T> mid = h;
    if (cfg_.attention) h = attn(ctx, "up1.attn", h);
    h = ops::concat_channels(ops::upsample_nearest2x(h), skip2);
    h = res(ctx, "up1.res", h, emb);
    // Decoder attention at half resolution; its output is the tracked feature map.
    if (cfg_.attention) h = attn(ctx, "up1.attn2", h);
    Var<T> features = ops::resize_bilinear(h, cfg_.size, cfg_.size);
    h = ops::concat_channels(ops::upsample_nearest2x(h), skip1);
    h = res(ctx, "up2.res", h, emb);

    h = ops::silu(norm(ctx, "out.norm", h));
    Var<T> eps = ops::conv2d(h, p(ctx, "out.conv.w"), p(ctx, "out.conv.b"), 1, 1);
    return {eps, features, mid};
  }

  UNetConfig cfg_;
  ParamMap params_;
};

// Convenience wrappers that run a throwaway tape without gradients.
template <class T>
Tensor<T> predict_noise(const Denoiser<T>& model, const Tensor<T>& z, int timestep, int cls,
                        const LoraBinding<T>* lora = nullptr) {
  Tape<T> tape;
  NoGradGuard<T> guard(tape);
  return model.forward(tape, tape.leaf(z, false), timestep, cls, lora).eps.value();
}

}  // namespace draglora
