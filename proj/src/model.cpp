#include "zkinfer/model.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

namespace zkinfer {

namespace {

std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string layer(std::int64_t l) { return "h." + std::to_string(l) + "."; }

// Box-Muller on top of mt19937_64, whose output sequence is fixed by the standard.
class Normal {
 public:
  explicit Normal(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1;
    do u1 = uniform(); while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  std::mt19937_64 rng_;
  double spare_ = 0;
  bool have_spare_ = false;
};

float snap(double v, int frac_bits, int scale_units) {
  if (frac_bits <= 0) return static_cast<float>(v);
  const int bits = frac_bits * scale_units;
  return static_cast<float>(std::ldexp(std::round(std::ldexp(v, bits)), -bits));
}

void require_weights(const WeightStore& w, const std::map<std::string, Shape>& shapes) {
  for (const auto& [name, shape] : shapes) {
    const auto& t = w.at(name);
    if (t.shape != shape)
      throw GraphError("weight " + name + " has shape " + shape_to_string(t.shape) + ", expected " +
                       shape_to_string(shape));
  }
}

bool is_bias(const std::string& name) {
  return name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0 && name.find("ln_") == std::string::npos;
}

bool is_ln(const std::string& name) { return name.find("ln_") != std::string::npos; }

// Linear layer x[.., in] * W[in, out] + b[out], rescaled back to scale 1.
std::string linear(Graph& g, const std::string& x, const std::string& id, const std::string& wname,
                   const std::string& spec, const Shape& wshape) {
  g.add_const(wname + ".weight", wshape);
  g.add_const(wname + ".bias", {wshape.back()}, {{"scale", "2"}});
  g.add_node(id + ".mm", OpKind::Einsum, {x, wname + ".weight"}, {{"spec", spec}});
  g.add_node(id + ".biased", OpKind::Add, {id + ".mm", wname + ".bias"});
  g.add_node(id, OpKind::Rescale, {id + ".biased"});
  return id;
}

}  // namespace

void NanoGptConfig::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("vocab_size must be >= 1");
  if (block_size < 1) throw std::invalid_argument("block_size must be >= 1");
  if (n_layers < 0) throw std::invalid_argument("n_layers must be >= 0");
  if (n_heads < 1 || embed_size < 1 || embed_size % n_heads != 0)
    throw std::invalid_argument("embed_size must be a positive multiple of n_heads");
  if (dropout != 0.0) throw std::invalid_argument("dropout must be 0 for inference");
}

std::string NanoGptConfig::label() const {
  return "nanogpt(v=" + std::to_string(vocab_size) + ",t=" + std::to_string(block_size) + ",l=" +
         std::to_string(n_layers) + ",h=" + std::to_string(n_heads) + ",c=" + std::to_string(embed_size) + ")";
}

void MlpConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("n_layers must be >= 1");
  if (width < 1) throw std::invalid_argument("width must be >= 1");
}

std::string MlpConfig::label() const {
  return "mlp(l=" + std::to_string(n_layers) + ",w=" + std::to_string(width) + ")";
}

std::map<std::string, Shape> nanogpt_weight_shapes(const NanoGptConfig& cfg) {
  cfg.validate();
  const std::int64_t c = cfg.embed_size;
  std::map<std::string, Shape> s;
  s["wte"] = {cfg.vocab_size, c};
  s["wpe"] = {cfg.block_size, c};
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = layer(l);
    s[p + "ln_1.weight"] = s[p + "ln_1.bias"] = {c};
    for (const char* m : {"attn.q", "attn.k", "attn.v", "attn.c_proj"}) {
      s[p + m + ".weight"] = {c, c};
      s[p + m + ".bias"] = {c};
    }
    s[p + "ln_2.weight"] = s[p + "ln_2.bias"] = {c};
    s[p + "mlp.c_fc.weight"] = {c, 4 * c};
    s[p + "mlp.c_fc.bias"] = {4 * c};
    s[p + "mlp.c_proj.weight"] = {4 * c, c};
    s[p + "mlp.c_proj.bias"] = {c};
  }
  s["ln_f.weight"] = s["ln_f.bias"] = {c};
  return s;
}

std::map<std::string, Shape> mlp_weight_shapes(const MlpConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> s;
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    s["l" + std::to_string(l) + ".weight"] = {cfg.width, cfg.width};
    s["l" + std::to_string(l) + ".bias"] = {cfg.width};
  }
  return s;
}

std::int64_t parameter_count(const std::map<std::string, Shape>& shapes) {
  std::int64_t n = 0;
  for (const auto& [_, s] : shapes) n += num_elements(s);
  return n;
}

std::int64_t mlp_width_for_params(std::int64_t n_layers, std::int64_t target) {
  if (n_layers < 1 || target < 1) throw std::invalid_argument("need n_layers >= 1 and target >= 1");
  std::int64_t best = 1;
  for (std::int64_t w = 1;; ++w) {
    const std::int64_t n = n_layers * (w * w + w);
    if (std::llabs(n - target) < std::llabs(n_layers * (best * best + best) - target)) best = w;
    if (n > target) break;
  }
  return best;
}

WeightStore init_nanogpt_weights(const NanoGptConfig& cfg, std::uint64_t seed, const InitOptions& opt) {
  Normal normal(seed);
  WeightStore w;
  for (const auto& [name, shape] : nanogpt_weight_shapes(cfg)) {
    Tensor<float> t(shape);
    const bool ln = is_ln(name);
    const bool bias = is_bias(name);
    const double sigma = name == "wte" ? opt.embed_sigma : name == "wpe" ? opt.pos_sigma : opt.sigma;
    for (auto& v : t.data) {
      if (ln)
        v = name.compare(name.size() - 5, 5, ".bias") == 0 ? 0.0f : 1.0f;
      else
        v = snap(sigma * normal(), opt.snap_frac_bits, bias ? 2 : 1);
    }
    w.set(name, std::move(t));
  }
  return w;
}

WeightStore init_mlp_weights(const MlpConfig& cfg, std::uint64_t seed, const InitOptions& opt) {
  Normal normal(seed);
  WeightStore w;
  for (const auto& [name, shape] : mlp_weight_shapes(cfg)) {
    Tensor<float> t(shape);
    const bool bias = is_bias(name);
    for (auto& v : t.data) v = snap(opt.sigma * normal(), opt.snap_frac_bits, bias ? 2 : 1);
    w.set(name, std::move(t));
  }
  return w;
}

Graph build_nanogpt(const NanoGptConfig& cfg, const WeightStore& weights) {
  cfg.validate();
  require_weights(weights, nanogpt_weight_shapes(cfg));
  const std::int64_t t = cfg.block_size, c = cfg.embed_size, h = cfg.n_heads, hd = c / h;
  const std::string dims_thd = shape_to_string({t, h, hd});
  Graph g;
  g.add_input("tokens", {t}, true, cfg.vocab_size);
  g.add_const("wte", {cfg.vocab_size, c});
  g.add_const("wpe", {t, c});
  g.add_const("pos", {t}, {{"range", ""}});
  g.add_node("tok_emb", OpKind::Gather, {"wte", "tokens"});
  g.add_node("pos_emb", OpKind::Gather, {"wpe", "pos"});
  g.add_node("emb", OpKind::Add, {"tok_emb", "pos_emb"});
  g.add_node("drop", OpKind::Dropout, {"emb"}, {{"rate", "0"}});
  if (cfg.n_layers > 0) g.add_const("attn_scale", {}, {{"fill", real_text(1.0 / std::sqrt(static_cast<double>(hd)))}});

  std::string x = "drop";
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = layer(l);
    g.add_const(p + "ln_1.weight", {c});
    g.add_const(p + "ln_1.bias", {c});
    g.add_node(p + "ln_1", OpKind::LayerNorm, {x, p + "ln_1.weight", p + "ln_1.bias"}, {{"eps", "1e-05"}});

    std::map<std::string, std::string> heads;
    for (const char* m : {"q", "k", "v"}) {
      const std::string id = p + "attn." + m;
      linear(g, p + "ln_1", id, id, "tc,cd->td", {c, c});
      g.add_node(id + ".split", OpKind::Reshape, {id}, {{"shape", dims_thd}});
      g.add_node(id + ".heads", OpKind::Transpose, {id + ".split"}, {{"perm", "1,0,2"}});
      heads[m] = id + ".heads";
    }
    const std::string a = p + "attn.";
    g.add_node(a + "scores.mm", OpKind::Einsum, {heads["q"], heads["k"]}, {{"spec", "htd,hsd->hts"}});
    g.add_node(a + "scores.raw", OpKind::Rescale, {a + "scores.mm"});
    g.add_node(a + "scores.scaled", OpKind::Mul, {a + "scores.raw", "attn_scale"});
    g.add_node(a + "scores", OpKind::Rescale, {a + "scores.scaled"});
    g.add_node(a + "masked", OpKind::MaskFill, {a + "scores"});
    g.add_node(a + "probs", OpKind::Softmax, {a + "masked"});
    g.add_node(a + "ctx.mm", OpKind::Einsum, {a + "probs", heads["v"]}, {{"spec", "hts,hsd->htd"}});
    g.add_node(a + "ctx.heads", OpKind::Rescale, {a + "ctx.mm"});
    g.add_node(a + "ctx.merge", OpKind::Transpose, {a + "ctx.heads"}, {{"perm", "1,0,2"}});
    g.add_node(a + "ctx", OpKind::Reshape, {a + "ctx.merge"}, {{"shape", shape_to_string({t, c})}});
    linear(g, a + "ctx", a + "out", a + "c_proj", "tc,cd->td", {c, c});
    g.add_node(p + "res1", OpKind::Add, {x, a + "out"});

    g.add_const(p + "ln_2.weight", {c});
    g.add_const(p + "ln_2.bias", {c});
    g.add_node(p + "ln_2", OpKind::LayerNorm, {p + "res1", p + "ln_2.weight", p + "ln_2.bias"}, {{"eps", "1e-05"}});
    linear(g, p + "ln_2", p + "mlp.fc", p + "mlp.c_fc", "tc,cd->td", {c, 4 * c});
    g.add_node(p + "mlp.gelu", OpKind::Nonlinear, {p + "mlp.fc"}, {{"fn", "gelu"}});
    linear(g, p + "mlp.gelu", p + "mlp.out", p + "mlp.c_proj", "tc,cd->td", {4 * c, c});
    g.add_node(p + "res2", OpKind::Add, {p + "res1", p + "mlp.out"});
    x = p + "res2";
  }

  g.add_const("ln_f.weight", {c});
  g.add_const("ln_f.bias", {c});
  g.add_node("ln_f", OpKind::LayerNorm, {x, "ln_f.weight", "ln_f.bias"}, {{"eps", "1e-05"}});
  g.add_node("lm_head.mm", OpKind::Einsum, {"ln_f", "wte"}, {{"spec", "tc,vc->tv"}});
  g.add_node("logits", OpKind::Rescale, {"lm_head.mm"});
  g.add_output("logits");
  g.finalize();
  return g;
}

Graph build_mlp(const MlpConfig& cfg, const WeightStore& weights) {
  cfg.validate();
  require_weights(weights, mlp_weight_shapes(cfg));
  Graph g;
  g.add_input("x", {cfg.width});
  std::string x = "x";
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l);
    linear(g, x, p + ".linear", p, "i,ij->j", {cfg.width, cfg.width});
    g.add_node(p + ".relu", OpKind::Nonlinear, {p + ".linear"}, {{"fn", "relu"}});
    x = p + ".relu";
  }
  g.add_output(x);
  g.finalize();
  return g;
}

ModelCommitment commit(const std::string& graph_bytes, const WeightStore& weights, const QuantConfig& cfg) {
  const auto wbytes = weights.serialize();
  Sha256 h;
  h.update_u8(static_cast<std::uint8_t>(HashTag::ModelCommitment));
  h.update(std::string_view("zkinfer-model-v1"));
  h.update_u64(graph_bytes.size());
  h.update(std::string_view(graph_bytes));
  h.update_u64(wbytes.size());
  h.update(wbytes.data(), wbytes.size());
  h.update_u64(static_cast<std::uint64_t>(cfg.frac_bits));
  h.update_u64(static_cast<std::uint64_t>(cfg.lookup_bits));
  return ModelCommitment{h.finish()};
}

void ModelBundle::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  write_file_text(dir + "/model.graph", graph_text);
  weights.save(dir + "/model.weights");
  write_file_text(dir + "/model.quant", quant.to_string() + "\n");
}

ModelBundle ModelBundle::load(const std::string& dir) {
  std::string q = read_file_text(dir + "/model.quant");
  while (!q.empty() && std::isspace(static_cast<unsigned char>(q.back()))) q.pop_back();
  return load(dir + "/model.graph", dir + "/model.weights", QuantConfig::parse(q));
}

ModelBundle ModelBundle::load(const std::string& graph_path, const std::string& weights_path,
                              const QuantConfig& quant) {
  ModelBundle b;
  b.graph_text = read_file_text(graph_path);
  b.weights = WeightStore::load(weights_path);
  b.quant = quant;
  b.quant.validate();
  parse_graph(b.graph_text);
  return b;
}

ModelBundle make_nanogpt_bundle(const NanoGptConfig& cfg, std::uint64_t seed, const QuantConfig& quant,
                                const InitOptions& opt) {
  ModelBundle b;
  b.weights = init_nanogpt_weights(cfg, seed, opt);
  b.graph_text = write_graph(build_nanogpt(cfg, b.weights));
  b.quant = quant;
  return b;
}

ModelBundle make_mlp_bundle(const MlpConfig& cfg, std::uint64_t seed, const QuantConfig& quant,
                            const InitOptions& opt) {
  ModelBundle b;
  b.weights = init_mlp_weights(cfg, seed, opt);
  b.graph_text = write_graph(build_mlp(cfg, b.weights));
  b.quant = quant;
  return b;
}

}  // namespace zkinfer
