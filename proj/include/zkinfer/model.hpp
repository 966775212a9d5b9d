#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "zkinfer/graph.hpp"
#include "zkinfer/hash.hpp"
#include "zkinfer/quant.hpp"
#include "zkinfer/weights.hpp"

namespace zkinfer {

struct NanoGptConfig {
  std::int64_t vocab_size = 65;
  std::int64_t block_size = 64;
  std::int64_t n_layers = 4;
  std::int64_t n_heads = 4;
  std::int64_t embed_size = 64;
  double dropout = 0.0;

  void validate() const;
  std::string label() const;
};

struct MlpConfig {
  std::int64_t n_layers = 1;
  std::int64_t width = 2;

  void validate() const;
  std::string label() const;
};

/// Weight names and shapes, in the layout the builders expect.
std::map<std::string, Shape> nanogpt_weight_shapes(const NanoGptConfig& cfg);
std::map<std::string, Shape> mlp_weight_shapes(const MlpConfig& cfg);
std::int64_t parameter_count(const std::map<std::string, Shape>& shapes);

/// Smallest width whose MLP parameter count is closest to `target`.
std::int64_t mlp_width_for_params(std::int64_t n_layers, std::int64_t target);

struct InitOptions {
  double sigma = 0.02;
  /// Standard deviation for the token embedding (also the tied output head).
  double embed_sigma = 0.02;
  /// Standard deviation for the position embedding.
  double pos_sigma = 0.02;
  /// When > 0, every value is rounded onto the fixed-point grid of its
  /// tensor's scale, so float and quantized models hold identical weights.
  int snap_frac_bits = 7;

  /// Wider embeddings that keep activations well above the f=7 grid step.
  static InitOptions wide_embeddings() {
    InitOptions o;
    o.embed_sigma = 0.1;
    o.pos_sigma = 0.5;
    return o;
  }
};

/// Seeded normal initialisation (layer-norm gains 1, shifts 0).
WeightStore init_nanogpt_weights(const NanoGptConfig& cfg, std::uint64_t seed, const InitOptions& opt = {});
WeightStore init_mlp_weights(const MlpConfig& cfg, std::uint64_t seed, const InitOptions& opt = {});

/// Unreduced graphs; composite ops are left for reduce().
Graph build_nanogpt(const NanoGptConfig& cfg, const WeightStore& weights);
Graph build_mlp(const MlpConfig& cfg, const WeightStore& weights);

struct ModelCommitment {
  Digest digest{};
  std::string hex() const { return to_hex(digest); }
  friend bool operator==(const ModelCommitment&, const ModelCommitment&) = default;
};

ModelCommitment commit(const std::string& graph_bytes, const WeightStore& weights, const QuantConfig& cfg);

/// Graph text, weights and quantisation that together define a served model.
struct ModelBundle {
  std::string graph_text;
  WeightStore weights;
  QuantConfig quant;

  Graph graph() const { return parse_graph(graph_text); }
  ModelCommitment commitment() const { return commit(graph_text, weights, quant); }

  /// Directory layout: model.graph, model.weights, model.quant ("f,B").
  void save(const std::string& dir) const;
  static ModelBundle load(const std::string& dir);
  static ModelBundle load(const std::string& graph_path, const std::string& weights_path, const QuantConfig& quant);
};

ModelBundle make_nanogpt_bundle(const NanoGptConfig& cfg, std::uint64_t seed, const QuantConfig& quant = {},
                                const InitOptions& opt = {});
ModelBundle make_mlp_bundle(const MlpConfig& cfg, std::uint64_t seed, const QuantConfig& quant = {},
                            const InitOptions& opt = {});

}  // namespace zkinfer
