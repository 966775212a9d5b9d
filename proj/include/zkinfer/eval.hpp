#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>

#include "zkinfer/graph.hpp"
#include "zkinfer/quant.hpp"
#include "zkinfer/weights.hpp"

namespace zkinfer {

using IntTensor = Tensor<std::int64_t>;
using TensorMap = std::map<std::string, IntTensor>;

/// Fixed-point values of every Const node of a graph.
///
/// `range` constants hold 0..n-1, `fill=v` constants broadcast one real, and
/// all others read the weight named by `ref` (default: the node id).
TensorMap quantize_constants(const Graph& g, const WeightStore& w, const QuantConfig& cfg);

/// Fixed-point encoding of one graph input: token ids pass through (and are
/// range-checked against the vocabulary), reals are quantized at scale 1.
IntTensor quantize_input(const Node& input, const Tensor<float>& value, const QuantConfig& cfg);

struct EvalResult {
  TensorMap outputs;
  /// Every node's value, keyed by id, when requested.
  std::unordered_map<std::string, IntTensor> values;
  /// Nonlinearity inputs that fell outside the lookup range and were clamped.
  std::size_t saturations = 0;
};

/// Integer reference semantics of a graph. Accepts composite ops as well as
/// the reduced set so that lowerings can be checked against it.
EvalResult evaluate(const Graph& g, const TensorMap& constants, const TensorMap& inputs, const QuantConfig& cfg,
                    bool keep_values = false);

/// Field-valued wrapper around `evaluate`.
std::map<std::string, Tensor<FieldElement>> evaluate_quantized(const Graph& g, const TensorMap& constants,
                                                               const std::map<std::string, Tensor<FieldElement>>& inputs,
                                                               const QuantConfig& cfg, std::size_t* saturations = nullptr);

Tensor<FieldElement> to_field(const IntTensor& t);
IntTensor from_field(const Tensor<FieldElement>& t);
Tensor<double> dequantize(const IntTensor& t, const QuantConfig& cfg, int scale_units = 1);

}  // namespace zkinfer
