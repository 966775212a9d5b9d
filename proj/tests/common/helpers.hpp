#pragma once

#include <random>

#include "zkinfer/eval.hpp"
#include "zkinfer/model.hpp"

namespace testutil {

inline zkinfer::IntTensor random_ints(const zkinfer::Shape& s, std::int64_t lo, std::int64_t hi, std::mt19937_64& rng) {
  zkinfer::IntTensor t(s);
  std::uniform_int_distribution<std::int64_t> d(lo, hi);
  for (auto& v : t.data) v = d(rng);
  return t;
}

inline std::vector<std::int64_t> random_tokens(std::int64_t n, std::int64_t vocab, std::mt19937_64& rng) {
  std::vector<std::int64_t> t(static_cast<std::size_t>(n));
  for (auto& v : t) v = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(vocab));
  return t;
}

/// Reduced graph plus quantized constants of a bundle.
struct Compiled {
  zkinfer::Graph graph;
  zkinfer::TensorMap constants;
  zkinfer::QuantConfig quant;

  explicit Compiled(const zkinfer::ModelBundle& b)
      : graph(zkinfer::reduce(b.graph())), constants(zkinfer::quantize_constants(graph, b.weights, b.quant)),
        quant(b.quant) {}

  zkinfer::EvalResult run(const zkinfer::TensorMap& inputs, bool keep = false) const {
    return zkinfer::evaluate(graph, constants, inputs, quant, keep);
  }
};

}  // namespace testutil
