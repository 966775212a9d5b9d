#include <cmath>

#include "zkinfer/eval.hpp"

namespace zkinfer {

namespace {

std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw std::overflow_error("arithmetic overflow in quantized evaluation");
  return r;
}

std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw std::overflow_error("arithmetic overflow in quantized evaluation");
  return r;
}

struct Evaluator {
  const QuantConfig& cfg;
  std::size_t saturations = 0;

  std::int64_t lookup(LookupFn fn, std::int64_t q) {
    if (!cfg.in_range(q)) ++saturations;
    return cached_lookup(fn, cfg).saturating(q);
  }

  std::int64_t rescale(std::int64_t q) const { return rescale_round(q, cfg.frac_bits); }

  IntTensor einsum(const std::string& spec_text, const std::vector<const IntTensor*>& ops) {
    const EinsumSpec spec = EinsumSpec::parse(spec_text);
    std::vector<Shape> shapes;
    for (auto* t : ops) shapes.push_back(t->shape);
    const EinsumPlan plan(spec, shapes);
    IntTensor out(plan.output_shape());
    std::int64_t off[2];
    for (std::int64_t o = 0; o < plan.output_size(); ++o) {
      std::int64_t acc = 0;
      for (std::int64_t k = 0; k < plan.contraction_size(); ++k) {
        plan.offsets(o, k, off);
        std::int64_t term = ops[0]->data[off[0]];
        if (ops.size() == 2) term = checked_mul(term, ops[1]->data[off[1]]);
        acc = checked_add(acc, term);
      }
      out.data[o] = acc;
    }
    return out;
  }

  template <typename F>
  IntTensor elementwise(const Shape& shape, const IntTensor& a, const IntTensor& b, F f) {
    IntTensor out(shape);
    for (std::int64_t o = 0; o < static_cast<std::int64_t>(out.size()); ++o)
      out.data[o] = f(a.data[broadcast_source_index(shape, a.shape, o)], b.data[broadcast_source_index(shape, b.shape, o)]);
    return out;
  }

  IntTensor mask_fill(const IntTensor& x) {
    IntTensor out = x;
    const std::size_t r = x.shape.size();
    const std::int64_t rows = x.shape[r - 2], cols = x.shape[r - 1];
    for (std::int64_t o = 0; o < static_cast<std::int64_t>(out.size()); ++o) {
      const std::int64_t j = o % cols, i = (o / cols) % rows;
      if (j > i) out.data[o] = cfg.mask_value();
    }
    return out;
  }

  IntTensor map(const IntTensor& x, LookupFn fn) {
    IntTensor out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = lookup(fn, x.data[i]);
    return out;
  }

  IntTensor rescale(const IntTensor& x) {
    IntTensor out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = rescale(x.data[i]);
    return out;
  }

  // Direct composite kernels; they follow the same integer steps as the lowerings.
  IntTensor softmax(const IntTensor& in, bool causal) {
    const IntTensor x = causal ? mask_fill(in) : in;
    const std::int64_t cols = x.shape.back();
    const std::int64_t rows = static_cast<std::int64_t>(x.size()) / cols;
    IntTensor out(x.shape);
    std::vector<std::int64_t> e(cols);
    for (std::int64_t r = 0; r < rows; ++r) {
      std::int64_t sum = 0;
      for (std::int64_t j = 0; j < cols; ++j) sum = checked_add(sum, e[j] = lookup(LookupFn::Exp, x.data[r * cols + j]));
      const std::int64_t inv = lookup(LookupFn::Recip, sum);
      for (std::int64_t j = 0; j < cols; ++j) out.data[r * cols + j] = rescale(checked_mul(e[j], inv));
    }
    return out;
  }

  IntTensor layer_norm(const IntTensor& x, const IntTensor& gamma, const IntTensor& beta, double eps) {
    const std::int64_t c = x.shape.back();
    const std::int64_t rows = static_cast<std::int64_t>(x.size()) / c;
    const std::int64_t coef = to_fixed(1.0 / static_cast<double>(c), cfg, 1);
    const std::int64_t eps_q = to_fixed(eps, cfg, 2);
    IntTensor out(x.shape);
    std::vector<std::int64_t> d(c);
    for (std::int64_t r = 0; r < rows; ++r) {
      const std::int64_t* row = x.data.data() + r * c;
      std::int64_t m2 = 0;
      for (std::int64_t j = 0; j < c; ++j) m2 = checked_add(m2, checked_mul(row[j], coef));
      const std::int64_t mean = rescale(m2);
      std::int64_t v3 = 0;
      for (std::int64_t j = 0; j < c; ++j) {
        d[j] = row[j] - mean;
        v3 = checked_add(v3, checked_mul(checked_mul(d[j], d[j]), coef));
      }
      const std::int64_t inv = lookup(LookupFn::Rsqrt, rescale(v3) + eps_q);
      for (std::int64_t j = 0; j < c; ++j) {
        const std::int64_t norm = rescale(checked_mul(d[j], inv));
        out.data[r * c + j] = rescale(checked_mul(norm, gamma.data[j])) + beta.data[j];
      }
    }
    return out;
  }
};

}  // namespace

TensorMap quantize_constants(const Graph& g, const WeightStore& w, const QuantConfig& cfg) {
  TensorMap out;
  for (const auto& n : g.nodes()) {
    if (n.op != OpKind::Const) continue;
    IntTensor t(n.shape);
    if (n.has_attr("range")) {
      for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<std::int64_t>(i);
    } else if (n.has_attr("fill")) {
      const std::int64_t v = to_fixed(n.attr_real("fill", 0.0), cfg, n.scale);
      std::fill(t.data.begin(), t.data.end(), v);
    } else {
      const std::string ref = n.attr("ref", n.id);
      const auto& src = w.at(ref);
      if (src.shape != n.shape)
        throw GraphError("weight shape mismatch for " + ref + ": file has " + shape_to_string(src.shape) +
                         ", graph wants " + shape_to_string(n.shape));
      for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = to_fixed(src.data[i], cfg, n.scale);
    }
    out.emplace(n.id, std::move(t));
  }
  return out;
}

IntTensor quantize_input(const Node& input, const Tensor<float>& value, const QuantConfig& cfg) {
  if (value.shape != input.shape)
    throw GraphError("input " + input.id + " expects shape " + shape_to_string(input.shape) + ", got " +
                     shape_to_string(value.shape));
  IntTensor t(value.shape);
  if (input.is_token_input()) {
    const std::int64_t vocab = input.attr_int("vocab", 0);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const float v = value.data[i];
      if (v != std::floor(v) || v < 0 || v >= static_cast<float>(vocab))
        throw GraphError("token id out of range for input " + input.id);
      t.data[i] = static_cast<std::int64_t>(v);
    }
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = decode(quantize(value.data[i], cfg));
  }
  return t;
}

EvalResult evaluate(const Graph& g, const TensorMap& constants, const TensorMap& inputs, const QuantConfig& cfg,
                    bool keep_values) {
  Evaluator ev{cfg};
  std::unordered_map<std::string, IntTensor> vals;
  auto get = [&](const std::string& id) -> const IntTensor& { return vals.at(id); };

  for (const auto& n : g.nodes()) {
    IntTensor out;
    switch (n.op) {
      case OpKind::Input: {
        auto it = inputs.find(n.id);
        if (it == inputs.end()) throw GraphError("missing value for input " + n.id);
        if (it->second.shape != n.shape) throw GraphError("input " + n.id + " has wrong shape");
        if (n.is_token_input())
          for (auto v : it->second.data)
            if (v < 0 || v >= n.attr_int("vocab", 0)) throw GraphError("token id out of range for input " + n.id);
        out = it->second;
        break;
      }
      case OpKind::Const: {
        auto it = constants.find(n.id);
        if (it == constants.end()) throw GraphError("missing value for constant " + n.id);
        out = it->second;
        break;
      }
      case OpKind::Einsum: {
        std::vector<const IntTensor*> ops;
        for (const auto& i : n.inputs) ops.push_back(&get(i));
        out = ev.einsum(n.attr("spec"), ops);
        break;
      }
      case OpKind::MatMul: {
        const IntTensor &a = get(n.inputs[0]), &b = get(n.inputs[1]);
        out = IntTensor(n.shape);
        const std::int64_t k = b.shape[0], m = b.shape[1];
        const std::int64_t rows = static_cast<std::int64_t>(a.size()) / k;
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < m; ++j) {
            std::int64_t acc = 0;
            for (std::int64_t t = 0; t < k; ++t) acc = checked_add(acc, checked_mul(a.data[r * k + t], b.data[t * m + j]));
            out.data[r * m + j] = acc;
          }
        break;
      }
      case OpKind::Add:
        out = ev.elementwise(n.shape, get(n.inputs[0]), get(n.inputs[1]), checked_add);
        break;
      case OpKind::Sub:
        out = ev.elementwise(n.shape, get(n.inputs[0]), get(n.inputs[1]),
                             [](std::int64_t a, std::int64_t b) { return checked_add(a, -b); });
        break;
      case OpKind::Mul:
        out = ev.elementwise(n.shape, get(n.inputs[0]), get(n.inputs[1]), checked_mul);
        break;
      case OpKind::Gather: {
        const IntTensor &table = get(n.inputs[0]), &idx = get(n.inputs[1]);
        const std::int64_t rows = table.shape[0], c = table.shape[1];
        out = IntTensor(n.shape);
        for (std::size_t t = 0; t < idx.size(); ++t) {
          const std::int64_t r = idx.data[t];
          if (r < 0 || r >= rows) throw GraphError("gather index out of range at node " + n.id);
          std::copy_n(table.data.begin() + r * c, c, out.data.begin() + static_cast<std::int64_t>(t) * c);
        }
        break;
      }
      case OpKind::Nonlinear:
        out = ev.map(get(n.inputs[0]), n.lookup_fn());
        break;
      case OpKind::Rescale:
        out = ev.rescale(get(n.inputs[0]));
        break;
      case OpKind::Reshape:
      case OpKind::Dropout:
        out = IntTensor(n.shape, get(n.inputs[0]).data);
        break;
      case OpKind::Transpose: {
        const IntTensor& x = get(n.inputs[0]);
        const auto perm = n.attr_list("perm");
        const auto in_strides = row_major_strides(x.shape);
        out = IntTensor(n.shape);
        const std::size_t r = n.shape.size();
        for (std::int64_t o = 0; o < static_cast<std::int64_t>(out.size()); ++o) {
          std::int64_t rem = o, src = 0;
          for (std::size_t a = r; a-- > 0;) {
            src += (rem % n.shape[a]) * in_strides[perm[a]];
            rem /= n.shape[a];
          }
          out.data[o] = x.data[src];
        }
        break;
      }
      case OpKind::Concat: {
        const std::int64_t axis = n.attr_int("axis", 0);
        out = IntTensor(n.shape);
        const std::int64_t outer = num_elements(Shape(n.shape.begin(), n.shape.begin() + axis));
        const std::int64_t inner = num_elements(Shape(n.shape.begin() + axis + 1, n.shape.end()));
        std::int64_t pos = 0;
        for (std::int64_t o = 0; o < outer; ++o)
          for (const auto& id : n.inputs) {
            const IntTensor& x = get(id);
            const std::int64_t chunk = x.shape[axis] * inner;
            std::copy_n(x.data.begin() + o * chunk, chunk, out.data.begin() + pos);
            pos += chunk;
          }
        break;
      }
      case OpKind::MaskFill:
        out = ev.mask_fill(get(n.inputs[0]));
        break;
      case OpKind::Softmax:
        out = ev.softmax(get(n.inputs[0]), n.attr_int("causal", 0) != 0);
        break;
      case OpKind::LayerNorm:
        out = ev.layer_norm(get(n.inputs[0]), get(n.inputs[1]), get(n.inputs[2]), n.attr_real("eps", 1e-5));
        break;
    }
    vals.emplace(n.id, std::move(out));
  }

  EvalResult res;
  for (const auto& o : g.outputs()) res.outputs.emplace(o, vals.at(o));
  res.saturations = ev.saturations;
  if (keep_values) res.values = std::move(vals);
  return res;
}

std::map<std::string, Tensor<FieldElement>> evaluate_quantized(const Graph& g, const TensorMap& constants,
                                                               const std::map<std::string, Tensor<FieldElement>>& inputs,
                                                               const QuantConfig& cfg, std::size_t* saturations) {
  TensorMap ints;
  for (const auto& [k, v] : inputs) ints.emplace(k, from_field(v));
  const EvalResult r = evaluate(g, constants, ints, cfg);
  if (saturations) *saturations = r.saturations;
  std::map<std::string, Tensor<FieldElement>> out;
  for (const auto& [k, v] : r.outputs) out.emplace(k, to_field(v));
  return out;
}

Tensor<FieldElement> to_field(const IntTensor& t) {
  Tensor<FieldElement> out(t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = encode(t.data[i]);
  return out;
}

IntTensor from_field(const Tensor<FieldElement>& t) {
  IntTensor out(t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = decode(t.data[i]);
  return out;
}

Tensor<double> dequantize(const IntTensor& t, const QuantConfig& cfg, int scale_units) {
  Tensor<double> out(t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = from_fixed(t.data[i], cfg, scale_units);
  return out;
}

}  // namespace zkinfer
