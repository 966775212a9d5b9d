#include "zkinfer/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <queue>
#include <set>

namespace zkinfer {

namespace {

struct OpInfo {
  OpKind op;
  std::string_view name;
};

constexpr OpInfo kOps[] = {
    {OpKind::Input, "Input"},         {OpKind::Const, "Const"},         {OpKind::Einsum, "Einsum"},
    {OpKind::Add, "Add"},             {OpKind::Sub, "Sub"},             {OpKind::Mul, "Mul"},
    {OpKind::Gather, "Gather"},       {OpKind::Nonlinear, "Nonlinear"}, {OpKind::Rescale, "Rescale"},
    {OpKind::Reshape, "Reshape"},     {OpKind::Transpose, "Transpose"}, {OpKind::Concat, "Concat"},
    {OpKind::MaskFill, "MaskFill"},   {OpKind::MatMul, "MatMul"},       {OpKind::Softmax, "Softmax"},
    {OpKind::LayerNorm, "LayerNorm"}, {OpKind::Dropout, "Dropout"},
};

[[noreturn]] void shape_error(const Node& n, const std::string& what) {
  throw GraphError("shape error at node " + n.id + ": " + what);
}

[[noreturn]] void scale_error(const Node& n, const std::string& what) {
  throw GraphError("scale error at node " + n.id + ": " + what);
}

std::int64_t parse_int(std::string_view s, const std::string& what) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw GraphError("bad integer for " + what + ": " + std::string(s));
  return v;
}

}  // namespace

std::string_view op_name(OpKind op) {
  for (const auto& o : kOps)
    if (o.op == op) return o.name;
  return "?";
}

std::optional<OpKind> parse_op(std::string_view name) {
  for (const auto& o : kOps)
    if (o.name == name) return o.op;
  return std::nullopt;
}

bool is_composite_op(OpKind op) {
  return op == OpKind::MatMul || op == OpKind::Softmax || op == OpKind::LayerNorm || op == OpKind::Dropout;
}

bool is_reduced_op(OpKind op) { return !is_composite_op(op); }

// ---------------------------------------------------------------------------

EinsumSpec EinsumSpec::parse(std::string_view text) {
  const auto arrow = text.find("->");
  if (arrow == std::string_view::npos) throw GraphError("einsum spec needs '->': " + std::string(text));
  EinsumSpec spec;
  std::string_view lhs = text.substr(0, arrow);
  spec.output = std::string(text.substr(arrow + 2));
  std::size_t start = 0;
  while (true) {
    const auto comma = lhs.find(',', start);
    spec.operands.emplace_back(lhs.substr(start, comma == std::string_view::npos ? lhs.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  auto check_letters = [&](const std::string& term) {
    std::set<char> seen;
    for (char c : term) {
      if (c < 'a' || c > 'z') throw GraphError("einsum indices must be lowercase letters: " + std::string(text));
      if (!seen.insert(c).second) throw GraphError("repeated einsum index within a term: " + std::string(text));
    }
  };
  for (const auto& t : spec.operands) check_letters(t);
  check_letters(spec.output);
  if (spec.operands.size() > 2) throw GraphError("einsum supports one or two operands: " + std::string(text));
  for (char c : spec.output) {
    bool found = false;
    for (const auto& t : spec.operands) found |= t.find(c) != std::string::npos;
    if (!found) throw GraphError("einsum output index not in operands: " + std::string(text));
  }
  return spec;
}

std::string EinsumSpec::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (i) s += ',';
    s += operands[i];
  }
  return s + "->" + output;
}

std::string EinsumSpec::contracted() const {
  std::string k;
  for (const auto& t : operands)
    for (char c : t)
      if (output.find(c) == std::string::npos && k.find(c) == std::string::npos) k += c;
  std::sort(k.begin(), k.end());
  return k;
}

EinsumPlan::EinsumPlan(const EinsumSpec& spec, const std::vector<Shape>& shapes) : n_ops_(shapes.size()) {
  if (shapes.size() != spec.operands.size()) throw GraphError("einsum operand count mismatch");
  std::map<char, std::int64_t> dim;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& term = spec.operands[i];
    if (term.size() != shapes[i].size())
      throw GraphError("einsum term '" + term + "' does not match rank of " + shape_to_string(shapes[i]));
    for (std::size_t a = 0; a < term.size(); ++a) {
      auto [it, fresh] = dim.emplace(term[a], shapes[i][a]);
      if (!fresh && it->second != shapes[i][a])
        throw GraphError(std::string("einsum index '") + term[a] + "' has conflicting sizes");
    }
  }
  const std::string k = spec.contracted();
  for (char c : spec.output) out_dims_.push_back(dim.at(c));
  for (char c : k) k_dims_.push_back(dim.at(c));
  out_shape_ = out_dims_;
  out_size_ = num_elements(out_dims_);
  k_size_ = num_elements(k_dims_);
  out_stride_.assign(n_ops_, std::vector<std::int64_t>(out_dims_.size(), 0));
  k_stride_.assign(n_ops_, std::vector<std::int64_t>(k_dims_.size(), 0));
  for (std::size_t i = 0; i < n_ops_; ++i) {
    const auto strides = row_major_strides(shapes[i]);
    const auto& term = spec.operands[i];
    for (std::size_t a = 0; a < term.size(); ++a) {
      if (auto p = spec.output.find(term[a]); p != std::string::npos) out_stride_[i][p] = strides[a];
      if (auto p = k.find(term[a]); p != std::string::npos) k_stride_[i][p] = strides[a];
    }
  }
}

void EinsumPlan::offsets(std::int64_t o, std::int64_t kk, std::int64_t* out) const {
  for (std::size_t i = 0; i < n_ops_; ++i) out[i] = 0;
  for (std::size_t a = out_dims_.size(); a-- > 0;) {
    const std::int64_t idx = o % out_dims_[a];
    o /= out_dims_[a];
    for (std::size_t i = 0; i < n_ops_; ++i) out[i] += idx * out_stride_[i][a];
  }
  for (std::size_t a = k_dims_.size(); a-- > 0;) {
    const std::int64_t idx = kk % k_dims_[a];
    kk /= k_dims_[a];
    for (std::size_t i = 0; i < n_ops_; ++i) out[i] += idx * k_stride_[i][a];
  }
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw GraphError("cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
    out[i] = std::max(da, db);
  }
  return out;
}

std::int64_t broadcast_source_index(const Shape& out, const Shape& in, std::int64_t o) {
  std::int64_t src = 0, stride = 1;
  const std::size_t off = out.size() - in.size();
  for (std::size_t a = out.size(); a-- > 0;) {
    const std::int64_t idx = o % out[a];
    o /= out[a];
    if (a < off) continue;
    const std::int64_t d = in[a - off];
    if (d != 1) src += idx * stride;
    stride *= d;
  }
  return src;
}

// ---------------------------------------------------------------------------

std::string Node::attr(const std::string& k, const std::string& def) const {
  auto it = attrs.find(k);
  return it == attrs.end() ? def : it->second;
}

std::int64_t Node::attr_int(const std::string& k, std::int64_t def) const {
  auto it = attrs.find(k);
  return it == attrs.end() ? def : parse_int(it->second, id + "." + k);
}

double Node::attr_real(const std::string& k, double def) const {
  auto it = attrs.find(k);
  if (it == attrs.end()) return def;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw GraphError("bad real for " + id + "." + k + ": " + it->second);
  }
}

std::vector<std::int64_t> Node::attr_list(const std::string& k) const {
  std::vector<std::int64_t> out;
  const std::string s = attr(k);
  if (s.empty() || s == "scalar") return out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find_first_of(",x", start);
    if (end == std::string::npos) end = s.size();
    out.push_back(parse_int(std::string_view(s).substr(start, end - start), id + "." + k));
    start = end + 1;
  }
  return out;
}

LookupFn Node::lookup_fn() const {
  auto fn = parse_lookup_fn(attr("fn"));
  if (!fn || *fn == LookupFn::RescaleDiv) throw GraphError("unsupported op: Nonlinear fn=" + attr("fn") + " at node " + id);
  return *fn;
}

// ---------------------------------------------------------------------------

Node& Graph::add_input(const std::string& id, Shape shape, bool tokens, std::int64_t vocab) {
  Node n;
  n.id = id;
  n.op = OpKind::Input;
  n.shape = std::move(shape);
  n.attrs["kind"] = tokens ? "tokens" : "real";
  if (tokens) n.attrs["vocab"] = std::to_string(vocab);
  nodes_.push_back(std::move(n));
  return nodes_.back();
}

Node& Graph::add_const(const std::string& id, Shape shape, Attrs attrs) {
  Node n;
  n.id = id;
  n.op = OpKind::Const;
  n.shape = std::move(shape);
  n.attrs = std::move(attrs);
  nodes_.push_back(std::move(n));
  return nodes_.back();
}

Node& Graph::add_node(const std::string& id, OpKind op, std::vector<std::string> inputs, Attrs attrs) {
  if (op == OpKind::Input || op == OpKind::Const) throw GraphError("use add_input/add_const for " + id);
  Node n;
  n.id = id;
  n.op = op;
  n.inputs = std::move(inputs);
  n.attrs = std::move(attrs);
  nodes_.push_back(std::move(n));
  return nodes_.back();
}

Node& Graph::append(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.back();
}

void Graph::add_output(const std::string& id) { outputs_.push_back(id); }

std::vector<std::string> Graph::inputs() const {
  std::vector<std::string> out;
  for (const auto& n : nodes_)
    if (n.op == OpKind::Input) out.push_back(n.id);
  return out;
}

const Node& Graph::node(const std::string& id) const { return nodes_[index_of(id)]; }

std::size_t Graph::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw GraphError("undefined tensor: " + id);
  return it->second;
}

std::size_t Graph::op_count() const {
  std::size_t n = 0;
  for (const auto& x : nodes_) n += x.op != OpKind::Input && x.op != OpKind::Const;
  return n;
}

std::map<std::string, std::size_t> Graph::op_histogram() const {
  std::map<std::string, std::size_t> h;
  for (const auto& x : nodes_) ++h[std::string(op_name(x.op))];
  return h;
}

bool Graph::is_reduced() const {
  return std::all_of(nodes_.begin(), nodes_.end(), [](const Node& n) { return is_reduced_op(n.op); });
}

bool operator==(const Graph& a, const Graph& b) {
  if (a.outputs_ != b.outputs_ || a.nodes_.size() != b.nodes_.size()) return false;
  for (std::size_t i = 0; i < a.nodes_.size(); ++i) {
    const Node &x = a.nodes_[i], &y = b.nodes_[i];
    if (x.id != y.id || x.op != y.op || x.inputs != y.inputs || x.attrs != y.attrs || x.shape != y.shape ||
        x.scale != y.scale)
      return false;
  }
  return true;
}

void Graph::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id.empty()) throw GraphError("empty tensor id");
    if (!index_.emplace(nodes_[i].id, i).second) throw GraphError("duplicate tensor id: " + nodes_[i].id);
  }
}

void Graph::finalize() {
  rebuild_index();
  for (const auto& n : nodes_)
    for (const auto& in : n.inputs)
      if (!index_.count(in)) throw GraphError("undefined tensor: " + in + " (input of node " + n.id + ")");
  for (const auto& o : outputs_)
    if (!index_.count(o)) throw GraphError("undefined tensor: " + o + " (graph output)");

  // Kahn's algorithm, always taking the earliest-declared ready node.
  const std::size_t n = nodes_.size();
  std::vector<std::size_t> pending(n, 0);
  std::vector<std::vector<std::size_t>> users(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& in : nodes_[i].inputs) {
      users[index_.at(in)].push_back(i);
      ++pending[i];
    }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (pending[i] == 0) ready.push(i);
  std::vector<Node> sorted;
  sorted.reserve(n);
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    sorted.push_back(nodes_[i]);
    for (std::size_t u : users[i])
      if (--pending[u] == 0) ready.push(u);
  }
  if (sorted.size() != n) throw GraphError("not a DAG: cycle among graph nodes");
  nodes_ = std::move(sorted);
  rebuild_index();
  for (auto& node : nodes_) infer(node);
}

void Graph::infer(Node& n) {
  std::vector<const Node*> in;
  for (const auto& id : n.inputs) in.push_back(&nodes_[index_.at(id)]);
  auto need_inputs = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi) shape_error(n, "wrong number of inputs (" + std::to_string(in.size()) + ")");
  };

  switch (n.op) {
    case OpKind::Input: {
      need_inputs(0, 0);
      const std::string kind = n.attr("kind", "real");
      if (kind == "tokens") {
        if (n.attr_int("vocab", 0) <= 0) shape_error(n, "token input needs vocab > 0");
        n.scale = 0;
      } else if (kind == "real") {
        n.scale = 1;
      } else {
        shape_error(n, "input kind must be tokens or real");
      }
      for (auto d : n.shape)
        if (d <= 0) shape_error(n, "non-positive dimension");
      return;
    }
    case OpKind::Const: {
      need_inputs(0, 0);
      for (auto d : n.shape)
        if (d <= 0) shape_error(n, "non-positive dimension");
      if (n.has_attr("range")) {
        if (n.shape.size() != 1) shape_error(n, "range constant must be rank 1");
        n.scale = 0;
      } else {
        n.scale = static_cast<int>(n.attr_int("scale", 1));
        if (n.scale < 0 || n.scale > 3) scale_error(n, "constant scale must be in [0, 3]");
      }
      return;
    }
    case OpKind::Einsum: {
      need_inputs(1, 2);
      EinsumSpec spec;
      try {
        spec = EinsumSpec::parse(n.attr("spec"));
        std::vector<Shape> shapes;
        for (auto* x : in) shapes.push_back(x->shape);
        n.shape = EinsumPlan(spec, shapes).output_shape();
      } catch (const GraphError& e) {
        shape_error(n, e.what());
      }
      n.scale = 0;
      for (auto* x : in) n.scale += x->scale;
      return;
    }
    case OpKind::MatMul: {
      need_inputs(2, 2);
      const Shape &a = in[0]->shape, &b = in[1]->shape;
      if (a.empty() || b.size() != 2 || a.back() != b[0])
        shape_error(n, "matmul of " + shape_to_string(a) + " and " + shape_to_string(b));
      n.shape = a;
      n.shape.back() = b[1];
      n.scale = in[0]->scale + in[1]->scale;
      return;
    }
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      need_inputs(2, 2);
      try {
        n.shape = broadcast_shapes(in[0]->shape, in[1]->shape);
      } catch (const GraphError& e) {
        shape_error(n, e.what());
      }
      if (n.op == OpKind::Mul) {
        n.scale = in[0]->scale + in[1]->scale;
      } else {
        if (in[0]->scale != in[1]->scale)
          scale_error(n, "operands at scales " + std::to_string(in[0]->scale) + " and " + std::to_string(in[1]->scale));
        n.scale = in[0]->scale;
      }
      return;
    }
    case OpKind::Gather: {
      need_inputs(2, 2);
      const Node &table = *in[0], &idx = *in[1];
      if (table.op != OpKind::Const) shape_error(n, "gather table must be a constant");
      if (table.shape.size() != 2) shape_error(n, "gather table must be rank 2");
      if (idx.scale != 0) scale_error(n, "gather indices must be integers (scale 0)");
      if (idx.is_token_input() && idx.attr_int("vocab", 0) != table.shape[0])
        shape_error(n, "token vocab does not match table rows");
      if (idx.op == OpKind::Const && idx.has_attr("range") && idx.shape[0] > table.shape[0])
        shape_error(n, "gather index out of range");
      if (!idx.is_token_input() && !(idx.op == OpKind::Const && idx.has_attr("range")))
        shape_error(n, "gather indices must be a token input or a range constant");
      n.shape = idx.shape;
      n.shape.push_back(table.shape[1]);
      n.scale = table.scale;
      return;
    }
    case OpKind::Nonlinear: {
      need_inputs(1, 1);
      const LookupFn fn = n.lookup_fn();
      const int want = fn == LookupFn::Rsqrt ? 2 : 1;
      if (in[0]->scale != want) scale_error(n, "nonlinearity input must be at scale " + std::to_string(want));
      n.shape = in[0]->shape;
      n.scale = 1;
      return;
    }
    case OpKind::Rescale: {
      need_inputs(1, 1);
      if (in[0]->scale < 1) scale_error(n, "rescale of a scale-0 tensor");
      n.shape = in[0]->shape;
      n.scale = in[0]->scale - 1;
      return;
    }
    case OpKind::Reshape: {
      need_inputs(1, 1);
      Shape s = n.attr_list("shape");
      for (auto d : s)
        if (d <= 0) shape_error(n, "non-positive dimension");
      if (num_elements(s) != num_elements(in[0]->shape))
        shape_error(n, "cannot reshape " + shape_to_string(in[0]->shape) + " to " + shape_to_string(s));
      n.shape = std::move(s);
      n.scale = in[0]->scale;
      return;
    }
    case OpKind::Transpose: {
      need_inputs(1, 1);
      const auto perm = n.attr_list("perm");
      const Shape& s = in[0]->shape;
      if (perm.size() != s.size()) shape_error(n, "perm rank mismatch");
      std::vector<bool> seen(s.size(), false);
      n.shape.assign(s.size(), 0);
      for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] < 0 || perm[i] >= static_cast<std::int64_t>(s.size()) || seen[perm[i]])
          shape_error(n, "perm is not a permutation");
        seen[perm[i]] = true;
        n.shape[i] = s[perm[i]];
      }
      n.scale = in[0]->scale;
      return;
    }
    case OpKind::Concat: {
      if (in.empty()) shape_error(n, "concat needs inputs");
      const std::int64_t axis = n.attr_int("axis", 0);
      const Shape& s0 = in[0]->shape;
      if (axis < 0 || axis >= static_cast<std::int64_t>(s0.size())) shape_error(n, "concat axis out of range");
      n.shape = s0;
      n.shape[axis] = 0;
      for (auto* x : in) {
        if (x->shape.size() != s0.size()) shape_error(n, "concat rank mismatch");
        for (std::size_t a = 0; a < s0.size(); ++a)
          if (static_cast<std::int64_t>(a) != axis && x->shape[a] != s0[a]) shape_error(n, "concat dimension mismatch");
        if (x->scale != in[0]->scale) scale_error(n, "concat operands at different scales");
        n.shape[axis] += x->shape[axis];
      }
      n.scale = in[0]->scale;
      return;
    }
    case OpKind::MaskFill: {
      need_inputs(1, 1);
      if (in[0]->shape.size() < 2) shape_error(n, "mask fill needs rank >= 2");
      if (in[0]->scale != 1) scale_error(n, "mask fill input must be at scale 1");
      n.shape = in[0]->shape;
      n.scale = 1;
      return;
    }
    case OpKind::Softmax: {
      need_inputs(1, 1);
      if (in[0]->shape.empty()) shape_error(n, "softmax of a scalar");
      if (n.attr_int("causal", 0) && in[0]->shape.size() < 2) shape_error(n, "causal softmax needs rank >= 2");
      if (in[0]->scale != 1) scale_error(n, "softmax input must be at scale 1");
      n.shape = in[0]->shape;
      n.scale = 1;
      return;
    }
    case OpKind::LayerNorm: {
      need_inputs(3, 3);
      const Shape& x = in[0]->shape;
      if (x.empty()) shape_error(n, "layer norm of a scalar");
      const Shape c{x.back()};
      if (in[1]->shape != c || in[2]->shape != c) shape_error(n, "gamma/beta must have shape " + shape_to_string(c));
      for (auto* t : in)
        if (t->scale != 1) scale_error(n, "layer norm operands must be at scale 1");
      n.shape = x;
      n.scale = 1;
      return;
    }
    case OpKind::Dropout: {
      need_inputs(1, 1);
      n.shape = in[0]->shape;
      n.scale = in[0]->scale;
      return;
    }
  }
  throw GraphError("unsupported op at node " + n.id);
}

}  // namespace zkinfer
