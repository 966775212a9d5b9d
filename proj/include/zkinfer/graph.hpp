#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "zkinfer/lookup.hpp"
#include "zkinfer/tensor.hpp"

namespace zkinfer {

struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class OpKind : std::uint8_t {
  Input,
  Const,
  Einsum,
  Add,
  Sub,
  Mul,
  Gather,
  Nonlinear,
  Rescale,
  Reshape,
  Transpose,
  Concat,
  MaskFill,
  // Composites, removed by reduce().
  MatMul,
  Softmax,
  LayerNorm,
  Dropout,
};

std::string_view op_name(OpKind op);
std::optional<OpKind> parse_op(std::string_view name);
bool is_reduced_op(OpKind op);
bool is_composite_op(OpKind op);

using Attrs = std::map<std::string, std::string>;

/// Parsed einsum equation with explicit single-letter indices, e.g. "tc,vc->tv".
struct EinsumSpec {
  std::vector<std::string> operands;
  std::string output;

  static EinsumSpec parse(std::string_view text);
  std::string to_string() const;
  /// Letters that appear in operands but not in the output.
  std::string contracted() const;
};

struct Node {
  std::string id;
  OpKind op = OpKind::Input;
  std::vector<std::string> inputs;
  Attrs attrs;

  // Filled by Graph::finalize().
  Shape shape;
  /// Fixed-point scale in units of f: values carry a factor 2^(f*scale).
  int scale = 0;

  bool has_attr(const std::string& k) const { return attrs.count(k) != 0; }
  std::string attr(const std::string& k, const std::string& def = "") const;
  std::int64_t attr_int(const std::string& k, std::int64_t def) const;
  double attr_real(const std::string& k, double def) const;
  std::vector<std::int64_t> attr_list(const std::string& k) const;

  bool is_token_input() const { return op == OpKind::Input && attr("kind") == "tokens"; }
  LookupFn lookup_fn() const;
};

/// Directed acyclic tensor graph. Node ids double as tensor ids.
class Graph {
 public:
  Node& add_input(const std::string& id, Shape shape, bool tokens = false, std::int64_t vocab = 0);
  Node& add_const(const std::string& id, Shape shape, Attrs attrs = {});
  Node& add_node(const std::string& id, OpKind op, std::vector<std::string> inputs, Attrs attrs = {});
  /// Appends a node of any kind verbatim.
  Node& append(Node n);
  void add_output(const std::string& id);

  /// Topologically sorts (stable with respect to insertion order), checks
  /// references, and infers shapes and scales. Must be called after edits.
  void finalize();

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::string>& outputs() const { return outputs_; }
  std::vector<std::string> inputs() const;

  bool has(const std::string& id) const { return index_.count(id) != 0; }
  const Node& node(const std::string& id) const;
  std::size_t index_of(const std::string& id) const;

  /// Number of non-Input, non-Const nodes.
  std::size_t op_count() const;
  std::map<std::string, std::size_t> op_histogram() const;
  bool is_reduced() const;

  friend bool operator==(const Graph& a, const Graph& b);

 private:
  void rebuild_index();
  void infer(Node& n);

  std::vector<Node> nodes_;
  std::vector<std::string> outputs_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Broadcast two shapes with numpy rules; throws GraphError on mismatch.
Shape broadcast_shapes(const Shape& a, const Shape& b);

/// Flat index into an operand of shape `in` for output flat index `out_index`
/// of broadcast shape `out`.
std::int64_t broadcast_source_index(const Shape& out, const Shape& in, std::int64_t out_index);

/// Enumerates einsum terms: for every output element, the operand offsets of
/// each contraction step in lexicographic order of the contracted letters.
class EinsumPlan {
 public:
  EinsumPlan(const EinsumSpec& spec, const std::vector<Shape>& operand_shapes);

  const Shape& output_shape() const { return out_shape_; }
  std::int64_t output_size() const { return out_size_; }
  std::int64_t contraction_size() const { return k_size_; }
  std::size_t operand_count() const { return n_ops_; }

  /// Operand offsets (one per operand) for output element `o` and step `k`.
  void offsets(std::int64_t o, std::int64_t k, std::int64_t* out) const;

 private:
  std::size_t n_ops_ = 0;
  Shape out_shape_;
  std::int64_t out_size_ = 1;
  std::int64_t k_size_ = 1;
  Shape out_dims_, k_dims_;
  // Per operand: stride contributed by each output letter / contracted letter.
  std::vector<std::vector<std::int64_t>> out_stride_, k_stride_;
};

// Text format -------------------------------------------------------------

/// Parses the line-oriented graph format (see docs/graph-format.md).
Graph parse_graph(std::string_view text);
std::string write_graph(const Graph& g);

// Reduction ----------------------------------------------------------------

/// Lowers composites to the reduced op set. Idempotent.
Graph reduce(const Graph& g);

}  // namespace zkinfer
