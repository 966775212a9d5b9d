#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "zkinfer/eval.hpp"
#include "zkinfer/field.hpp"
#include "zkinfer/graph.hpp"
#include "zkinfer/lookup.hpp"
#include "zkinfer/quant.hpp"

namespace zkinfer {

struct CircuitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Selector bits of the SEL fixed column.
namespace sel {
inline constexpr std::uint32_t Mul = 1u << 0;      // c = a*b
inline constexpr std::uint32_t Mac = 1u << 1;      // c = c[-1] + a*b
inline constexpr std::uint32_t MulW = 1u << 2;     // c = a*w
inline constexpr std::uint32_t MacW = 1u << 3;     // c = c[-1] + a*w
inline constexpr std::uint32_t Add = 1u << 4;      // c = a + b
inline constexpr std::uint32_t Sub = 1u << 5;      // c = a - b
inline constexpr std::uint32_t AddW = 1u << 6;     // c = a + w
inline constexpr std::uint32_t Const = 1u << 7;    // c = w
inline constexpr std::uint32_t Rescale = 1u << 8;  // a + 2^(f-1) = c*2^f + b
inline constexpr std::uint32_t LookupBase = 1u << 9;
/// (b - 2^(f-1), 0) in RescaleDiv, i.e. 0 <= b < 2^f.
inline constexpr std::uint32_t LookupRescale = LookupBase << static_cast<int>(LookupFn::RescaleDiv);
inline constexpr std::uint32_t kArithmetic = (1u << 9) - 1;
inline constexpr std::uint32_t kLookups = ((1u << 6) - 1) << 9;

/// Bit enabling the (a, c) lookup into `fn` (RescaleDiv uses (b - H, 0)).
inline constexpr std::uint32_t lookup(LookupFn fn) { return LookupBase << static_cast<int>(fn); }
}  // namespace sel

// Columns -------------------------------------------------------------------

enum class ColumnRole : std::uint8_t { Fixed, Advice, Instance };

/// Cells a gate polynomial may read. A, B, C are advice; W is fixed.
enum class Col : std::uint8_t { A, B, C, W };

struct CellRef {
  Col col;
  int offset;  // -1, 0 or +1
};

/// Sum of coefficient * product-of-cells terms.
struct Expression {
  struct Term {
    FieldElement coeff;
    std::vector<CellRef> factors;
  };
  std::vector<Term> terms;

  template <typename Cell>
  FieldElement eval(Cell&& cell) const {
    FieldElement acc;
    for (const auto& t : terms) {
      FieldElement v = t.coeff;
      for (const auto& f : t.factors) v *= cell(f.col, f.offset);
      acc += v;
    }
    return acc;
  }
};

struct GateDef {
  std::string name;
  std::uint32_t bit;
  Expression poly;  // must vanish on rows where the bit is set
};

struct LookupDef {
  std::string name;
  std::uint32_t bit;
  LookupFn fn;
  Expression input, output;
};

const std::vector<GateDef>& gate_defs(const QuantConfig& cfg);
const std::vector<LookupDef>& lookup_defs(const QuantConfig& cfg);

/// Advice columns read by the gates, lookups and copies enabled on a row.
int used_advice_cells(std::uint32_t selector, bool copy_a, bool copy_b, bool out);

/// One row of the fixed columns of a column group.
///
/// Copy sources are 0 (none) or 1 + (row*4 + col) where col 0..2 names the
/// advice column of a global row and col 3 means instance cell `row`.
/// `out` is 0 or 1 + (j*4 + col), binding advice column col (A or C) of this
/// row to instance cell j.
struct FixedRow {
  std::uint32_t sel = 0;
  FieldElement w;
  std::uint64_t src_a = 0, src_b = 0, out = 0;

  friend bool operator==(const FixedRow&, const FixedRow&) = default;
};

inline constexpr std::uint64_t cell_code(std::uint64_t row, int col) { return 1 + row * 4 + static_cast<std::uint64_t>(col); }
inline constexpr std::uint64_t instance_code(std::uint64_t j) { return 1 + j * 4 + 3; }
inline constexpr std::uint64_t out_code(std::uint64_t j, int col) { return 1 + j * 4 + static_cast<std::uint64_t>(col); }

/// Where the public instance vector places graph inputs and outputs.
///
/// Token inputs appear one-hot: element (t, v) of a [T] prompt over vocabulary
/// V sits at offset + t*V + v.
struct IoSegment {
  std::string id;
  bool tokens = false;
  Shape shape;
  std::int64_t vocab = 0;
  int scale = 0;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  friend bool operator==(const IoSegment&, const IoSegment&) = default;
};

struct IoLayout {
  std::vector<IoSegment> inputs, outputs;
  std::uint64_t size = 0;

  const IoSegment* find_input(const std::string& id) const;
  friend bool operator==(const IoLayout&, const IoLayout&) = default;
};

/// Constraint tallies for one op kind.
struct OpTally {
  std::uint64_t nodes = 0, rows = 0, gates = 0, lookups = 0, copies = 0;
  std::uint64_t constraints() const { return gates + lookups + copies; }
  friend bool operator==(const OpTally&, const OpTally&) = default;
};

struct CircuitCounts {
  std::map<std::string, OpTally> per_op;
  std::uint64_t used_rows = 0;   // rows carrying a gate, lookup or copy
  std::uint64_t used_cells = 0;  // advice cells those rows read
  std::uint64_t placed_rows = 0;  // rows up to the last placed region, padding included

  OpTally total() const;
  friend bool operator==(const CircuitCounts&, const CircuitCounts&) = default;
};

struct Geometry {
  std::uint64_t n_rows = 1;    // rows per column group, a power of two
  std::uint64_t n_groups = 1;  // column groups (A, B, C, SEL, W, SRC_A, SRC_B, OUT)
  std::uint64_t total_rows() const { return n_rows * n_groups; }
  /// 8 columns per group plus the instance column.
  std::uint64_t n_columns() const { return 8 * n_groups + 1; }
  friend bool operator==(const Geometry&, const Geometry&) = default;
};

struct ColumnInfo {
  std::string name;
  ColumnRole role;
  std::uint64_t group;
};

class CircuitMatrix {
 public:
  /// Lowers a reduced graph. Constants supply the W column; regions are
  /// packed so that none crosses a column-group boundary. Without a cap a
  /// single group of the smallest sufficient power-of-two height is used;
  /// with a cap every group has exactly `row_cap` rows.
  static CircuitMatrix compile(const Graph& g, const TensorMap& constants, const QuantConfig& cfg,
                               std::optional<std::uint64_t> row_cap = std::nullopt);

  /// Same walk without materialising rows: counts and geometry only.
  static CircuitCounts count(const Graph& g, const QuantConfig& cfg, std::optional<std::uint64_t> row_cap,
                             Geometry* geometry = nullptr);

  const QuantConfig& quant() const { return cfg_; }
  const Geometry& geometry() const { return geo_; }
  const IoLayout& io() const { return io_; }
  const CircuitCounts& counts() const { return counts_; }
  const std::vector<FixedRow>& fixed() const { return rows_; }
  const std::vector<GateDef>& gates() const { return gate_defs(cfg_); }
  const std::vector<LookupDef>& lookups() const { return lookup_defs(cfg_); }
  std::vector<ColumnInfo> columns() const;

  /// Cell codes holding each element of a tensor (see FixedRow).
  const std::vector<std::uint64_t>& homes(const std::string& id) const;
  bool has_homes(const std::string& id) const { return homes_.count(id) != 0; }
  /// Graph node that produced a row, or "" for padding.
  const std::string& node_of_row(std::uint64_t row) const;

 private:
  friend class Layout;
  QuantConfig cfg_;
  Geometry geo_;
  IoLayout io_;
  CircuitCounts counts_;
  std::vector<FixedRow> rows_;
  std::vector<std::uint32_t> row_node_;
  std::vector<std::string> node_names_;
  std::map<std::string, std::vector<std::uint64_t>> homes_;
};

/// Advice assignment plus the public instance vector.
struct Witness {
  std::vector<FieldElement> a, b, c;
  std::vector<FieldElement> public_io;
  /// Lookup inputs outside the table range; such witnesses cannot satisfy the circuit.
  std::size_t saturations = 0;

  FieldElement cell(std::uint64_t code) const;
  std::uint64_t byte_size() const { return 8 * (a.size() + b.size() + c.size() + public_io.size()); }
};

/// Builds the instance vector for the given (quantized) inputs and executes the
/// circuit row by row to fill the advice columns.
Witness gen_witness(const CircuitMatrix& c, const TensorMap& inputs);

/// Instance vector for inputs and outputs.
std::vector<FieldElement> encode_public_io(const IoLayout& io, const TensorMap& inputs, const TensorMap& outputs);
/// Output tensors decoded from an instance vector.
TensorMap decode_outputs(const IoLayout& io, const std::vector<FieldElement>& public_io);

/// Values of a tensor as placed in the witness.
IntTensor witness_tensor(const CircuitMatrix& c, const Witness& w, const std::string& id, const Shape& shape);

struct Violation {
  std::string kind;  // "gate", "lookup", "copy"
  std::string name;  // gate or lookup name, or copy slot
  std::uint64_t row = 0;
  std::string node;
  std::string describe() const;
};

struct SatisfactionReport {
  bool ok = true;
  std::optional<Violation> first;
};

SatisfactionReport satisfies_all(const CircuitMatrix& c, const Witness& w);

struct CircuitProfile {
  std::uint64_t M = 0;
  std::uint64_t gates = 0, lookups = 0, copies = 0;
  std::uint64_t used_rows = 0, used_cells = 0;
  std::uint64_t n_rows = 0, n_groups = 0, n_columns = 0;
  std::uint64_t N = 0;
  /// M / N, absent when N = 0.
  std::optional<double> ratio;
  std::map<std::string, OpTally> per_op;
};

/// Parameter count: elements of weight-backed constants (not range/fill).
std::uint64_t graph_parameter_count(const Graph& g);

CircuitProfile profile(const CircuitMatrix& c, const Graph& g);
CircuitProfile profile(const CircuitCounts& counts, const Geometry& geo, const Graph& g);

/// Aligned per-op breakdown followed by the summary line.
std::string format_profile(const CircuitProfile& p, const std::string& label);

}  // namespace zkinfer
