#include "zkinfer/circuit.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <iomanip>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>

namespace zkinfer {

namespace {

constexpr std::uint32_t kNoNode = 0xFFFFFFFFu;

FieldElement fe(std::int64_t v) { return encode(v); }

Expression::Term term(std::int64_t coeff, std::vector<CellRef> f) { return {fe(coeff), std::move(f)}; }

constexpr CellRef A{Col::A, 0}, B{Col::B, 0}, C{Col::C, 0}, W{Col::W, 0}, Cprev{Col::C, -1};

std::vector<GateDef> make_gates(const QuantConfig& cfg) {
  const std::int64_t half = std::int64_t{1} << (cfg.frac_bits - 1);
  return {
      {"mul", sel::Mul, {{term(1, {A, B}), term(-1, {C})}}},
      {"mac", sel::Mac, {{term(1, {Cprev}), term(1, {A, B}), term(-1, {C})}}},
      {"mulw", sel::MulW, {{term(1, {A, W}), term(-1, {C})}}},
      {"macw", sel::MacW, {{term(1, {Cprev}), term(1, {A, W}), term(-1, {C})}}},
      {"add", sel::Add, {{term(1, {A}), term(1, {B}), term(-1, {C})}}},
      {"sub", sel::Sub, {{term(1, {A}), term(-1, {B}), term(-1, {C})}}},
      {"addw", sel::AddW, {{term(1, {A}), term(1, {W}), term(-1, {C})}}},
      {"const", sel::Const, {{term(1, {W}), term(-1, {C})}}},
      {"rescale", sel::Rescale, {{term(1, {A}), term(half, {}), term(-cfg.scale(), {C}), term(-1, {B})}}},
  };
}

std::vector<LookupDef> make_lookups(const QuantConfig& cfg) {
  const std::int64_t half = std::int64_t{1} << (cfg.frac_bits - 1);
  std::vector<LookupDef> out;
  for (LookupFn fn : kAllLookupFns) {
    if (fn == LookupFn::RescaleDiv) {
      out.push_back({"rescale_range", sel::lookup(fn), fn, {{term(1, {B}), term(-half, {})}}, {}});
    } else {
      out.push_back({std::string(lookup_fn_name(fn)), sel::lookup(fn), fn, {{term(1, {A})}}, {{term(1, {C})}}});
    }
  }
  return out;
}

template <typename T, typename Make>
const T& cached_defs(const QuantConfig& cfg, Make make) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::unique_ptr<T>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{cfg.frac_bits, cfg.lookup_bits}];
  if (!slot) slot = std::make_unique<T>(make(cfg));
  return *slot;
}

void mark_cols(const Expression& e, unsigned& mask) {
  for (const auto& t : e.terms)
    for (const auto& f : t.factors)
      if (f.offset == 0 && f.col != Col::W) mask |= 1u << static_cast<int>(f.col);
}

/// Advice columns (bitmask over A, B, C) read at offset 0 by each selector bit.
const std::array<unsigned, 15>& bit_columns() {
  static const std::array<unsigned, 15> cols = [] {
    std::array<unsigned, 15> m{};
    const QuantConfig cfg;
    for (const auto& gd : gate_defs(cfg)) mark_cols(gd.poly, m[std::countr_zero(gd.bit)]);
    for (const auto& ld : lookup_defs(cfg)) {
      mark_cols(ld.input, m[std::countr_zero(ld.bit)]);
      mark_cols(ld.output, m[std::countr_zero(ld.bit)]);
    }
    return m;
  }();
  return cols;
}

std::uint64_t next_pow2(std::uint64_t v) { return v <= 1 ? 1 : std::bit_ceil(v); }

std::string fmt_ratio(const std::optional<double>& r) {
  if (!r) return "undefined";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << *r;
  return s.str();
}

}  // namespace

const std::vector<GateDef>& gate_defs(const QuantConfig& cfg) {
  return cached_defs<std::vector<GateDef>>(cfg, make_gates);
}

const std::vector<LookupDef>& lookup_defs(const QuantConfig& cfg) {
  return cached_defs<std::vector<LookupDef>>(cfg, make_lookups);
}

int used_advice_cells(std::uint32_t selector, bool copy_a, bool copy_b, bool out) {
  unsigned mask = 0;
  const auto& cols = bit_columns();
  for (std::uint32_t s = selector; s; s &= s - 1) mask |= cols[std::countr_zero(s)];
  if (copy_a) mask |= 1u;
  if (copy_b) mask |= 2u;
  if (out && mask == 0) mask |= 1u;
  return std::popcount(mask);
}

const IoSegment* IoLayout::find_input(const std::string& id) const {
  for (const auto& s : inputs)
    if (s.id == id) return &s;
  return nullptr;
}

OpTally CircuitCounts::total() const {
  OpTally t;
  for (const auto& [k, v] : per_op) {
    t.nodes += v.nodes;
    t.rows += v.rows;
    t.gates += v.gates;
    t.lookups += v.lookups;
    t.copies += v.copies;
  }
  return t;
}

// Layout ----------------------------------------------------------------------

class Layout {
 public:
  Layout(const Graph& g, const TensorMap* consts, const QuantConfig& cfg, std::optional<std::uint64_t> cap,
         CircuitMatrix& m)
      : g_(g), consts_(consts), cfg_(cfg), cap_(cap), m_(m) {}

  void run() {
    if (cap_ && (*cap_ == 0 || !std::has_single_bit(*cap_)))
      throw std::invalid_argument("row_cap must be a power of 2");
    if (!g_.is_reduced()) throw CircuitError("graph is not reduced");
    m_.cfg_ = cfg_;
    build_io();
    for (const auto& n : g_.nodes()) m_.node_names_.push_back(n.id);
    for (std::size_t i = 0; i < g_.nodes().size(); ++i) lower(g_.nodes()[i], static_cast<std::uint32_t>(i));
    expose_outputs();

    m_.counts_.placed_rows = pos_;
    Geometry geo;
    if (cap_) {
      geo.n_rows = *cap_;
      geo.n_groups = std::max<std::uint64_t>(1, (pos_ + *cap_ - 1) / *cap_);
    } else {
      geo.n_rows = next_pow2(pos_);
    }
    m_.geo_ = geo;
    if (consts_) {
      m_.rows_.resize(geo.total_rows());
      m_.row_node_.resize(geo.total_rows(), kNoNode);
    }
  }

 private:
  void build_io() {
    std::uint64_t off = 0;
    for (const auto& n : g_.nodes()) {
      if (n.op != OpKind::Input) continue;
      IoSegment s{n.id, n.is_token_input(), n.shape, n.attr_int("vocab", 0), n.scale, off, 0};
      s.length = static_cast<std::uint64_t>(num_elements(n.shape)) * (s.tokens ? static_cast<std::uint64_t>(s.vocab) : 1);
      off += s.length;
      m_.io_.inputs.push_back(std::move(s));
    }
    for (const auto& id : g_.outputs()) {
      const Node& n = g_.node(id);
      IoSegment s{id, false, n.shape, 0, n.scale, off, static_cast<std::uint64_t>(num_elements(n.shape))};
      off += s.length;
      m_.io_.outputs.push_back(std::move(s));
    }
    m_.io_.size = off;
  }

  std::uint64_t begin(std::uint64_t h) {
    if (cap_) {
      if (h > *cap_)
        throw CircuitError("region does not fit: node " + m_.node_names_[cur_node_] + " needs " + std::to_string(h) +
                           " contiguous rows, row_cap is " + std::to_string(*cap_));
      const std::uint64_t in = pos_ % *cap_;
      if (in + h > *cap_) pos_ += *cap_ - in;
    }
    const std::uint64_t start = pos_;
    pos_ += h;
    if (consts_) {
      m_.rows_.resize(pos_);
      m_.row_node_.resize(pos_, kNoNode);
    }
    return start;
  }

  void put(std::uint64_t r, const FixedRow& row) {
    if (consts_) {
      m_.rows_[r] = row;
      m_.row_node_[r] = cur_node_;
    }
    OpTally& t = *cur_;
    ++t.rows;
    t.gates += (row.sel & sel::kArithmetic) != 0;
    t.lookups += static_cast<std::uint64_t>(std::popcount(row.sel & sel::kLookups));
    t.copies += (row.src_a != 0) + (row.src_b != 0) + (row.out != 0);
    ++m_.counts_.used_rows;
    m_.counts_.used_cells += static_cast<std::uint64_t>(used_advice_cells(row.sel, row.src_a, row.src_b, row.out));
  }

  void enter(const std::string& key, std::uint32_t node) {
    cur_ = &m_.counts_.per_op[key];
    cur_node_ = node;
    ++cur_->nodes;
  }

  bool is_const(const Node& n) const { return n.op == OpKind::Const; }

  std::int64_t cval(const Node& n, std::int64_t i) const {
    if (!consts_) return 0;
    const auto it = consts_->find(n.id);
    if (it == consts_->end()) throw CircuitError("missing constant " + n.id);
    return it->second.data[static_cast<std::size_t>(i)];
  }

  const std::vector<std::uint64_t>& src(const std::string& id) {
    const auto it = m_.homes_.find(id);
    if (it != m_.homes_.end()) return it->second;
    const Node& n = g_.node(id);
    if (n.is_token_input()) throw CircuitError("token input " + id + " can only feed a gather");
    if (!is_const(n)) throw CircuitError("tensor " + id + " has no cells");
    return materialize(n);
  }

  const std::vector<std::uint64_t>& materialize(const Node& n) {
    OpTally* saved = cur_;
    const std::uint32_t saved_node = cur_node_;
    enter(std::string(op_name(OpKind::Const)), static_cast<std::uint32_t>(g_.index_of(n.id)));
    std::vector<std::uint64_t> h(static_cast<std::size_t>(num_elements(n.shape)));
    for (std::size_t i = 0; i < h.size(); ++i) {
      const std::uint64_t r = begin(1);
      FixedRow row;
      row.sel = sel::Const;
      row.w = fe(cval(n, static_cast<std::int64_t>(i)));
      put(r, row);
      h[i] = cell_code(r, 2);
    }
    cur_ = saved;
    cur_node_ = saved_node;
    return m_.homes_[n.id] = std::move(h);
  }

  void lower(const Node& n, std::uint32_t idx) {
    switch (n.op) {
      case OpKind::Input: {
        if (n.is_token_input()) return;
        const IoSegment* s = m_.io_.find_input(n.id);
        auto& h = m_.homes_[n.id];
        h.resize(s->length);
        for (std::uint64_t i = 0; i < s->length; ++i) h[i] = instance_code(s->offset + i);
        return;
      }
      case OpKind::Const:
        return;
      default:
        break;
    }
    enter(std::string(op_name(n.op)), idx);
    std::vector<std::uint64_t> out;
    switch (n.op) {
      case OpKind::Einsum:
        out = einsum(n);
        break;
      case OpKind::Add:
      case OpKind::Sub:
      case OpKind::Mul:
        out = elementwise(n);
        break;
      case OpKind::Gather:
        out = gather(n);
        break;
      case OpKind::Nonlinear:
        out = unary(n, sel::lookup(n.lookup_fn()));
        break;
      case OpKind::Rescale:
        out = unary(n, sel::Rescale | sel::LookupRescale);
        break;
      case OpKind::Reshape:
        out = src(n.inputs[0]);
        break;
      case OpKind::Transpose:
        out = transpose(n);
        break;
      case OpKind::Concat:
        out = concat(n);
        break;
      case OpKind::MaskFill:
        out = mask_fill(n);
        break;
      default:
        throw CircuitError("graph is not reduced: " + n.id);
    }
    m_.homes_[n.id] = std::move(out);
  }

  std::vector<std::uint64_t> einsum(const Node& n) {
    const EinsumSpec spec = EinsumSpec::parse(n.attr("spec"));
    std::vector<const Node*> ops;
    std::vector<Shape> shapes;
    for (const auto& id : n.inputs) {
      ops.push_back(&g_.node(id));
      shapes.push_back(ops.back()->shape);
    }
    const EinsumPlan plan(spec, shapes);
    const std::int64_t K = plan.contraction_size(), O = plan.output_size();

    // act: operand copied into A; wop: operand read from W (-1: constant 1).
    int act = 0, wop = -1;
    bool weighted = true;
    if (ops.size() == 2) {
      if (is_const(*ops[1])) {
        wop = 1;
      } else if (is_const(*ops[0])) {
        act = 1;
        wop = 0;
      } else {
        weighted = false;
      }
    }
    const auto& ha = src(n.inputs[static_cast<std::size_t>(act)]);
    const std::vector<std::uint64_t>* hb = weighted ? nullptr : &src(n.inputs[1]);

    std::vector<std::uint64_t> out(static_cast<std::size_t>(O));
    std::int64_t off[2] = {0, 0};
    for (std::int64_t o = 0; o < O; ++o) {
      const std::uint64_t start = begin(static_cast<std::uint64_t>(K));
      for (std::int64_t k = 0; k < K; ++k) {
        plan.offsets(o, k, off);
        FixedRow row;
        row.src_a = ha[static_cast<std::size_t>(off[act])];
        if (weighted) {
          row.sel = k == 0 ? sel::MulW : sel::MacW;
          row.w = wop < 0 ? FieldElement::one() : fe(cval(*ops[static_cast<std::size_t>(wop)], off[wop]));
        } else {
          row.sel = k == 0 ? sel::Mul : sel::Mac;
          row.src_b = (*hb)[static_cast<std::size_t>(off[1])];
        }
        put(start + static_cast<std::uint64_t>(k), row);
      }
      out[static_cast<std::size_t>(o)] = cell_code(start + static_cast<std::uint64_t>(K) - 1, 2);
    }
    return out;
  }

  std::vector<std::uint64_t> elementwise(const Node& n) {
    const Node *x = &g_.node(n.inputs[0]), *y = &g_.node(n.inputs[1]);
    bool cx = is_const(*x), cy = is_const(*y);
    if (cx && cy) cx = false;  // x gets materialised
    if (cx && n.op == OpKind::Sub) cx = false;
    if (cx) {
      std::swap(x, y);
      std::swap(cx, cy);
    }
    const std::int64_t E = num_elements(n.shape);
    std::vector<std::uint64_t> out(static_cast<std::size_t>(E));
    const auto& hx = src(x->id);
    const std::vector<std::uint64_t>* hy = cy ? nullptr : &src(y->id);
    for (std::int64_t i = 0; i < E; ++i) {
      const std::int64_t ix = broadcast_source_index(n.shape, x->shape, i);
      const std::int64_t iy = broadcast_source_index(n.shape, y->shape, i);
      FixedRow row;
      row.src_a = hx[static_cast<std::size_t>(ix)];
      if (cy) {
        const std::int64_t v = cval(*y, iy);
        switch (n.op) {
          case OpKind::Add: row.sel = sel::AddW; row.w = fe(v); break;
          case OpKind::Sub: row.sel = sel::AddW; row.w = fe(-v); break;
          default: row.sel = sel::MulW; row.w = fe(v); break;
        }
      } else {
        row.sel = n.op == OpKind::Add ? sel::Add : n.op == OpKind::Sub ? sel::Sub : sel::Mul;
        row.src_b = (*hy)[static_cast<std::size_t>(iy)];
      }
      const std::uint64_t r = begin(1);
      put(r, row);
      out[static_cast<std::size_t>(i)] = cell_code(r, 2);
    }
    return out;
  }

  std::vector<std::uint64_t> gather(const Node& n) {
    const Node& table = g_.node(n.inputs[0]);
    const Node& idx = g_.node(n.inputs[1]);
    const std::int64_t V = table.shape[0], Cw = table.shape[1];
    const std::int64_t T = num_elements(idx.shape);
    std::vector<std::uint64_t> out(static_cast<std::size_t>(T * Cw));
    if (idx.is_token_input()) {
      // One-hot contraction against the instance block of the prompt.
      const IoSegment* s = m_.io_.find_input(idx.id);
      for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t c = 0; c < Cw; ++c) {
          const std::uint64_t start = begin(static_cast<std::uint64_t>(V));
          for (std::int64_t v = 0; v < V; ++v) {
            FixedRow row;
            row.sel = v == 0 ? sel::MulW : sel::MacW;
            row.src_a = instance_code(s->offset + static_cast<std::uint64_t>(t * V + v));
            row.w = fe(cval(table, v * Cw + c));
            put(start + static_cast<std::uint64_t>(v), row);
          }
          out[static_cast<std::size_t>(t * Cw + c)] = cell_code(start + static_cast<std::uint64_t>(V) - 1, 2);
        }
      return out;
    }
    for (std::int64_t t = 0; t < T; ++t) {
      const std::int64_t r_idx = consts_ ? cval(idx, t) : t;
      for (std::int64_t c = 0; c < Cw; ++c) {
        FixedRow row;
        row.sel = sel::Const;
        row.w = fe(cval(table, r_idx * Cw + c));
        const std::uint64_t r = begin(1);
        put(r, row);
        out[static_cast<std::size_t>(t * Cw + c)] = cell_code(r, 2);
      }
    }
    return out;
  }

  std::vector<std::uint64_t> unary(const Node& n, std::uint32_t selector) {
    const auto& hx = src(n.inputs[0]);
    std::vector<std::uint64_t> out(hx.size());
    for (std::size_t i = 0; i < hx.size(); ++i) {
      FixedRow row;
      row.sel = selector;
      row.src_a = hx[i];
      const std::uint64_t r = begin(1);
      put(r, row);
      out[i] = cell_code(r, 2);
    }
    return out;
  }

  std::vector<std::uint64_t> transpose(const Node& n) {
    const auto& hx = src(n.inputs[0]);
    const Shape& in_shape = g_.node(n.inputs[0]).shape;
    const auto perm = n.attr_list("perm");
    const auto st = row_major_strides(in_shape);
    std::vector<std::uint64_t> out(hx.size());
    const std::size_t rank = n.shape.size();
    for (std::int64_t o = 0; o < static_cast<std::int64_t>(out.size()); ++o) {
      std::int64_t rem = o, s = 0;
      for (std::size_t a = rank; a-- > 0;) {
        s += (rem % n.shape[a]) * st[static_cast<std::size_t>(perm[a])];
        rem /= n.shape[a];
      }
      out[static_cast<std::size_t>(o)] = hx[static_cast<std::size_t>(s)];
    }
    return out;
  }

  std::vector<std::uint64_t> concat(const Node& n) {
    const std::int64_t axis = n.attr_int("axis", 0);
    const std::int64_t outer = num_elements(Shape(n.shape.begin(), n.shape.begin() + axis));
    const std::int64_t inner = num_elements(Shape(n.shape.begin() + axis + 1, n.shape.end()));
    std::vector<const std::vector<std::uint64_t>*> hs;
    for (const auto& id : n.inputs) hs.push_back(&src(id));
    std::vector<std::uint64_t> out;
    out.reserve(static_cast<std::size_t>(num_elements(n.shape)));
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const std::int64_t chunk = g_.node(n.inputs[i]).shape[static_cast<std::size_t>(axis)] * inner;
        const auto first = hs[i]->begin() + o * chunk;
        out.insert(out.end(), first, first + chunk);
      }
    return out;
  }

  std::vector<std::uint64_t> mask_fill(const Node& n) {
    const auto& hx = src(n.inputs[0]);
    const std::size_t rank = n.shape.size();
    const std::int64_t rows = n.shape[rank - 2], cols = n.shape[rank - 1];
    std::vector<std::uint64_t> out(hx.size());
    for (std::int64_t o = 0; o < static_cast<std::int64_t>(out.size()); ++o) {
      const std::int64_t j = o % cols, i = (o / cols) % rows;
      if (j <= i) {
        out[static_cast<std::size_t>(o)] = hx[static_cast<std::size_t>(o)];
        continue;
      }
      FixedRow row;
      row.sel = sel::Const;
      row.w = fe(cfg_.mask_value());
      const std::uint64_t r = begin(1);
      put(r, row);
      out[static_cast<std::size_t>(o)] = cell_code(r, 2);
    }
    return out;
  }

  // Output elements held in C of a producing row are bound in place; any
  // other home gets a row that copies it into A and binds A.
  void expose_outputs() {
    for (const auto& s : m_.io_.outputs) {
      enter("Output", static_cast<std::uint32_t>(g_.index_of(s.id)));
      const auto h = src(s.id);
      for (std::uint64_t i = 0; i < s.length; ++i) {
        const std::uint64_t x = h[i] - 1, j = s.offset + i;
        if ((x & 3) == 2 && bound_rows_.insert(x >> 2).second) {
          if (consts_) m_.rows_[x >> 2].out = out_code(j, 2);
          ++cur_->copies;
          continue;
        }
        FixedRow row;
        row.src_a = h[i];
        row.out = out_code(j, 0);
        put(begin(1), row);
      }
    }
  }

  const Graph& g_;
  const TensorMap* consts_;
  QuantConfig cfg_;
  std::optional<std::uint64_t> cap_;
  CircuitMatrix& m_;
  std::uint64_t pos_ = 0;
  OpTally* cur_ = nullptr;
  std::uint32_t cur_node_ = kNoNode;
  std::set<std::uint64_t> bound_rows_;
};

CircuitMatrix CircuitMatrix::compile(const Graph& g, const TensorMap& constants, const QuantConfig& cfg,
                                     std::optional<std::uint64_t> row_cap) {
  cfg.validate();
  CircuitMatrix m;
  Layout(g, &constants, cfg, row_cap, m).run();
  return m;
}

CircuitCounts CircuitMatrix::count(const Graph& g, const QuantConfig& cfg, std::optional<std::uint64_t> row_cap,
                                   Geometry* geometry) {
  cfg.validate();
  CircuitMatrix m;
  Layout(g, nullptr, cfg, row_cap, m).run();
  if (geometry) *geometry = m.geo_;
  return std::move(m.counts_);
}

std::vector<ColumnInfo> CircuitMatrix::columns() const {
  std::vector<ColumnInfo> cols;
  for (std::uint64_t gi = 0; gi < geo_.n_groups; ++gi) {
    const std::string s = std::to_string(gi);
    for (const char* n : {"A", "B", "C"}) cols.push_back({n + s, ColumnRole::Advice, gi});
    for (const char* n : {"SEL", "W", "SRC_A", "SRC_B", "OUT"}) cols.push_back({n + s, ColumnRole::Fixed, gi});
  }
  cols.push_back({"IO", ColumnRole::Instance, 0});
  return cols;
}

const std::vector<std::uint64_t>& CircuitMatrix::homes(const std::string& id) const {
  const auto it = homes_.find(id);
  if (it == homes_.end()) throw CircuitError("no cells for tensor " + id);
  return it->second;
}

const std::string& CircuitMatrix::node_of_row(std::uint64_t row) const {
  static const std::string none;
  if (row >= row_node_.size() || row_node_[row] == kNoNode) return none;
  return node_names_[row_node_[row]];
}

// Witness -----------------------------------------------------------------------

FieldElement Witness::cell(std::uint64_t code) const {
  if (code == 0) return FieldElement();
  const std::uint64_t x = code - 1, row = x >> 2;
  switch (x & 3) {
    case 0: return a.at(row);
    case 1: return b.at(row);
    case 2: return c.at(row);
    default: return public_io.at(row);
  }
}

std::vector<FieldElement> encode_public_io(const IoLayout& io, const TensorMap& inputs, const TensorMap& outputs) {
  std::vector<FieldElement> v(io.size);
  for (const auto& s : io.inputs) {
    const auto it = inputs.find(s.id);
    if (it == inputs.end()) throw CircuitError("missing input " + s.id);
    const IntTensor& t = it->second;
    if (t.size() * (s.tokens ? static_cast<std::size_t>(s.vocab) : 1) != s.length)
      throw CircuitError("input " + s.id + " has " + std::to_string(t.size()) + " elements, expected shape " +
                         shape_to_string(s.shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!s.tokens) {
        v[s.offset + i] = encode(t.data[i]);
        continue;
      }
      if (t.data[i] < 0 || t.data[i] >= s.vocab) throw CircuitError("token id out of range for input " + s.id);
      v[s.offset + i * static_cast<std::uint64_t>(s.vocab) + static_cast<std::uint64_t>(t.data[i])] =
          FieldElement::one();
    }
  }
  for (const auto& s : io.outputs) {
    const auto it = outputs.find(s.id);
    if (it == outputs.end()) continue;
    if (it->second.size() != s.length) throw CircuitError("output " + s.id + " has the wrong size");
    for (std::size_t i = 0; i < s.length; ++i) v[s.offset + i] = encode(it->second.data[i]);
  }
  return v;
}

TensorMap decode_outputs(const IoLayout& io, const std::vector<FieldElement>& public_io) {
  if (public_io.size() != io.size) throw CircuitError("instance vector has the wrong length");
  TensorMap out;
  for (const auto& s : io.outputs) {
    IntTensor t(s.shape);
    for (std::size_t i = 0; i < s.length; ++i) t.data[i] = decode(public_io[s.offset + i]);
    out.emplace(s.id, std::move(t));
  }
  return out;
}

Witness gen_witness(const CircuitMatrix& cm, const TensorMap& inputs) {
  const QuantConfig& cfg = cm.quant();
  const std::uint64_t total = cm.geometry().total_rows();
  Witness w;
  w.a.resize(total);
  w.b.resize(total);
  w.c.resize(total);
  w.public_io = encode_public_io(cm.io(), inputs, {});
  const std::int64_t half = std::int64_t{1} << (cfg.frac_bits - 1);
  const auto& rows = cm.fixed();

  for (std::uint64_t r = 0; r < total; ++r) {
    const FixedRow& row = rows[r];
    const std::uint32_t s = row.sel;
    if (s == 0 && row.src_a == 0 && row.out == 0) continue;
    const FieldElement a = w.cell(row.src_a);
    FieldElement b = w.cell(row.src_b), c;
    const FieldElement prev = r > 0 ? w.c[r - 1] : FieldElement();
    if (s & sel::Mul) c = a * b;
    if (s & sel::Mac) c = prev + a * b;
    if (s & sel::MulW) c = a * row.w;
    if (s & sel::MacW) c = prev + a * row.w;
    if (s & sel::Add) c = a + b;
    if (s & sel::Sub) c = a - b;
    if (s & sel::AddW) c = a + row.w;
    if (s & sel::Const) c = row.w;
    if (s & sel::Rescale) {
      const std::int64_t q = decode(a);
      const std::int64_t out = rescale_round(q, cfg.frac_bits);
      c = encode(out);
      b = encode(q + half - out * cfg.scale());
    }
    const std::uint32_t lk = s & sel::kLookups & ~sel::LookupRescale;
    if (lk) {
      const auto fn = static_cast<LookupFn>(std::countr_zero(lk) - std::countr_zero(sel::LookupBase));
      const LookupTable& t = cached_lookup(fn, cfg);
      const std::int64_t q = decode(a);
      if (!cfg.in_range(q)) ++w.saturations;
      c = encode(t.saturating(q));
    }
    if (row.out) w.public_io.at((row.out - 1) >> 2) = ((row.out - 1) & 3) == 0 ? a : c;
    w.a[r] = a;
    w.b[r] = b;
    w.c[r] = c;
  }
  return w;
}

IntTensor witness_tensor(const CircuitMatrix& c, const Witness& w, const std::string& id, const Shape& shape) {
  const auto& h = c.homes(id);
  IntTensor t(shape);
  if (t.size() != h.size()) throw CircuitError("shape does not match tensor " + id);
  for (std::size_t i = 0; i < h.size(); ++i) t.data[i] = decode(w.cell(h[i]));
  return t;
}

// Satisfaction ---------------------------------------------------------------------

std::string Violation::describe() const {
  std::string s = kind + " " + name + " violated at row " + std::to_string(row);
  if (!node.empty()) s += " (node " + node + ")";
  return s;
}

SatisfactionReport satisfies_all(const CircuitMatrix& cm, const Witness& w) {
  const Geometry& geo = cm.geometry();
  const std::uint64_t total = geo.total_rows();
  if (w.a.size() != total || w.b.size() != total || w.c.size() != total || w.public_io.size() != cm.io().size)
    throw CircuitError("witness dimensions do not match the circuit");
  const auto& rows = cm.fixed();
  const auto& gates = cm.gates();
  const auto& lookups = cm.lookups();

  SatisfactionReport rep;
  auto fail = [&](const char* kind, const std::string& name, std::uint64_t r) {
    rep.ok = false;
    rep.first = Violation{kind, name, r, cm.node_of_row(r)};
    return rep;
  };

  for (std::uint64_t r = 0; r < total; ++r) {
    const FixedRow& row = rows[r];
    if (row.sel == 0 && row.src_a == 0 && row.src_b == 0 && row.out == 0) continue;
    const std::uint64_t group_start = r - r % geo.n_rows;
    auto cell = [&](Col col, int off) -> FieldElement {
      const std::uint64_t rr = r + static_cast<std::uint64_t>(static_cast<std::int64_t>(off));
      if (rr < group_start || rr >= group_start + geo.n_rows) return FieldElement();
      switch (col) {
        case Col::A: return w.a[rr];
        case Col::B: return w.b[rr];
        case Col::C: return w.c[rr];
        default: return rows[rr].w;
      }
    };
    for (const auto& gd : gates)
      if ((row.sel & gd.bit) && gd.poly.eval(cell) != FieldElement()) return fail("gate", gd.name, r);
    for (const auto& ld : lookups)
      if ((row.sel & ld.bit) && !cached_lookup(ld.fn, cm.quant()).contains(ld.input.eval(cell), ld.output.eval(cell)))
        return fail("lookup", ld.name, r);
    if (row.src_a && w.a[r] != w.cell(row.src_a)) return fail("copy", "a", r);
    if (row.src_b && w.b[r] != w.cell(row.src_b)) return fail("copy", "b", r);
    if (row.out) {
      const std::uint64_t j = (row.out - 1) >> 2;
      const FieldElement v = ((row.out - 1) & 3) == 0 ? w.a[r] : w.c[r];
      if (j >= w.public_io.size() || v != w.public_io[j]) return fail("copy", "out", r);
    }
  }
  return rep;
}

// Profile ---------------------------------------------------------------------------

std::uint64_t graph_parameter_count(const Graph& g) {
  std::map<std::string, std::uint64_t> refs;
  for (const auto& n : g.nodes())
    if (n.op == OpKind::Const && !n.has_attr("range") && !n.has_attr("fill"))
      refs[n.attr("ref", n.id)] = static_cast<std::uint64_t>(num_elements(n.shape));
  std::uint64_t total = 0;
  for (const auto& [k, v] : refs) total += v;
  return total;
}

CircuitProfile profile(const CircuitCounts& counts, const Geometry& geo, const Graph& g) {
  CircuitProfile p;
  const OpTally t = counts.total();
  p.gates = t.gates;
  p.lookups = t.lookups;
  p.copies = t.copies;
  p.M = t.constraints();
  p.used_rows = counts.used_rows;
  p.used_cells = counts.used_cells;
  p.n_rows = geo.n_rows;
  p.n_groups = geo.n_groups;
  p.n_columns = geo.n_columns();
  p.N = graph_parameter_count(g);
  if (p.N > 0) p.ratio = static_cast<double>(p.M) / static_cast<double>(p.N);
  p.per_op = counts.per_op;
  return p;
}

CircuitProfile profile(const CircuitMatrix& c, const Graph& g) { return profile(c.counts(), c.geometry(), g); }

std::string format_profile(const CircuitProfile& p, const std::string& label) {
  std::ostringstream s;
  s << std::left << std::setw(12) << "op" << std::right << std::setw(8) << "nodes" << std::setw(12) << "rows"
    << std::setw(12) << "gates" << std::setw(12) << "lookups" << std::setw(12) << "copies" << std::setw(12) << "M"
    << '\n';
  auto line = [&](const std::string& name, const OpTally& t) {
    s << std::left << std::setw(12) << name << std::right << std::setw(8) << t.nodes << std::setw(12) << t.rows
      << std::setw(12) << t.gates << std::setw(12) << t.lookups << std::setw(12) << t.copies << std::setw(12)
      << t.constraints() << '\n';
  };
  OpTally total;
  for (const auto& [k, v] : p.per_op) {
    line(k, v);
    total.nodes += v.nodes;
    total.rows += v.rows;
    total.gates += v.gates;
    total.lookups += v.lookups;
    total.copies += v.copies;
  }
  line("total", total);
  s << '\n'
    << "config " << label << "  N " << p.N << "  M " << p.M << "  ratio " << fmt_ratio(p.ratio) << "  rows "
    << p.n_rows << "  groups " << p.n_groups << "  columns " << p.n_columns << "  used_cells " << p.used_cells
    << '\n';
  return s.str();
}

}  // namespace zkinfer
