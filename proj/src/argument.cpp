#include "zkinfer/argument.hpp"

#include <bit>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <unordered_map>

#include "zkinfer/bytes.hpp"

namespace zkinfer {

namespace {

void put_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

int log2_exact(std::uint64_t v) { return std::countr_zero(v); }

}  // namespace

Digest advice_leaf(FieldElement a, FieldElement b, FieldElement c) {
  std::uint8_t buf[25];
  buf[0] = static_cast<std::uint8_t>(HashTag::MerkleLeaf);
  put_u64(buf + 1, a.value());
  put_u64(buf + 9, b.value());
  put_u64(buf + 17, c.value());
  return sha256(buf, sizeof buf);
}

Digest fixed_leaf(const FixedRow& row) {
  std::uint8_t buf[37];
  buf[0] = static_cast<std::uint8_t>(HashTag::FixedLeaf);
  for (int i = 0; i < 4; ++i) buf[1 + i] = static_cast<std::uint8_t>(row.sel >> (8 * i));
  put_u64(buf + 5, row.w.value());
  put_u64(buf + 13, row.src_a);
  put_u64(buf + 21, row.src_b);
  put_u64(buf + 29, row.out);
  return sha256(buf, sizeof buf);
}

Digest table_leaf(LookupFn fn, FieldElement input, FieldElement output) {
  std::uint8_t buf[18];
  buf[0] = static_cast<std::uint8_t>(HashTag::TableLeaf);
  buf[1] = static_cast<std::uint8_t>(fn);
  put_u64(buf + 2, input.value());
  put_u64(buf + 10, output.value());
  return sha256(buf, sizeof buf);
}

const MerkleTree& table_tree(LookupFn fn, const QuantConfig& cfg) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, int>, std::unique_ptr<MerkleTree>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{static_cast<int>(fn), cfg.frac_bits, cfg.lookup_bits}];
  if (!slot) {
    const LookupTable& t = cached_lookup(fn, cfg);
    std::vector<Digest> leaves(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) leaves[i] = table_leaf(fn, t.input_field(i), t.output_field(i));
    slot = std::make_unique<MerkleTree>(std::move(leaves));
  }
  return *slot;
}

void prepare_tables(const QuantConfig& cfg) {
  for (auto fn : kAllLookupFns) table_tree(fn, cfg);
}

// Description ----------------------------------------------------------------------

Digest CircuitDescription::geometry_digest() const {
  Sha256 h;
  h.update_u8(static_cast<std::uint8_t>(HashTag::Geometry)).update("zkinfer-geometry-v1");
  h.update_u64(geometry.n_rows).update_u64(geometry.n_groups);
  h.update_u64(static_cast<std::uint64_t>(quant.frac_bits)).update_u64(static_cast<std::uint64_t>(quant.lookup_bits));
  h.update_u64(io.size);
  auto seg = [&](const IoSegment& s, std::uint8_t kind) {
    h.update_u8(kind).update_u64(s.id.size()).update(s.id);
    h.update_u64(s.shape.size());
    for (auto d : s.shape) h.update_u64(static_cast<std::uint64_t>(d));
    h.update_u64(static_cast<std::uint64_t>(s.vocab)).update_u64(static_cast<std::uint64_t>(s.scale));
    h.update_u64(s.offset).update_u64(s.length);
  };
  for (const auto& s : io.inputs) seg(s, s.tokens ? 1 : 0);
  for (const auto& s : io.outputs) seg(s, 2);
  return h.finish();
}

CommittedCircuit::CommittedCircuit(CircuitMatrix c) : c_(std::move(c)) {
  const Geometry& geo = c_.geometry();
  const auto& rows = c_.fixed();
  for (std::uint64_t g = 0; g < geo.n_groups; ++g) {
    std::vector<Digest> leaves(geo.n_rows);
    for (std::uint64_t r = 0; r < geo.n_rows; ++r) leaves[r] = fixed_leaf(rows[g * geo.n_rows + r]);
    trees_.emplace_back(std::move(leaves));
    desc_.fixed_roots.push_back(trees_.back().root());
  }
  desc_.quant = c_.quant();
  desc_.geometry = geo;
  desc_.io = c_.io();
}

// Transcript -------------------------------------------------------------------------

Transcript::Transcript() { h_.update_u8(static_cast<std::uint8_t>(HashTag::Transcript)).update("zkinfer-transcript-v1"); }

Transcript& Transcript::absorb_u64(std::uint64_t v) {
  h_.update_u64(v);
  return *this;
}

Transcript& Transcript::absorb(const Digest& d) {
  h_.update(d);
  return *this;
}

Transcript& Transcript::absorb(const std::vector<Digest>& ds) {
  h_.update_u64(ds.size());
  for (const auto& d : ds) h_.update(d);
  return *this;
}

Transcript& Transcript::absorb(const std::vector<FieldElement>& vs) {
  h_.update_u64(vs.size());
  std::vector<std::uint8_t> buf(vs.size() * 8);
  for (std::size_t i = 0; i < vs.size(); ++i) put_u64(buf.data() + 8 * i, vs[i].value());
  h_.update(buf.data(), buf.size());
  return *this;
}

Digest Transcript::seed() const {
  Sha256 copy = h_;
  return copy.finish();
}

Transcript make_transcript(std::uint16_t version, const Digest& model, const Digest& geometry,
                           const std::vector<Digest>& fixed_roots, const std::vector<Digest>& advice_roots,
                           const std::vector<FieldElement>& public_io) {
  Transcript t;
  t.absorb_u64(version).absorb(model).absorb(geometry).absorb(fixed_roots).absorb(advice_roots).absorb(public_io);
  return t;
}

std::vector<std::uint64_t> challenge_rows(const Digest& seed, std::uint64_t k, std::uint64_t n_rows) {
  if (k > n_rows) throw std::invalid_argument("cannot open " + std::to_string(k) + " of " + std::to_string(n_rows) + " rows");
  std::uint64_t counter = 0, buf[4] = {0, 0, 0, 0};
  int left = 0;
  auto next = [&]() -> std::uint64_t {
    if (left == 0) {
      Sha256 h;
      h.update_u8(static_cast<std::uint8_t>(HashTag::Challenge)).update(seed).update_u64(counter++);
      const Digest d = h.finish();
      for (int w = 0; w < 4; ++w) {
        buf[w] = 0;
        for (int i = 0; i < 8; ++i) buf[w] |= static_cast<std::uint64_t>(d[8 * w + i]) << (8 * i);
      }
      left = 4;
    }
    return buf[4 - left--];
  };
  auto uniform = [&](std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;  // 2^64 mod bound
    for (;;) {
      const std::uint64_t v = next();
      if (v >= threshold) return v % bound;
    }
  };
  std::unordered_map<std::uint64_t, std::uint64_t> moved;
  auto at = [&](std::uint64_t i) {
    const auto it = moved.find(i);
    return it == moved.end() ? i : it->second;
  };
  std::vector<std::uint64_t> out;
  out.reserve(k);
  for (std::uint64_t i = 0; i < k; ++i) {
    const std::uint64_t j = i + uniform(n_rows - i);
    const std::uint64_t vj = at(j);
    moved[j] = at(i);
    out.push_back(vj);
  }
  return out;
}

std::vector<std::uint64_t> challenge_rows(const Transcript& t, std::uint64_t k, std::uint64_t n_rows) {
  return challenge_rows(t.seed(), k, n_rows);
}

// Prover --------------------------------------------------------------------------------

Proof prove(const CommittedCircuit& cc, const Witness& w, const ModelCommitment& mc, std::uint32_t k,
            const ProverOptions& opt) {
  const CircuitMatrix& c = cc.circuit();
  const CircuitDescription& desc = cc.description();
  const Geometry& geo = c.geometry();
  const std::uint64_t n = geo.n_rows, total = geo.total_rows();
  if (w.a.size() != total || w.b.size() != total || w.c.size() != total || w.public_io.size() != c.io().size)
    throw ProverError("witness dimensions do not match the circuit");
  if (k == 0 || k > total) throw std::invalid_argument("k must be in [1, " + std::to_string(total) + "]");
  if (opt.enforce_satisfied) {
    const auto rep = satisfies_all(c, w);
    if (!rep.ok) throw ProverError("witness does not satisfy the circuit: " + rep.first->describe());
  }

  std::vector<MerkleTree> trees;
  trees.reserve(geo.n_groups);
  Proof p;
  for (std::uint64_t g = 0; g < geo.n_groups; ++g) {
    std::vector<Digest> leaves(n);
    for (std::uint64_t r = 0; r < n; ++r) {
      const std::uint64_t x = g * n + r;
      leaves[r] = advice_leaf(w.a[x], w.b[x], w.c[x]);
    }
    trees.emplace_back(std::move(leaves));
    p.advice_roots.push_back(trees.back().root());
  }

  p.k = k;
  p.quant = desc.quant;
  p.geometry = geo;
  p.model_digest = mc.digest;
  p.geometry_digest = desc.geometry_digest();
  p.fixed_roots = desc.fixed_roots;
  p.public_io = w.public_io;
  p.challenges = challenge_rows(make_transcript(p.version, p.model_digest, p.geometry_digest, p.fixed_roots,
                                                p.advice_roots, p.public_io),
                                k, total);

  const auto& rows = c.fixed();
  std::set<std::uint64_t> adv;
  std::set<std::pair<LookupFn, std::size_t>> tabs;
  for (std::uint64_t r : p.challenges) {
    const FixedRow& row = rows[r];
    adv.insert(r);
    if ((row.sel & (sel::Mac | sel::MacW)) && r % n != 0) adv.insert(r - 1);
    for (std::uint64_t s : {row.src_a, row.src_b})
      if (s && ((s - 1) & 3) != 3) adv.insert((s - 1) >> 2);
    auto cell = [&](Col col, int off) -> FieldElement {
      const std::uint64_t rr = r + static_cast<std::uint64_t>(static_cast<std::int64_t>(off));
      if (rr >= total) return FieldElement();
      switch (col) {
        case Col::A: return w.a[rr];
        case Col::B: return w.b[rr];
        case Col::C: return w.c[rr];
        default: return rows[rr].w;
      }
    };
    for (const auto& ld : c.lookups()) {
      if (!(row.sel & ld.bit)) continue;
      const auto idx = cached_lookup(ld.fn, desc.quant).index_of(ld.input.eval(cell));
      if (idx) tabs.insert({ld.fn, *idx});
    }
  }
  for (std::uint64_t r : adv) p.advice.push_back({r, w.a[r], w.b[r], w.c[r], trees[r / n].path(r % n)});
  std::set<std::uint64_t> fixed_rows(p.challenges.begin(), p.challenges.end());
  for (std::uint64_t r : fixed_rows) p.fixed.push_back({r, rows[r], cc.fixed_tree(r / n).path(r % n)});
  for (const auto& [fn, idx] : tabs) {
    const LookupTable& t = cached_lookup(fn, desc.quant);
    p.tables.push_back({fn, static_cast<std::uint32_t>(idx), t.input_field(idx), t.output_field(idx),
                        table_tree(fn, desc.quant).path(idx)});
  }
  return p;
}

// Verifier -----------------------------------------------------------------------------

std::string_view failure_reason_name(FailureReason r) {
  switch (r) {
    case FailureReason::None: return "none";
    case FailureReason::CommitmentMismatch: return "commitment-mismatch";
    case FailureReason::MerklePath: return "merkle-path";
    case FailureReason::GateViolation: return "gate-violation";
    case FailureReason::LookupViolation: return "lookup-violation";
    case FailureReason::CopyViolation: return "copy-violation";
    case FailureReason::TranscriptMismatch: return "transcript-mismatch";
  }
  return "none";
}

std::optional<FailureReason> parse_failure_reason(std::string_view s) {
  for (auto r : {FailureReason::None, FailureReason::CommitmentMismatch, FailureReason::MerklePath,
                 FailureReason::GateViolation, FailureReason::LookupViolation, FailureReason::CopyViolation,
                 FailureReason::TranscriptMismatch})
    if (failure_reason_name(r) == s) return r;
  return std::nullopt;
}

VerifyReport verify(const Proof& p, const CircuitDescription& desc, const ModelCommitment& mc,
                    const VerifyOptions& opt) {
  auto fail = [](FailureReason r, std::string d) { return VerifyReport{false, r, std::move(d)}; };
  const std::string at = " at row ";

  // Commitment.
  if (p.model_digest != mc.digest) return fail(FailureReason::CommitmentMismatch, "model digest differs from the commitment");
  const Digest geo_digest = desc.geometry_digest();
  if (!(p.quant == desc.quant) || !(p.geometry == desc.geometry) || p.geometry_digest != geo_digest)
    return fail(FailureReason::CommitmentMismatch, "circuit geometry differs from the commitment");
  if (p.fixed_roots != desc.fixed_roots)
    return fail(FailureReason::CommitmentMismatch, "fixed-column roots differ from the commitment");

  // Transcript.
  const Geometry& geo = desc.geometry;
  const std::uint64_t n = geo.n_rows, total = geo.total_rows();
  const auto& io = opt.expected_public_io ? *opt.expected_public_io : p.public_io;
  if (p.version != kProofVersion) return fail(FailureReason::TranscriptMismatch, "unsupported proof version");
  if (io.size() != desc.io.size) return fail(FailureReason::TranscriptMismatch, "instance has the wrong length");
  if (opt.expected_public_io && p.public_io != io)
    return fail(FailureReason::TranscriptMismatch, "proof instance differs from the expected input and output");
  if (p.k < opt.min_k) return fail(FailureReason::TranscriptMismatch, "proof opens fewer rows than required");
  if (p.k == 0 || p.k > total) return fail(FailureReason::TranscriptMismatch, "invalid sample count");
  if (p.advice_roots.size() != geo.n_groups) return fail(FailureReason::TranscriptMismatch, "wrong number of advice roots");
  const auto expected = challenge_rows(
      make_transcript(p.version, mc.digest, geo_digest, desc.fixed_roots, p.advice_roots, io), p.k, total);
  if (expected != p.challenges) return fail(FailureReason::TranscriptMismatch, "opened rows do not match the transcript");

  // Merkle paths.
  const std::size_t depth = static_cast<std::size_t>(log2_exact(n));
  std::unordered_map<std::uint64_t, const AdviceOpening*> adv;
  std::unordered_map<std::uint64_t, const FixedOpening*> fix;
  std::map<std::pair<LookupFn, std::uint64_t>, const TableOpening*> tabs;
  for (const auto& o : p.advice) {
    if (o.row >= total || o.path.size() != depth ||
        !verify_merkle_path(advice_leaf(o.a, o.b, o.c), o.row % n, o.path, p.advice_roots[o.row / n]))
      return fail(FailureReason::MerklePath, "advice opening" + at + std::to_string(o.row));
    adv[o.row] = &o;
  }
  for (const auto& o : p.fixed) {
    if (o.row >= total || o.path.size() != depth ||
        !verify_merkle_path(fixed_leaf(o.cells), o.row % n, o.path, desc.fixed_roots[o.row / n]))
      return fail(FailureReason::MerklePath, "fixed opening" + at + std::to_string(o.row));
    fix[o.row] = &o;
  }
  for (const auto& o : p.tables) {
    if (static_cast<std::size_t>(o.fn) >= kAllLookupFns.size())
      return fail(FailureReason::MerklePath, "unknown lookup table");
    const MerkleTree& tree = table_tree(o.fn, desc.quant);
    if (o.path.size() != static_cast<std::size_t>(tree.depth()) ||
        !verify_merkle_path(table_leaf(o.fn, o.input, o.output), o.index, o.path, tree.root()))
      return fail(FailureReason::MerklePath, "table opening for " + std::string(lookup_fn_name(o.fn)));
    tabs[{o.fn, o.input.value()}] = &o;
  }
  for (std::uint64_t r : p.challenges) {
    const auto f = fix.find(r);
    if (f == fix.end() || !adv.count(r)) return fail(FailureReason::MerklePath, "missing opening" + at + std::to_string(r));
    const FixedRow& row = f->second->cells;
    if ((row.sel & (sel::Mac | sel::MacW)) && r % n != 0 && !adv.count(r - 1))
      return fail(FailureReason::MerklePath, "missing opening" + at + std::to_string(r - 1));
    for (std::uint64_t s : {row.src_a, row.src_b})
      if (s && ((s - 1) & 3) != 3 && !adv.count((s - 1) >> 2))
        return fail(FailureReason::MerklePath, "missing copy source for row " + std::to_string(r));
  }

  auto cells_of = [&](std::uint64_t r) {
    return [&, r](Col col, int off) -> FieldElement {
      if (off != 0 && (off < 0 ? r % n == 0 : (r + 1) % n == 0)) return FieldElement();
      const std::uint64_t rr = r + static_cast<std::uint64_t>(static_cast<std::int64_t>(off));
      if (col == Col::W) {
        const auto it = fix.find(rr);
        return it == fix.end() ? FieldElement() : it->second->cells.w;
      }
      const auto it = adv.find(rr);
      if (it == adv.end()) return FieldElement();
      return col == Col::A ? it->second->a : col == Col::B ? it->second->b : it->second->c;
    };
  };

  // Gates.
  const auto& gates = gate_defs(desc.quant);
  for (std::uint64_t r : p.challenges) {
    const FixedRow& row = fix.at(r)->cells;
    const auto cell = cells_of(r);
    for (const auto& gd : gates)
      if ((row.sel & gd.bit) && gd.poly.eval(cell) != FieldElement())
        return fail(FailureReason::GateViolation, gd.name + at + std::to_string(r));
  }

  // Lookups.
  for (std::uint64_t r : p.challenges) {
    const FixedRow& row = fix.at(r)->cells;
    const auto cell = cells_of(r);
    for (const auto& ld : lookup_defs(desc.quant)) {
      if (!(row.sel & ld.bit)) continue;
      const auto it = tabs.find({ld.fn, ld.input.eval(cell).value()});
      if (it == tabs.end() || it->second->output != ld.output.eval(cell))
        return fail(FailureReason::LookupViolation, ld.name + at + std::to_string(r));
    }
  }

  // Copies.
  for (std::uint64_t r : p.challenges) {
    const FixedRow& row = fix.at(r)->cells;
    const AdviceOpening& here = *adv.at(r);
    auto source = [&](std::uint64_t s, FieldElement& v) {
      const std::uint64_t x = s - 1, idx = x >> 2;
      const int col = static_cast<int>(x & 3);
      if (col == 3) {
        if (idx >= io.size()) return false;
        v = io[idx];
        return true;
      }
      const AdviceOpening& o = *adv.at(idx);
      v = col == 0 ? o.a : col == 1 ? o.b : o.c;
      return true;
    };
    FieldElement v;
    if (row.src_a && (!source(row.src_a, v) || v != here.a))
      return fail(FailureReason::CopyViolation, "a" + at + std::to_string(r));
    if (row.src_b && (!source(row.src_b, v) || v != here.b))
      return fail(FailureReason::CopyViolation, "b" + at + std::to_string(r));
    if (row.out) {
      const std::uint64_t j = (row.out - 1) >> 2;
      const FieldElement mine = ((row.out - 1) & 3) == 0 ? here.a : here.c;
      if (j >= io.size() || io[j] != mine) return fail(FailureReason::CopyViolation, "out" + at + std::to_string(r));
    }
  }
  return {true, FailureReason::None, ""};
}

// Serialization -------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'Z', 'K', 'P', 'F'};

void write_digest(ByteWriter& w, const Digest& d) { w.bytes(d.data(), d.size()); }

Digest read_digest(ByteReader& r) {
  Digest d;
  r.bytes(d.data(), d.size());
  return d;
}

void write_path(ByteWriter& w, const std::vector<Digest>& path) {
  w.u8(static_cast<std::uint8_t>(path.size()));
  for (const auto& d : path) write_digest(w, d);
}

std::vector<Digest> read_path(ByteReader& r) {
  const std::uint8_t n = r.u8();
  if (n > 63) throw DecodeError("authentication path too long");
  std::vector<Digest> p(n);
  for (auto& d : p) d = read_digest(r);
  return p;
}

FieldElement read_field(ByteReader& r) {
  const std::uint64_t v = r.u64();
  if (v >= FieldElement::kModulus) throw DecodeError("field element out of range");
  return FieldElement(v);
}

std::uint64_t read_count(ByteReader& r, std::size_t min_size, bool wide = false) {
  const std::uint64_t n = wide ? r.u64() : r.u32();
  if (n > r.remaining() / min_size) throw DecodeError("element count exceeds the data");
  return n;
}

}  // namespace

std::vector<std::uint8_t> Proof::serialize() const {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u16(version);
  w.u16(0);
  w.u32(k);
  w.u8(static_cast<std::uint8_t>(quant.frac_bits));
  w.u8(static_cast<std::uint8_t>(quant.lookup_bits));
  w.u16(0);
  w.u64(geometry.n_rows);
  w.u64(geometry.n_groups);
  write_digest(w, model_digest);
  write_digest(w, geometry_digest);
  w.u32(static_cast<std::uint32_t>(fixed_roots.size()));
  for (const auto& d : fixed_roots) write_digest(w, d);
  w.u32(static_cast<std::uint32_t>(advice_roots.size()));
  for (const auto& d : advice_roots) write_digest(w, d);
  w.u64(public_io.size());
  for (auto v : public_io) w.u64(v.value());
  w.u32(static_cast<std::uint32_t>(challenges.size()));
  for (auto c : challenges) w.u64(c);
  w.u32(static_cast<std::uint32_t>(advice.size()));
  for (const auto& o : advice) {
    w.u64(o.row);
    w.u64(o.a.value());
    w.u64(o.b.value());
    w.u64(o.c.value());
    write_path(w, o.path);
  }
  w.u32(static_cast<std::uint32_t>(fixed.size()));
  for (const auto& o : fixed) {
    w.u64(o.row);
    w.u32(o.cells.sel);
    w.u64(o.cells.w.value());
    w.u64(o.cells.src_a);
    w.u64(o.cells.src_b);
    w.u64(o.cells.out);
    write_path(w, o.path);
  }
  w.u32(static_cast<std::uint32_t>(tables.size()));
  for (const auto& o : tables) {
    w.u8(static_cast<std::uint8_t>(o.fn));
    w.u32(o.index);
    w.u64(o.input.value());
    w.u64(o.output.value());
    write_path(w, o.path);
  }
  return w.take();
}

Proof Proof::deserialize(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DecodeError("not a proof file");
  Proof p;
  p.version = r.u16();
  if (p.version != kProofVersion) throw DecodeError("unsupported proof version " + std::to_string(p.version));
  r.u16();
  p.k = r.u32();
  p.quant.frac_bits = r.u8();
  p.quant.lookup_bits = r.u8();
  r.u16();
  p.geometry.n_rows = r.u64();
  p.geometry.n_groups = r.u64();
  if (p.geometry.n_rows == 0 || !std::has_single_bit(p.geometry.n_rows) || p.geometry.n_groups == 0)
    throw DecodeError("invalid geometry");
  p.model_digest = read_digest(r);
  p.geometry_digest = read_digest(r);
  p.fixed_roots.resize(read_count(r, 32));
  for (auto& d : p.fixed_roots) d = read_digest(r);
  p.advice_roots.resize(read_count(r, 32));
  for (auto& d : p.advice_roots) d = read_digest(r);
  p.public_io.resize(read_count(r, 8, true));
  for (auto& v : p.public_io) v = read_field(r);
  p.challenges.resize(read_count(r, 8));
  for (auto& c : p.challenges) c = r.u64();
  p.advice.resize(read_count(r, 33));
  for (auto& o : p.advice) {
    o.row = r.u64();
    o.a = read_field(r);
    o.b = read_field(r);
    o.c = read_field(r);
    o.path = read_path(r);
  }
  p.fixed.resize(read_count(r, 45));
  for (auto& o : p.fixed) {
    o.row = r.u64();
    o.cells.sel = r.u32();
    o.cells.w = read_field(r);
    o.cells.src_a = r.u64();
    o.cells.src_b = r.u64();
    o.cells.out = r.u64();
    o.path = read_path(r);
  }
  p.tables.resize(read_count(r, 22));
  for (auto& o : p.tables) {
    const std::uint8_t fn = r.u8();
    if (fn >= kAllLookupFns.size()) throw DecodeError("unknown lookup table");
    o.fn = static_cast<LookupFn>(fn);
    o.index = r.u32();
    o.input = read_field(r);
    o.output = read_field(r);
    o.path = read_path(r);
  }
  if (!r.done()) throw DecodeError("trailing bytes in proof");
  return p;
}

}  // namespace zkinfer
