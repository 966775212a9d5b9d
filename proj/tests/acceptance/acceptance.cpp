// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// An optional argument restricts the run to criteria whose name contains it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "reference.hpp"
#include "zkinfer/bench.hpp"
#include "zkinfer/protocol.hpp"

using namespace zkinfer;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

/// Every geometry compiled during the run, for the power-of-two check.
std::vector<Geometry> g_geometries;

struct Model {
  ModelBundle bundle;
  testutil::Compiled m;
  std::unique_ptr<CommittedCircuit> cc;
  ModelCommitment mc;

  explicit Model(ModelBundle b, std::optional<std::uint64_t> cap = std::nullopt)
      : bundle(std::move(b)), m(bundle),
        cc(std::make_unique<CommittedCircuit>(CircuitMatrix::compile(m.graph, m.constants, m.quant, cap))),
        mc(bundle.commitment()) {
    g_geometries.push_back(cc->circuit().geometry());
  }
  const CircuitMatrix& c() const { return cc->circuit(); }
};

Model gpt(NanoGptConfig cfg, std::uint64_t seed = 1, std::optional<std::uint64_t> cap = std::nullopt) {
  return Model(make_nanogpt_bundle(cfg, seed, {}, InitOptions::wide_embeddings()), cap);
}

TensorMap tokens_input(std::int64_t T, std::mt19937_64& rng) {
  return {{"tokens", IntTensor({T}, testutil::random_tokens(T, 65, rng))}};
}

TensorMap mlp_input(std::int64_t width, std::mt19937_64& rng) {
  return {{"x", testutil::random_ints({width}, -200, 200, rng)}};
}

bool prove_verify_roundtrip(const Model& md, const TensorMap& in, std::uint32_t k) {
  const Witness w = gen_witness(md.c(), in);
  const auto bytes = prove(*md.cc, w, md.mc, k).serialize();
  const auto io = encode_public_io(md.c().io(), in, decode_outputs(md.c().io(), w.public_io));
  return verify(Proof::deserialize(bytes), md.cc->description(), md.mc, {k, io}).accepted;
}

// Criteria -----------------------------------------------------------------------------

Outcome completeness() {
  std::mt19937_64 rng(101);
  int ok_mlp = 0, ok_gpt = 0;
  const int per_model = 1000, seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    const Model mlp(make_mlp_bundle({2, 16}, 100 + static_cast<std::uint64_t>(s)));
    for (int i = 0; i < per_model / seeds; ++i) ok_mlp += prove_verify_roundtrip(mlp, mlp_input(16, rng), 30);
    const Model g = gpt({65, 4, 2, 4, 32}, 200 + static_cast<std::uint64_t>(s));
    for (int i = 0; i < per_model / seeds; ++i) ok_gpt += prove_verify_roundtrip(g, tokens_input(4, rng), 30);
  }
  return {ok_mlp == per_model && ok_gpt == per_model,
          "mlp(2x16) " + std::to_string(ok_mlp) + "/1000, nanogpt(65,4,2,4,32) " + std::to_string(ok_gpt) + "/1000 accepted"};
}

Outcome soundness() {
  const Model md(make_mlp_bundle({1, 60}, 9));
  const std::uint64_t n = md.c().geometry().total_rows();
  const auto& rows = md.c().fixed();
  // The weighted multiply-accumulate block of the layer.
  std::uint64_t lo = 0;
  while (!(rows[lo].sel & (sel::MacW | sel::MulW))) ++lo;
  std::uint64_t hi = lo;
  while (hi < n && (rows[hi].sel & (sel::MacW | sel::MulW))) ++hi;

  const std::uint32_t k = 30;
  const std::uint64_t r = 50;
  const double expected = 1 - std::pow(1 - double(r) / double(n), k);
  std::mt19937_64 rng(102);
  const int trials = 1000;
  int rejected = 0;
  for (int t = 0; t < trials; ++t) {
    Witness w = gen_witness(md.c(), mlp_input(60, rng));
    const std::uint64_t start = lo + rng() % (hi - lo - r + 1);
    for (std::uint64_t i = start; i < start + r; ++i) w.a[i] += FieldElement(1 + rng() % 1000);
    rejected += !verify(prove(*md.cc, w, md.mc, k, {false}), md.cc->description(), md.mc).accepted;
  }
  const double rate = double(rejected) / trials;

  int full_rejected = 0;
  const int full_trials = 100;
  for (int t = 0; t < full_trials; ++t) {
    Witness w = gen_witness(md.c(), mlp_input(60, rng));
    const std::uint64_t len = 1 + rng() % 20;
    const std::uint64_t start = lo + rng() % (hi - lo - len + 1);
    for (std::uint64_t i = start; i < start + len; ++i) w.a[i] += FieldElement(1 + rng() % 1000);
    full_rejected += !verify(prove(*md.cc, w, md.mc, static_cast<std::uint32_t>(n), {false}), md.cc->description(), md.mc)
                           .accepted;
  }
  const bool pass = n == 4096 && std::abs(rate - expected) <= 0.05 && full_rejected == full_trials;
  return {pass, "n=" + std::to_string(n) + " r=" + std::to_string(r) + " k=30: rejected " + fmt(rate) + " vs expected " +
                    fmt(expected) + " over 1000 trials; k=n rejected " + std::to_string(full_rejected) + "/100"};
}

Outcome model_swap() {
  auto big = std::make_shared<const LoadedModel>(
      "toy", make_nanogpt_bundle({65, 2, 2, 4, 16}, 11, {}, InitOptions::wide_embeddings()));
  auto small = std::make_shared<const LoadedModel>(
      "toy-small", make_nanogpt_bundle({65, 2, 1, 4, 16}, 11, {}, InitOptions::wide_embeddings()));
  const std::string path = "acceptance-registry.jsonl";
  std::remove(path.c_str());
  const Registry reg(path);
  reg.publish(big->record());
  reg.publish(small->record());
  ServerOptions opt;
  opt.swap["toy"] = "toy-small";
  Server server({big, small}, opt);
  server.start("127.0.0.1", 0);
  const std::string addr = "127.0.0.1:" + std::to_string(server.port());
  std::mt19937_64 rng(103);
  int caught = 0;
  for (int i = 0; i < 100; ++i) {
    const auto r = client_query(addr, "toy", tokens_input(2, rng), 30, reg);
    caught += !r.report.accepted && r.report.reason == FailureReason::CommitmentMismatch;
  }
  server.stop();
  std::remove(path.c_str());
  return {caught == 100, std::to_string(caught) + "/100 rejected with commitment-mismatch"};
}

/// Toy transformer shared by the fidelity, mask and succinctness criteria.
const Model& toy16() {
  static const Model m = gpt({65, 16, 2, 4, 32}, 1);
  return m;
}

Outcome fidelity() {
  const Model& md = toy16();
  const NanoGptConfig cfg{65, 16, 2, 4, 32};
  const IoSegment& seg = md.c().io().outputs.front();
  std::mt19937_64 rng(104);
  double max_err = 0;
  int agree = 0;
  for (int p = 0; p < 200; ++p) {
    const TensorMap in = tokens_input(16, rng);
    const Witness w = gen_witness(md.c(), in);
    const auto logits = dequantize(decode_outputs(md.c().io(), w.public_io).at(seg.id), md.m.quant, seg.scale);
    const auto ref = ref::nanogpt_logits(cfg, md.bundle.weights, in.at("tokens").data);
    for (std::size_t t = 0; t < 16; ++t)
      for (std::size_t v = 0; v < 65; ++v) max_err = std::max(max_err, std::abs(logits.data[t * 65 + v] - ref[t][v]));
    const auto* last = logits.data.data() + 15 * 65;
    const auto a = std::max_element(last, last + 65) - last;
    const auto b = std::max_element(ref[15].begin(), ref[15].end()) - ref[15].begin();
    agree += a == b;
  }
  return {max_err <= 1.0 / 16 && agree >= 190,
          "max |err| " + fmt(max_err, 4) + " (limit 0.0625), next-token argmax agreement " + std::to_string(agree) + "/200"};
}

CircuitProfile counted(const Graph& g) {
  Geometry geo;
  const auto counts = CircuitMatrix::count(g, {}, std::nullopt, &geo);
  g_geometries.push_back(geo);
  return profile(counts, geo, g);
}

Graph gpt_graph(const NanoGptConfig& cfg) {
  return reduce(build_nanogpt(cfg, init_nanogpt_weights(cfg, 1, InitOptions::wide_embeddings())));
}

Outcome mn_ratio() {
  std::string detail;
  bool pass = true;
  for (const NanoGptConfig cfg : {NanoGptConfig{65, 64, 2, 4, 48}, NanoGptConfig{65, 64, 4, 4, 64}}) {
    const auto pg = counted(gpt_graph(cfg));
    const std::int64_t width = mlp_width_for_params(2, static_cast<std::int64_t>(pg.N));
    const MlpConfig mc{2, width};
    const auto pm = counted(reduce(build_mlp(mc, init_mlp_weights(mc, 1))));
    const double factor = *pg.ratio / *pm.ratio;
    pass = pass && factor >= 10;
    detail += (detail.empty() ? "" : "; ") + cfg.label() + " N=" + std::to_string(pg.N) + " ratio " + fmt(*pg.ratio, 1) +
              " vs mlp(2x" + std::to_string(width) + ") N=" + std::to_string(pm.N) + " ratio " + fmt(*pm.ratio, 2) +
              " -> " + fmt(factor, 1) + "x";
  }
  return {pass, detail};
}

Outcome scaling() {
  std::vector<std::uint64_t> by_embed, by_layers;
  for (std::int64_t e : {32, 48, 64}) by_embed.push_back(counted(gpt_graph({65, 64, 2, 4, e})).M);
  for (std::int64_t l : {2, 4, 6}) by_layers.push_back(counted(gpt_graph({65, 64, l, 4, 32})).M);
  const bool inc_e = by_embed[0] < by_embed[1] && by_embed[1] < by_embed[2];
  const bool inc_l = by_layers[0] < by_layers[1] && by_layers[1] < by_layers[2];
  const auto d1 = static_cast<std::int64_t>(by_embed[1] - by_embed[0]);
  const auto d2 = static_cast<std::int64_t>(by_embed[2] - by_embed[1]);
  auto list = [](const std::vector<std::uint64_t>& v) {
    return std::to_string(v[0]) + " < " + std::to_string(v[1]) + " < " + std::to_string(v[2]);
  };
  return {inc_e && inc_l && d2 - d1 > 0, "M by embed 32/48/64: " + list(by_embed) + " (second difference " +
                                              std::to_string(d2 - d1) + "); M by layers 2/4/6: " + list(by_layers)};
}

Outcome u_shape() {
  std::vector<BenchRecord> recs;
  for (int e = 10; e <= 16; ++e) {
    BenchConfig c;
    c.label = "2^" + std::to_string(e);
    c.gpt = {65, 2, 1, 4, 16};
    c.row_cap = std::uint64_t{1} << e;
    c.repeats = 9;
    recs.push_back(run_config(c));
    g_geometries.push_back({recs.back().n_rows, recs.back().n_groups});
  }
  std::size_t best = 0;
  bool mem_ok = true;
  std::string times, mems;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (*recs[i].prove_ms < *recs[best].prove_ms) best = i;
    if (i && *recs[i].peak_mem_bytes < *recs[i - 1].peak_mem_bytes) mem_ok = false;
    times += (i ? " " : "") + fmt(*recs[i].prove_ms, 1);
    mems += (i ? " " : "") + std::to_string(*recs[i].peak_mem_bytes / 1024);
  }
  const bool interior = best != 0 && best + 1 != recs.size();
  return {interior && mem_ok, "prove ms over caps 2^10..2^16: " + times + " (minimum at " + recs[best].label +
                                  "); peak KiB: " + mems + (mem_ok ? " (non-decreasing)" : " (decreases)")};
}

Outcome geometry() {
  const Model natural = gpt({65, 4, 1, 4, 32}, 3);
  const std::uint64_t n = natural.c().geometry().n_rows;
  bool overflow_ok = true;
  std::string detail = "natural " + std::to_string(n) + " rows;";
  std::mt19937_64 rng(105);
  const TensorMap in = tokens_input(4, rng);
  for (std::uint64_t cap : {n / 2, n / 8, n / 32}) {
    const Model capped = gpt({65, 4, 1, 4, 32}, 3, cap);
    const auto& geo = capped.c().geometry();
    const bool ok = geo.n_groups > 1 && geo.n_rows == cap &&
                    capped.c().counts().used_cells == natural.c().counts().used_cells &&
                    satisfies_all(capped.c(), gen_witness(capped.c(), in)).ok;
    overflow_ok = overflow_ok && ok;
    detail += " cap " + std::to_string(cap) + " -> " + std::to_string(geo.n_groups) + " groups, " +
              std::to_string(geo.n_columns()) + " columns, used cells " + std::to_string(capped.c().counts().used_cells) +
              (ok ? "" : " MISMATCH") + ";";
  }
  bool pow2 = true;
  for (const auto& g : g_geometries) pow2 = pow2 && std::has_single_bit(g.n_rows);
  return {pow2 && overflow_ok, detail + " " + std::to_string(g_geometries.size()) + " circuits, all power-of-two rows: " +
                                   (pow2 ? "yes" : "no")};
}

Outcome mask() {
  const Model& md = toy16();
  const std::int64_t mask_q = md.m.quant.mask_value();
  std::mt19937_64 rng(106);
  std::uint64_t checked = 0, wrong = 0;
  int tensors = 0;
  for (int p = 0; p < 20; ++p) {
    const Witness w = gen_witness(md.c(), tokens_input(16, rng));
    tensors = 0;
    for (const auto& node : md.m.graph.nodes()) {
      if (node.op != OpKind::MaskFill) continue;
      ++tensors;
      const auto s = witness_tensor(md.c(), w, node.id, node.shape);
      const std::int64_t T = node.shape.back(), heads = num_elements(node.shape) / (T * T);
      for (std::int64_t h = 0; h < heads; ++h)
        for (std::int64_t i = 0; i < T; ++i)
          for (std::int64_t j = i + 1; j < T; ++j) {
            ++checked;
            wrong += s.data[static_cast<std::size_t>((h * T + i) * T + j)] != mask_q;
          }
    }
  }
  return {tensors == 2 && checked > 0 && wrong == 0,
          std::to_string(tensors) + " masked score tensors x 20 prompts, " + std::to_string(checked) + " cells, " +
              std::to_string(wrong) + " differ from " + std::to_string(mask_q)};
}

Outcome succinctness() {
  std::mt19937_64 rng(107);
  bool size_ok = true;
  std::string detail = "proof/witness:";
  auto measure = [&](const Model& md, std::int64_t T) {
    const Witness w = gen_witness(md.c(), tokens_input(T, rng));
    const auto bytes = prove(*md.cc, w, md.mc, 30).serialize();
    const double frac = double(bytes.size()) / double(w.byte_size());
    size_ok = size_ok && frac <= 0.01;
    detail += " 2^" + std::to_string(std::countr_zero(md.c().geometry().total_rows())) + " rows " +
              std::to_string(bytes.size()) + "/" + std::to_string(w.byte_size()) + " = " + fmt(100 * frac, 2) + "%;";
  };
  measure(gpt({65, 2, 1, 4, 16}), 2);
  measure(gpt({65, 4, 1, 4, 16}), 4);
  measure(gpt({65, 4, 1, 4, 32}), 4);
  measure(toy16(), 16);

  auto verify_ms = [&](std::int64_t layers) {
    const Model md = gpt({65, 4, layers, 4, 32}, 5);
    const Witness w = gen_witness(md.c(), tokens_input(4, rng));
    const Proof p = prove(*md.cc, w, md.mc, 30);
    std::vector<double> t;
    for (int i = 0; i < 41; ++i) {
      const auto t0 = Clock::now();
      if (!verify(p, md.cc->description(), md.mc, {30, w.public_io}).accepted) return -1.0;
      t.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    std::sort(t.begin(), t.end());
    return t[t.size() / 2];
  };
  const double v2 = verify_ms(2), v6 = verify_ms(6);
  const bool time_ok = v2 > 0 && v6 > 0 && std::max(v2, v6) < 2 * std::min(v2, v6);
  return {size_ok && time_ok, detail + " verify median 2 layers " + fmt(v2) + " ms, 6 layers " + fmt(v6) + " ms"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string filter = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"completeness", completeness},     {"soundness", soundness},       {"model-swap", model_swap},
      {"quantization-fidelity", fidelity}, {"mn-ratio", mn_ratio},        {"scaling-trends", scaling},
      {"row-cap-u-shape", u_shape},        {"mask-adaptation", mask},     {"succinctness", succinctness},
      {"geometry", geometry},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " [" << fmt(secs, 1) << " s]: " << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
