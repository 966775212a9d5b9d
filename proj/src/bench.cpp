#include "zkinfer/bench.hpp"

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "zkinfer/argument.hpp"

namespace zkinfer {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

std::uint64_t status_field(const char* key) {
  std::ifstream in("/proc/self/status");
  std::string line;
  const std::string k = std::string(key) + ":";
  while (std::getline(in, line))
    if (line.rfind(k, 0) == 0) return std::stoull(line.substr(k.size())) * 1024;
  return 0;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

ModelBundle bundle_for(const BenchConfig& c) {
  if (c.model == "mlp") return make_mlp_bundle(c.mlp, c.seed, c.quant);
  return make_nanogpt_bundle(c.gpt, c.seed, c.quant, InitOptions::wide_embeddings());
}

TensorMap input_for(const BenchConfig& c, std::mt19937_64& rng) {
  if (c.model == "mlp") {
    IntTensor x({c.mlp.width});
    std::uniform_int_distribution<std::int64_t> d(-200, 200);
    for (auto& v : x.data) v = d(rng);
    return {{"x", x}};
  }
  IntTensor t({c.gpt.block_size});
  for (auto& v : t.data) v = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(c.gpt.vocab_size));
  return {{"tokens", t}};
}

std::string fmt_opt(const std::optional<double>& v, int prec) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << *v;
  return s.str();
}

std::string fmt_opt(const std::optional<std::uint64_t>& v) { return v ? std::to_string(*v) : "-"; }

}  // namespace

std::uint64_t peak_rss_bytes() { return status_field("VmHWM"); }
std::uint64_t current_rss_bytes() { return status_field("VmRSS"); }

bool reset_peak_rss() {
  std::ofstream f("/proc/self/clear_refs");
  if (!f) return false;
  f << "5";
  f.flush();
  return static_cast<bool>(f);
}

std::vector<BenchConfig> parse_suite(const nlohmann::json& j) {
  std::vector<BenchConfig> out;
  if (j.is_array() ? false : !j.contains("configs")) throw std::invalid_argument("suite needs a \"configs\" array");
  const auto& list = j.is_array() ? j : j.at("configs");
  for (const auto& e : list) {
    BenchConfig c;
    c.model = e.value("model", "nanogpt");
    if (c.model != "nanogpt" && c.model != "mlp") throw std::invalid_argument("unknown model kind " + c.model);
    if (c.model == "nanogpt") {
      c.gpt.vocab_size = e.value("vocab", c.gpt.vocab_size);
      c.gpt.block_size = e.value("block", c.gpt.block_size);
      c.gpt.n_layers = e.value("layers", c.gpt.n_layers);
      c.gpt.n_heads = e.value("heads", c.gpt.n_heads);
      c.gpt.embed_size = e.value("embed", c.gpt.embed_size);
      c.gpt.validate();
    } else {
      c.mlp.n_layers = e.value("layers", c.mlp.n_layers);
      if (e.contains("target_params"))
        c.mlp.width = mlp_width_for_params(c.mlp.n_layers, e.at("target_params").get<std::int64_t>());
      else
        c.mlp.width = e.value("width", c.mlp.width);
      c.mlp.validate();
    }
    if (e.contains("quant")) c.quant = QuantConfig::parse(e.at("quant").get<std::string>());
    if (e.contains("rows")) c.row_cap = e.at("rows").get<std::uint64_t>();
    c.k = e.value("k", c.k);
    c.seed = e.value("seed", c.seed);
    c.repeats = std::max(1, e.value("repeats", 1));
    c.prove = e.value("prove", true);
    c.pair = e.value("pair", "");
    c.label = e.value("label", c.model == "mlp" ? c.mlp.label() : c.gpt.label());
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<BenchConfig> load_suite(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open suite " + path);
  return parse_suite(nlohmann::json::parse(in));
}

BenchRecord run_config(const BenchConfig& cfg) {
  BenchRecord r;
  r.label = cfg.label;
  r.model = cfg.model;
  r.pair = cfg.pair;
  const ModelBundle b = bundle_for(cfg);
  const Graph g = reduce(b.graph());
  if (!cfg.prove) {
    Geometry geo;
    const auto counts = CircuitMatrix::count(g, b.quant, cfg.row_cap, &geo);
    const auto p = profile(counts, geo, g);
    r.N = p.N;
    r.M = p.M;
    r.ratio = p.ratio;
    r.n_rows = p.n_rows;
    r.n_groups = p.n_groups;
    r.n_columns = p.n_columns;
    return r;
  }
  const TensorMap consts = quantize_constants(g, b.weights, b.quant);
  const ModelCommitment mc = b.commitment();
  const CommittedCircuit cc(CircuitMatrix::compile(g, consts, b.quant, cfg.row_cap));
  const auto p = profile(cc.circuit(), g);
  r.N = p.N;
  r.M = p.M;
  r.ratio = p.ratio;
  r.n_rows = p.n_rows;
  r.n_groups = p.n_groups;
  r.n_columns = p.n_columns;

  std::mt19937_64 rng(cfg.seed);
  const TensorMap in = input_for(cfg, rng);
  std::vector<double> prove_t, verify_t;
  std::uint64_t peak = 0;
  r.accepted = true;
  // Large buffers come straight from mmap and go back on free, so the resident
  // set tracks what prove() actually holds.
  static const bool pinned = mallopt(M_MMAP_THRESHOLD, 128 * 1024) == 1;
  (void)pinned;
  // Warm-up: lookup tables and their Merkle trees are built once per process.
  prove(cc, gen_witness(cc.circuit(), in), mc, cfg.k);
  for (int i = 0; i < cfg.repeats; ++i) {
    malloc_trim(0);
    reset_peak_rss();
    const std::uint64_t base = current_rss_bytes();
    const auto t0 = Clock::now();
    const Witness w = gen_witness(cc.circuit(), in);
    const Proof proof = prove(cc, w, mc, cfg.k);
    prove_t.push_back(ms_since(t0));
    peak = std::max(peak, peak_rss_bytes() - std::min(base, peak_rss_bytes()));
    const auto bytes = proof.serialize();
    r.proof_bytes = bytes.size();
    const auto t1 = Clock::now();
    const auto rep = verify(Proof::deserialize(bytes), cc.description(), mc, {cfg.k, w.public_io});
    verify_t.push_back(ms_since(t1));
    r.accepted = r.accepted && rep.accepted;
    if (!rep.accepted) r.error = "verification failed: " + rep.detail;
  }
  r.prove_ms = median(prove_t);
  r.verify_ms = median(verify_t);
  r.peak_mem_bytes = peak;
  return r;
}

std::vector<BenchRecord> run_bench(const std::vector<BenchConfig>& suite, std::ostream* progress) {
  std::vector<BenchRecord> out;
  for (const auto& c : suite) {
    if (progress) *progress << "bench: " << c.label << std::endl;
    try {
      out.push_back(run_config(c));
    } catch (const std::exception& e) {
      BenchRecord r;
      r.label = c.label;
      r.model = c.model;
      r.pair = c.pair;
      r.error = e.what();
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::string format_bench_table(const std::vector<BenchRecord>& records) {
  const std::vector<std::string> head = {"config", "N",        "M",         "ratio",    "rows",
                                         "columns", "prove_ms", "verify_ms", "peak_mem", "proof_bytes"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : records) {
    if (!r.error.empty() && r.M == 0) {
      rows.push_back({r.label, "error: " + r.error});
      continue;
    }
    rows.push_back({r.label, std::to_string(r.N), std::to_string(r.M), r.ratio ? fmt_opt(r.ratio, 2) : "undefined",
                    std::to_string(r.n_rows) + "x" + std::to_string(r.n_groups), std::to_string(r.n_columns),
                    fmt_opt(r.prove_ms, 1), fmt_opt(r.verify_ms, 2), fmt_opt(r.peak_mem_bytes), fmt_opt(r.proof_bytes)});
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t i = 0; i < head.size(); ++i) width[i] = head[i].size();
  for (const auto& row : rows)
    if (row.size() == head.size())
      for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream s;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) s << "  ";
      if (cells.size() == head.size() && i + 1 < cells.size())
        s << (i == 0 ? std::left : std::right) << std::setw(static_cast<int>(width[i])) << cells[i];
      else
        s << cells[i];
    }
    s << "\n";
  };
  line(head);
  for (const auto& row : rows) line(row);

  std::map<std::string, std::vector<const BenchRecord*>> pairs;
  for (const auto& r : records)
    if (!r.pair.empty() && r.ratio) pairs[r.pair].push_back(&r);
  if (!pairs.empty()) {
    s << "\nM/N comparison\n";
    for (const auto& [name, members] : pairs) {
      const BenchRecord *gpt = nullptr, *mlp = nullptr;
      for (const auto* m : members) (m->model == "mlp" ? mlp : gpt) = m;
      s << name << ":";
      for (const auto* m : members) s << "  " << m->label << " N=" << m->N << " M=" << m->M << " ratio=" << fmt_opt(m->ratio, 2);
      if (gpt && mlp) s << "  factor=" << fmt_opt(*gpt->ratio / *mlp->ratio, 2);
      s << "\n";
    }
  }
  return s.str();
}

std::string bench_tsv(const std::vector<BenchRecord>& records) {
  std::ostringstream s;
  s << kBenchTsvHeader << "\n";
  for (const auto& r : records) {
    s << r.label << "\t" << r.N << "\t" << r.M << "\t" << (r.ratio ? fmt_opt(r.ratio, 4) : "undefined") << "\t"
      << r.n_rows * r.n_groups << "\t" << r.n_columns << "\t" << fmt_opt(r.prove_ms, 3) << "\t"
      << fmt_opt(r.verify_ms, 3) << "\t" << fmt_opt(r.peak_mem_bytes) << "\t" << fmt_opt(r.proof_bytes) << "\n";
  }
  return s.str();
}

}  // namespace zkinfer
