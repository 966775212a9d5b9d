#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zkinfer/model.hpp"

namespace zkinfer {

/// One entry of a bench suite.
///
/// Suite files are JSON: {"configs": [{"label": "...", "model": "nanogpt",
/// "vocab": 65, "block": 8, "layers": 2, "heads": 4, "embed": 32, "rows": 1024,
/// "k": 30, "seed": 1, "repeats": 1, "prove": true, "pair": "0.2M"}, ...]}.
/// MLP entries use "layers" and either "width" or "target_params".
struct BenchConfig {
  std::string label;
  std::string model = "nanogpt";
  NanoGptConfig gpt;
  MlpConfig mlp;
  QuantConfig quant;
  std::optional<std::uint64_t> row_cap;
  std::uint32_t k = 30;
  std::uint64_t seed = 1;
  int repeats = 1;
  /// false: profile only (counting walk, no witness or proof).
  bool prove = true;
  /// Groups configs for the M/N comparison table.
  std::string pair;
};

struct BenchRecord {
  std::string label;
  std::string model;
  std::string pair;
  std::uint64_t N = 0, M = 0;
  std::optional<double> ratio;
  std::uint64_t n_rows = 0, n_groups = 0, n_columns = 0;
  std::optional<double> prove_ms, verify_ms;
  /// Resident-set growth while generating the witness and proving.
  std::optional<std::uint64_t> peak_mem_bytes, proof_bytes;
  bool accepted = false;
  std::string error;
};

std::vector<BenchConfig> parse_suite(const nlohmann::json& j);
std::vector<BenchConfig> load_suite(const std::string& path);

BenchRecord run_config(const BenchConfig& cfg);
/// Runs every config; a failing config is recorded and the suite continues.
std::vector<BenchRecord> run_bench(const std::vector<BenchConfig>& suite, std::ostream* progress = nullptr);

/// Aligned table, followed by the M/N comparison when configs are paired.
std::string format_bench_table(const std::vector<BenchRecord>& records);

/// Tab-separated, one record per line after this header.
inline constexpr const char* kBenchTsvHeader =
    "config\tN\tM\tratio\trows\tcolumns\tprove_ms\tverify_ms\tpeak_mem\tproof_bytes";
std::string bench_tsv(const std::vector<BenchRecord>& records);

/// Peak resident set since the last reset, from /proc/self/status (VmHWM).
std::uint64_t peak_rss_bytes();
std::uint64_t current_rss_bytes();
/// Resets the peak to the current resident set; false when the kernel refuses.
bool reset_peak_rss();

}  // namespace zkinfer
