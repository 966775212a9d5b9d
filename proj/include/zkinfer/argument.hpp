#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "zkinfer/circuit.hpp"
#include "zkinfer/hash.hpp"
#include "zkinfer/merkle.hpp"
#include "zkinfer/model.hpp"

namespace zkinfer {

inline constexpr std::uint16_t kProofVersion = 1;
inline constexpr std::uint32_t kDefaultSamples = 30;

struct ProverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Digest advice_leaf(FieldElement a, FieldElement b, FieldElement c);
Digest fixed_leaf(const FixedRow& row);
Digest table_leaf(LookupFn fn, FieldElement input, FieldElement output);

/// Merkle tree over every (input, output) row of a lookup table; cached.
const MerkleTree& table_tree(LookupFn fn, const QuantConfig& cfg);
/// Builds every table tree for `cfg` ahead of the first prove or verify.
void prepare_tables(const QuantConfig& cfg);

/// What a verifier needs to know about a circuit: no weights, only geometry,
/// the instance layout and the roots of the fixed columns.
struct CircuitDescription {
  QuantConfig quant;
  Geometry geometry;
  IoLayout io;
  std::vector<Digest> fixed_roots;  // one per column group

  Digest geometry_digest() const;
  friend bool operator==(const CircuitDescription&, const CircuitDescription&) = default;
};

/// A compiled circuit together with the Merkle trees of its fixed columns.
class CommittedCircuit {
 public:
  explicit CommittedCircuit(CircuitMatrix c);

  const CircuitMatrix& circuit() const { return c_; }
  const CircuitDescription& description() const { return desc_; }
  const MerkleTree& fixed_tree(std::uint64_t group) const { return trees_.at(group); }

 private:
  CircuitMatrix c_;
  std::vector<MerkleTree> trees_;
  CircuitDescription desc_;
};

/// Fiat-Shamir transcript. Absorption order: version, model digest, geometry
/// digest, fixed roots, advice roots, public instance.
class Transcript {
 public:
  Transcript();
  Transcript& absorb_u64(std::uint64_t v);
  Transcript& absorb(const Digest& d);
  Transcript& absorb(const std::vector<Digest>& ds);
  Transcript& absorb(const std::vector<FieldElement>& vs);
  Digest seed() const;

 private:
  Sha256 h_;
};

Transcript make_transcript(std::uint16_t version, const Digest& model, const Digest& geometry,
                           const std::vector<Digest>& fixed_roots, const std::vector<Digest>& advice_roots,
                           const std::vector<FieldElement>& public_io);

/// k distinct indices in [0, n_rows) expanded from the transcript seed by a
/// partial Fisher-Yates shuffle. Throws std::invalid_argument when k > n_rows.
std::vector<std::uint64_t> challenge_rows(const Digest& seed, std::uint64_t k, std::uint64_t n_rows);
std::vector<std::uint64_t> challenge_rows(const Transcript& t, std::uint64_t k, std::uint64_t n_rows);

struct AdviceOpening {
  std::uint64_t row = 0;
  FieldElement a, b, c;
  std::vector<Digest> path;
};

struct FixedOpening {
  std::uint64_t row = 0;
  FixedRow cells;
  std::vector<Digest> path;
};

struct TableOpening {
  LookupFn fn = LookupFn::Relu;
  std::uint32_t index = 0;
  FieldElement input, output;
  std::vector<Digest> path;
};

struct Proof {
  std::uint16_t version = kProofVersion;
  std::uint32_t k = 0;
  QuantConfig quant;
  Geometry geometry;
  Digest model_digest{}, geometry_digest{};
  std::vector<Digest> fixed_roots, advice_roots;
  std::vector<FieldElement> public_io;
  std::vector<std::uint64_t> challenges;
  std::vector<AdviceOpening> advice;
  std::vector<FixedOpening> fixed;
  std::vector<TableOpening> tables;

  /// Binary envelope; layout in docs/proof-format.md.
  std::vector<std::uint8_t> serialize() const;
  /// Throws DecodeError on malformed or truncated input.
  static Proof deserialize(const std::vector<std::uint8_t>& bytes);
};

struct ProverOptions {
  /// Refuse to prove unless the witness satisfies every constraint.
  bool enforce_satisfied = true;
};

Proof prove(const CommittedCircuit& cc, const Witness& w, const ModelCommitment& mc, std::uint32_t k = kDefaultSamples,
            const ProverOptions& opt = {});

enum class FailureReason : std::uint8_t {
  None,
  CommitmentMismatch,
  MerklePath,
  GateViolation,
  LookupViolation,
  CopyViolation,
  TranscriptMismatch,
};

std::string_view failure_reason_name(FailureReason r);
std::optional<FailureReason> parse_failure_reason(std::string_view s);

struct VerifyReport {
  bool accepted = false;
  FailureReason reason = FailureReason::None;
  std::string detail;
};

struct VerifyOptions {
  /// Proofs opening fewer rows are rejected.
  std::uint32_t min_k = 1;
  /// When set, the instance the proof must be about (client-side binding).
  std::optional<std::vector<FieldElement>> expected_public_io;
};

/// Checks, in order: commitment, transcript, Merkle paths, gates, lookups, copies.
VerifyReport verify(const Proof& p, const CircuitDescription& desc, const ModelCommitment& mc,
                    const VerifyOptions& opt = {});

}  // namespace zkinfer
