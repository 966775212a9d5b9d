#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "helpers.hpp"
#include "zkinfer/argument.hpp"
#include "zkinfer/bytes.hpp"

using namespace zkinfer;

namespace {

struct Served {
  ModelBundle bundle;
  testutil::Compiled m;
  CommittedCircuit cc;
  ModelCommitment mc;

  Served(ModelBundle b, std::optional<std::uint64_t> cap = std::nullopt)
      : bundle(std::move(b)), m(bundle), cc(CircuitMatrix::compile(m.graph, m.constants, m.quant, cap)),
        mc(bundle.commitment()) {}

  const CircuitMatrix& c() const { return cc.circuit(); }
};

Served mlp(std::int64_t layers = 2, std::int64_t width = 16, std::uint64_t seed = 4) {
  return Served(make_mlp_bundle({layers, width}, seed));
}

TensorMap mlp_input(std::int64_t width, std::mt19937_64& rng) {
  return {{"x", testutil::random_ints({width}, -200, 200, rng)}};
}

/// log of C(n, k), for the miss probability of a sample without replacement.
double log_choose(double n, double k) { return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1); }

}  // namespace

TEST_CASE("honest proofs are accepted") {
  std::mt19937_64 rng(1);
  SUBCASE("mlp") {
    const auto s = mlp();
    for (int t = 0; t < 10; ++t) {
      const auto w = gen_witness(s.c(), mlp_input(16, rng));
      const auto rep = verify(prove(s.cc, w, s.mc), s.cc.description(), s.mc);
      INFO(rep.detail);
      CHECK(rep.accepted);
      CHECK(rep.reason == FailureReason::None);
    }
  }
  SUBCASE("toy transformer, split into column groups") {
    const auto s = Served(make_nanogpt_bundle({65, 4, 1, 4, 32}, 2, {}, InitOptions::wide_embeddings()), 1u << 14);
    CHECK(s.c().geometry().n_groups > 1);
    for (int t = 0; t < 3; ++t) {
      const TensorMap in{{"tokens", IntTensor({4}, testutil::random_tokens(4, 65, rng))}};
      const auto w = gen_witness(s.c(), in);
      const auto p = prove(s.cc, w, s.mc, 64);
      const auto rep = verify(p, s.cc.description(), s.mc, {64, w.public_io});
      INFO(rep.detail);
      CHECK(rep.accepted);
    }
  }
  SUBCASE("every row opened") {
    const auto s = mlp(1, 8);
    const auto w = gen_witness(s.c(), mlp_input(8, rng));
    const auto n = static_cast<std::uint32_t>(s.c().geometry().total_rows());
    const auto p = prove(s.cc, w, s.mc, n);
    CHECK(std::set<std::uint64_t>(p.challenges.begin(), p.challenges.end()).size() == n);
    CHECK(p.fixed.size() == n);
    CHECK(verify(p, s.cc.description(), s.mc).accepted);
    CHECK_THROWS_AS(prove(s.cc, w, s.mc, n + 1), std::invalid_argument);
  }
}

TEST_CASE("proofs are bound to the claimed input and output") {
  const auto s = mlp();
  std::mt19937_64 rng(2);
  const auto w = gen_witness(s.c(), mlp_input(16, rng));
  const auto p = prove(s.cc, w, s.mc);
  const auto& out = s.c().io().outputs.front();

  auto altered = w.public_io;
  altered[out.offset] += FieldElement::one();
  const auto rep = verify(p, s.cc.description(), s.mc, {1, altered});
  CHECK_FALSE(rep.accepted);
  CHECK(rep.reason == FailureReason::TranscriptMismatch);

  // Rewriting the instance inside the proof moves the challenges.
  Proof q = p;
  q.public_io = altered;
  CHECK(verify(q, s.cc.description(), s.mc).reason == FailureReason::TranscriptMismatch);

  // Changing the input makes a different instance too.
  auto other_in = w.public_io;
  other_in[s.c().io().inputs.front().offset] += FieldElement::one();
  CHECK(verify(p, s.cc.description(), s.mc, {1, other_in}).reason == FailureReason::TranscriptMismatch);
}

TEST_CASE("commitment mismatches") {
  const auto a = mlp(2, 16, 4);
  const auto b = mlp(2, 16, 5);
  std::mt19937_64 rng(3);
  const TensorMap in = mlp_input(16, rng);
  const auto p = prove(b.cc, gen_witness(b.c(), in), b.mc);
  CHECK(verify(p, b.cc.description(), b.mc).accepted);
  // Same graph, substituted weights.
  CHECK(verify(p, a.cc.description(), a.mc).reason == FailureReason::CommitmentMismatch);
  CHECK(verify(p, b.cc.description(), a.mc).reason == FailureReason::CommitmentMismatch);
  CHECK(verify(p, a.cc.description(), b.mc).reason == FailureReason::CommitmentMismatch);
  // A proof made against the wrong fixed columns but carrying the right digest.
  Proof q = prove(a.cc, gen_witness(a.c(), in), b.mc);
  CHECK(verify(q, b.cc.description(), b.mc).reason == FailureReason::CommitmentMismatch);
  // Different geometry.
  const Served capped(make_mlp_bundle({2, 16}, 4), 64);
  REQUIRE(capped.c().geometry() != a.c().geometry());
  CHECK(verify(prove(a.cc, gen_witness(a.c(), in), a.mc), capped.cc.description(), a.mc).reason ==
        FailureReason::CommitmentMismatch);
}

TEST_CASE("the prover refuses unsatisfying witnesses") {
  const auto s = mlp();
  std::mt19937_64 rng(4);
  Witness w = gen_witness(s.c(), mlp_input(16, rng));
  std::uint64_t row = 0;
  while (!(s.c().fixed()[row].sel & sel::MacW)) ++row;
  w.c[row] += FieldElement::one();
  CHECK_THROWS_AS(prove(s.cc, w, s.mc), ProverError);
  Witness short_w = gen_witness(s.c(), mlp_input(16, rng));
  short_w.a.pop_back();
  CHECK_THROWS_AS(prove(s.cc, short_w, s.mc), ProverError);
}

TEST_CASE("verifier failure classes") {
  const auto s = mlp(1, 8);
  std::mt19937_64 rng(5);
  const Witness honest = gen_witness(s.c(), mlp_input(8, rng));
  const auto n = static_cast<std::uint32_t>(s.c().geometry().total_rows());
  const auto& rows = s.c().fixed();
  const ProverOptions bypass{false};
  auto first_row = [&](std::uint32_t bits) {
    std::uint64_t r = 0;
    while (!(rows[r].sel & bits)) ++r;
    return r;
  };
  auto reason_after = [&](auto&& tamper) {
    Witness w = honest;
    tamper(w);
    return verify(prove(s.cc, w, s.mc, n, bypass), s.cc.description(), s.mc).reason;
  };

  CHECK(reason_after([&](Witness& w) { w.c[first_row(sel::MacW)] += FieldElement::one(); }) ==
        FailureReason::GateViolation);
  CHECK(reason_after([&](Witness& w) { w.c[first_row(sel::lookup(LookupFn::Relu))] += FieldElement::one(); }) ==
        FailureReason::LookupViolation);
  CHECK(reason_after([&](Witness& w) { w.public_io[s.c().io().inputs.front().offset] += FieldElement::one(); }) ==
        FailureReason::CopyViolation);

  const Proof good = prove(s.cc, honest, s.mc, n);
  const auto& desc = s.cc.description();
  {
    Proof p = good;
    p.advice[3].a += FieldElement::one();
    CHECK(verify(p, desc, s.mc).reason == FailureReason::MerklePath);
  }
  {
    Proof p = good;
    p.fixed[2].cells.w += FieldElement::one();
    CHECK(verify(p, desc, s.mc).reason == FailureReason::MerklePath);
  }
  {
    Proof p = good;
    p.fixed.pop_back();
    CHECK(verify(p, desc, s.mc).reason == FailureReason::MerklePath);
  }
  {
    Proof p = good;
    REQUIRE_FALSE(p.tables.empty());
    p.tables[0].output += FieldElement::one();
    CHECK(verify(p, desc, s.mc).reason == FailureReason::MerklePath);
  }
  {
    Proof p = good;
    p.tables.clear();
    CHECK(verify(p, desc, s.mc).reason == FailureReason::LookupViolation);
  }
  {
    Proof p = good;
    std::swap(p.challenges[0], p.challenges[1]);
    CHECK(verify(p, desc, s.mc).reason == FailureReason::TranscriptMismatch);
  }
  {
    const Proof p = prove(s.cc, honest, s.mc, 10);
    CHECK(verify(p, desc, s.mc, {10}).accepted);
    CHECK(verify(p, desc, s.mc, {11}).reason == FailureReason::TranscriptMismatch);
  }
  for (auto r : {FailureReason::None, FailureReason::CommitmentMismatch, FailureReason::MerklePath,
                 FailureReason::GateViolation, FailureReason::LookupViolation, FailureReason::CopyViolation,
                 FailureReason::TranscriptMismatch})
    CHECK(parse_failure_reason(failure_reason_name(r)) == r);
  CHECK_FALSE(parse_failure_reason("bogus").has_value());
}

TEST_CASE("challenge expansion") {
  const Digest seed = sha256("seed", 4);
  CHECK(challenge_rows(seed, 30, 4096) == challenge_rows(seed, 30, 4096));
  CHECK_THROWS_AS(challenge_rows(seed, 4097, 4096), std::invalid_argument);
  CHECK(challenge_rows(seed, 0, 0).empty());

  const auto all = challenge_rows(seed, 1000, 1000);
  std::set<std::uint64_t> s(all.begin(), all.end());
  CHECK(s.size() == 1000);
  CHECK(*s.rbegin() == 999);

  const auto some = challenge_rows(seed, 200, 1u << 20);
  CHECK(std::set<std::uint64_t>(some.begin(), some.end()).size() == 200);
  for (auto r : some) CHECK(r < (1u << 20));

  // Prefix stability: the first k draws do not depend on the total asked for.
  const auto fewer = challenge_rows(seed, 50, 1u << 20);
  CHECK(std::equal(fewer.begin(), fewer.end(), some.begin()));

  // Uniformity: chi-square over 16 buckets of a large sample.
  std::vector<int> bucket(16);
  for (int t = 0; t < 200; ++t) {
    const Digest d = sha256(&t, sizeof t);
    for (auto r : challenge_rows(d, 50, 160)) ++bucket[r / 10];
  }
  double chi = 0;
  const double expect = 200.0 * 50 / 16;
  for (int b : bucket) chi += (b - expect) * (b - expect) / expect;
  CHECK(chi < 37.7);  // p = 0.001 at 15 degrees of freedom
}

TEST_CASE("different instances draw different rows") {
  const auto s = mlp();
  const auto& desc = s.cc.description();
  std::mt19937_64 rng(6);
  const auto w = gen_witness(s.c(), mlp_input(16, rng));
  const std::vector<Digest> advice(desc.fixed_roots.size(), sha256("advice", 6));
  std::set<std::vector<std::uint64_t>> seen;
  for (int t = 0; t < 1000; ++t) {
    auto io = w.public_io;
    io[static_cast<std::size_t>(t) % io.size()] += FieldElement(1 + static_cast<std::uint64_t>(t) / io.size());
    const auto tr = make_transcript(kProofVersion, s.mc.digest, desc.geometry_digest(), desc.fixed_roots, advice, io);
    seen.insert(challenge_rows(tr, 30, desc.geometry.total_rows()));
  }
  CHECK(seen.size() == 1000);
}

TEST_CASE("proof serialization") {
  const auto s = mlp();
  std::mt19937_64 rng(7);
  const auto w = gen_witness(s.c(), mlp_input(16, rng));
  const Proof p = prove(s.cc, w, s.mc);
  const auto bytes = p.serialize();
  const Proof q = Proof::deserialize(bytes);
  CHECK(q.serialize() == bytes);
  CHECK(verify(q, s.cc.description(), s.mc).accepted);

  for (std::size_t cut = 0; cut < bytes.size(); cut += 1 + cut / 16) {
    const std::vector<std::uint8_t> prefix(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(Proof::deserialize(prefix), DecodeError);
  }
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(Proof::deserialize(longer), DecodeError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(Proof::deserialize(bad_magic), DecodeError);

  // First instance value sits after the fixed-size header and root lists.
  const std::size_t io_at = 4 + 4 + 4 + 4 + 16 + 64 + 4 + 32 * p.fixed_roots.size() + 4 + 32 * p.advice_roots.size() + 8;
  auto out_of_field = bytes;
  for (int i = 0; i < 8; ++i) out_of_field[io_at + static_cast<std::size_t>(i)] = 0xFF;
  CHECK_THROWS_AS(Proof::deserialize(out_of_field), DecodeError);
  ByteReader r(bytes.data() + io_at, 8);
  CHECK(r.u64() == p.public_io[0].value());
}

TEST_CASE("proof is a small fraction of the witness") {
  const auto s = Served(make_nanogpt_bundle({65, 16, 2, 4, 32}, 3, {}, InitOptions::wide_embeddings()));
  REQUIRE(s.c().geometry().total_rows() >= (1u << 14));
  std::mt19937_64 rng(8);
  const TensorMap in{{"tokens", IntTensor({16}, testutil::random_tokens(16, 65, rng))}};
  const auto w = gen_witness(s.c(), in);
  const auto bytes = prove(s.cc, w, s.mc).serialize();
  MESSAGE("proof " << bytes.size() << " bytes, witness " << w.byte_size() << " bytes");
  CHECK(static_cast<double>(bytes.size()) <= 0.01 * static_cast<double>(w.byte_size()));
}

TEST_CASE("a corrupted region is caught at the sampling rate") {
  const auto s = Served(make_mlp_bundle({1, 60}, 9));
  const auto& geo = s.c().geometry();
  const std::uint64_t n = geo.total_rows();
  REQUIRE(n == 4096);
  const auto& rows = s.c().fixed();
  // A run of consecutive weighted multiply-accumulate rows.
  std::uint64_t start = 0;
  while (!(rows[start].sel & sel::MacW)) ++start;
  const std::uint64_t r = 50;
  for (std::uint64_t i = start; i < start + r; ++i) REQUIRE((rows[i].sel & (sel::MacW | sel::MulW)) != 0);

  const std::uint32_t k = 30;
  const double expected = 1 - std::exp(log_choose(double(n - r), k) - log_choose(double(n), k));
  std::mt19937_64 rng(10);
  const int trials = 600;
  int caught = 0;
  for (int t = 0; t < trials; ++t) {
    Witness w = gen_witness(s.c(), mlp_input(60, rng));
    for (std::uint64_t i = start; i < start + r; ++i) w.a[i] += FieldElement(1 + rng() % 100);
    const auto rep = verify(prove(s.cc, w, s.mc, k, {false}), s.cc.description(), s.mc);
    caught += !rep.accepted;
    if (!rep.accepted) CHECK((rep.reason == FailureReason::GateViolation || rep.reason == FailureReason::CopyViolation));
  }
  const double rate = double(caught) / trials;
  const double sd = std::sqrt(expected * (1 - expected) / trials);
  MESSAGE("caught " << rate << " expected " << expected);
  CHECK(std::abs(rate - expected) < 4 * sd);
}
