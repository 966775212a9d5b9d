#include <doctest.h>

#include <cmath>
#include <random>

#include "zkinfer/field.hpp"
#include "zkinfer/lookup.hpp"
#include "zkinfer/quant.hpp"

using namespace zkinfer;

namespace {

constexpr std::uint64_t P = 0xFFFFFFFF00000001ULL;

// Schoolbook reference arithmetic on unsigned __int128.
std::uint64_t ref_mul(std::uint64_t a, std::uint64_t b) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(a) * b) % P);
}
std::uint64_t ref_add(std::uint64_t a, std::uint64_t b) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(a) + b) % P);
}

// Scalar reference for round(g(x) * 2^f), ties away from zero.
long ref_round(double v) { return v < 0 ? -static_cast<long>(std::floor(-v + 0.5)) : static_cast<long>(std::floor(v + 0.5)); }

double ref_gelu(double x) { return x * 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("encode embeds signed integers") {
  CHECK(encode(0).value() == 0);
  CHECK(encode(-128).value() == 18446744069414584193ULL);
  CHECK(encode(5).value() == 5);
  QuantConfig cfg;
  CHECK(cfg.mask_value() == -32767);
  CHECK(encode(cfg.mask_value()).value() == P - 32767);
}

TEST_CASE("encode rejects values outside the half range") {
  CHECK_THROWS_WITH(encode(static_cast<std::int64_t>(P / 2)), "value outside field half-range");
  CHECK_THROWS_WITH(encode(-static_cast<std::int64_t>(P / 2)), "value outside field half-range");
  CHECK_THROWS(encode(INT64_MIN));
  CHECK(decode(encode(static_cast<std::int64_t>(P / 2 - 1))) == static_cast<std::int64_t>(P / 2 - 1));
}

TEST_CASE("round trip over the lookup range") {
  QuantConfig cfg;
  for (std::int64_t v = cfg.range_min(); v <= cfg.range_max(); ++v) REQUIRE(decode(encode(v)) == v);
}

TEST_CASE("field arithmetic matches 128-bit reference on random samples") {
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<std::uint64_t> dist(0, P - 1);
  for (int i = 0; i < 20000; ++i) {
    const std::uint64_t a = dist(rng), b = dist(rng), c = dist(rng);
    const FieldElement fa(a), fb(b), fc(c);
    REQUIRE((fa * fb).value() == ref_mul(a, b));
    REQUIRE((fa + fb).value() == ref_add(a, b));
    REQUIRE(((fa - fb) + fb) == fa);
    REQUIRE(((fa * fb) * fc) == (fa * (fb * fc)));
    REQUIRE(((fa + fb) + fc) == (fa + (fb + fc)));
    REQUIRE((fa * (fb + fc)) == (fa * fb + fa * fc));
    if (a != 0) REQUIRE((fa * fa.inverse()) == FieldElement::one());
  }
  // Edge values near the modulus.
  for (std::uint64_t a : {P - 1, P - 2, std::uint64_t{0xFFFFFFFF}, std::uint64_t{1} << 63})
    for (std::uint64_t b : {P - 1, std::uint64_t{2}, std::uint64_t{0xFFFFFFFF00000000}})
      CHECK(FieldElement(a) * FieldElement(b) == FieldElement(ref_mul(a, b)));
  CHECK_THROWS_AS(FieldElement::zero().inverse(), std::domain_error);
}

TEST_CASE("quantize examples") {
  QuantConfig cfg;
  CHECK(quantize(1.5, cfg) == encode(192));
  CHECK(quantize(-1.0, cfg).value() == P - 128);
  CHECK(quantize(0.011, cfg) == encode(ref_round(0.011 * 128)));
  CHECK(quantize(0.011, cfg) == encode(1));
  CHECK(quantize(-0.5 / 128, cfg) == encode(-1));
  CHECK_THROWS_WITH(quantize(256.0, cfg), "quantization overflow");
  CHECK_THROWS_WITH(quantize(std::nan(""), cfg), "quantization overflow");
}

TEST_CASE("quantize/dequantize error bound") {
  QuantConfig cfg;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dist(-255.0, 255.0);
  for (int i = 0; i < 10000; ++i) {
    const double x = dist(rng);
    REQUIRE(std::fabs(dequantize(quantize(x, cfg), cfg) - x) <= std::ldexp(1.0, -cfg.frac_bits - 1));
  }
}

TEST_CASE("quant config validation and parsing") {
  CHECK_NOTHROW(QuantConfig{7, 16}.validate());
  CHECK_THROWS(QuantConfig{1, 16}.validate());
  CHECK_THROWS(QuantConfig{15, 16}.validate());
  CHECK_THROWS(QuantConfig{7, 21}.validate());
  CHECK(QuantConfig::parse("6,14") == QuantConfig{6, 14});
  CHECK(QuantConfig{6, 14}.to_string() == "6,14");
  CHECK_THROWS(QuantConfig::parse("6;14"));
}

TEST_CASE("lookup table examples") {
  const LookupTable relu(LookupFn::Relu, QuantConfig{2, 4});
  CHECK(relu.size() == 15);
  CHECK(relu.input_at(0) == -7);
  CHECK(relu.output_field(*relu.index_of(-3)) == encode(0));

  const LookupTable exp4(LookupFn::Exp, QuantConfig{4, 16});
  CHECK(exp4.output_field(*exp4.index_of(0)) == encode(16));

  const LookupTable gelu(LookupFn::Gelu, QuantConfig{7, 16});
  const long expect = ref_round(ref_gelu(1.0) * 128);
  CHECK(expect == 108);
  CHECK(gelu.output_field(*gelu.index_of(128)) == encode(expect));
}

TEST_CASE("lookup tables agree with scalar oracles over the full range") {
  const QuantConfig cfg{7, 16};
  const double s = 128.0;
  const long hi = cfg.range_max();
  auto clamp = [&](long v) { return std::max(-hi, std::min(hi, v)); };
  auto clamp_real = [&](double v) { return v >= hi ? hi : (v <= -hi ? -hi : ref_round(v)); };
  for (LookupFn fn : kAllLookupFns) {
    const LookupTable t(fn, cfg);
    REQUIRE(t.size() == 65535);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const long q = t.input_at(i);
      long want = 0;
      switch (fn) {
        case LookupFn::Relu: want = q > 0 ? q : 0; break;
        case LookupFn::Gelu: want = clamp_real(ref_gelu(q / s) * s); break;
        case LookupFn::Exp: want = clamp_real(std::exp(q / s) * s); break;
        case LookupFn::Recip: want = q == 0 ? hi : clamp_real(s / (q / s)); break;
        case LookupFn::Rsqrt: want = q <= 0 ? hi : clamp_real(s / std::sqrt(q / (s * s))); break;
        case LookupFn::RescaleDiv: want = clamp(static_cast<long>(std::floor((q + 64.0) / 128.0))); break;
      }
      REQUIRE(t.output_at(i) == want);
      REQUIRE(t.index_of(q) == i);
    }
    CHECK_FALSE(t.index_of(cfg.range_max() + 1).has_value());
    CHECK_FALSE(t.index_of(cfg.range_min() - 1).has_value());
  }
}

TEST_CASE("rescale division table zero set is the remainder range") {
  const QuantConfig cfg{7, 16};
  const LookupTable t(LookupFn::RescaleDiv, cfg);
  const long h = 64;
  for (long b = -300; b < 300; ++b) {
    const bool zero = t.contains(encode(b - h), encode(0));
    CHECK(zero == (b >= 0 && b < 128));
  }
}

TEST_CASE("saturating lookup clamps inputs") {
  const LookupTable t(LookupFn::Relu, QuantConfig{7, 16});
  CHECK(t.saturating(1'000'000) == 32767);
  CHECK(t.saturating(-1'000'000) == 0);
  CHECK(parse_lookup_fn("gelu") == LookupFn::Gelu);
  CHECK_FALSE(parse_lookup_fn("tanh").has_value());
}
