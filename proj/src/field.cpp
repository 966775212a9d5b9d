#include "zkinfer/field.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <tuple>

#include "zkinfer/lookup.hpp"
#include "zkinfer/quant.hpp"

namespace zkinfer {

FieldElement encode(std::int64_t v) {
  if (v >= 0) {
    if (static_cast<std::uint64_t>(v) >= FieldElement::kHalf) throw std::out_of_range("value outside field half-range");
    return FieldElement(static_cast<std::uint64_t>(v));
  }
  // -v overflows for INT64_MIN; the magnitude check below rejects it anyway.
  const std::uint64_t mag = static_cast<std::uint64_t>(-(v + 1)) + 1;
  if (mag >= FieldElement::kHalf) throw std::out_of_range("value outside field half-range");
  return FieldElement(FieldElement::kModulus - mag);
}

std::int64_t decode(FieldElement f) {
  const std::uint64_t v = f.value();
  if (v <= FieldElement::kHalf) return static_cast<std::int64_t>(v);
  return -static_cast<std::int64_t>(FieldElement::kModulus - v);
}

// ---------------------------------------------------------------------------
// QuantConfig

void QuantConfig::validate() const {
  if (lookup_bits > 20) throw std::invalid_argument("lookup_bits must be <= 20");
  if (frac_bits < 2 || frac_bits > lookup_bits - 2)
    throw std::invalid_argument("frac_bits must satisfy 2 <= f <= B-2");
}

std::string QuantConfig::to_string() const { return std::to_string(frac_bits) + "," + std::to_string(lookup_bits); }

QuantConfig QuantConfig::parse(const std::string& text) {
  QuantConfig cfg;
  char comma = 0;
  std::istringstream in(text);
  if (!(in >> cfg.frac_bits >> comma >> cfg.lookup_bits) || comma != ',')
    throw std::invalid_argument("quant config must look like f,B: " + text);
  cfg.validate();
  return cfg;
}

std::int64_t round_half_away(double x) { return static_cast<std::int64_t>(std::round(x)); }

std::int64_t floor_shift(std::int64_t a, int bits) {
  // Arithmetic right shift floors for two's complement.
  return a >> bits;
}

std::int64_t rescale_round(std::int64_t q, int frac_bits) {
  return floor_shift(q + (std::int64_t{1} << (frac_bits - 1)), frac_bits);
}

FieldElement quantize(double x, const QuantConfig& cfg) {
  const double scaled = x * static_cast<double>(cfg.scale());
  if (!std::isfinite(scaled) || std::fabs(scaled) >= static_cast<double>(cfg.range_max() + 1))
    throw std::out_of_range("quantization overflow");
  const std::int64_t q = round_half_away(scaled);
  if (!cfg.in_range(q)) throw std::out_of_range("quantization overflow");
  return encode(q);
}

std::int64_t to_fixed(double x, const QuantConfig& cfg, int scale_units) {
  const double scaled = std::ldexp(x, cfg.frac_bits * scale_units);
  if (!std::isfinite(scaled) || std::fabs(scaled) >= 0x1p62) throw std::out_of_range("quantization overflow");
  return round_half_away(scaled);
}

double from_fixed(std::int64_t q, const QuantConfig& cfg, int scale_units) {
  return std::ldexp(static_cast<double>(q), -cfg.frac_bits * scale_units);
}

double dequantize(FieldElement q, const QuantConfig& cfg, int scale_units) {
  return from_fixed(decode(q), cfg, scale_units);
}

// ---------------------------------------------------------------------------
// Lookup tables

std::string_view lookup_fn_name(LookupFn fn) {
  switch (fn) {
    case LookupFn::Relu: return "relu";
    case LookupFn::Gelu: return "gelu";
    case LookupFn::Exp: return "exp";
    case LookupFn::Recip: return "recip";
    case LookupFn::Rsqrt: return "rsqrt";
    case LookupFn::RescaleDiv: return "rescalediv";
  }
  return "?";
}

std::optional<LookupFn> parse_lookup_fn(std::string_view name) {
  for (LookupFn fn : kAllLookupFns)
    if (lookup_fn_name(fn) == name) return fn;
  return std::nullopt;
}

std::int64_t lookup_output(LookupFn fn, std::int64_t q, const QuantConfig& cfg) {
  const double s = static_cast<double>(cfg.scale());
  const double x = static_cast<double>(q) / s;
  const std::int64_t hi = cfg.range_max();
  auto clamp_round = [&](double real) -> std::int64_t {
    const double scaled = real * s;
    if (!(scaled < static_cast<double>(hi))) return hi;
    if (!(scaled > static_cast<double>(-hi))) return -hi;
    return round_half_away(scaled);
  };
  switch (fn) {
    case LookupFn::Relu:
      return q > 0 ? q : 0;
    case LookupFn::Gelu:
      return clamp_round(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))));
    case LookupFn::Exp:
      return clamp_round(std::exp(x));
    case LookupFn::Recip:
      if (q == 0) return hi;
      return clamp_round(1.0 / x);
    case LookupFn::Rsqrt: {
      if (q <= 0) return hi;
      const double variance = static_cast<double>(q) / (s * s);
      return clamp_round(1.0 / std::sqrt(variance));
    }
    case LookupFn::RescaleDiv: {
      const std::int64_t r = rescale_round(q, cfg.frac_bits);
      return r > hi ? hi : (r < -hi ? -hi : r);
    }
  }
  return 0;
}

LookupTable::LookupTable(LookupFn fn, const QuantConfig& cfg) : fn_(fn), cfg_(cfg) {
  cfg_.validate();
  const std::size_t n = (std::size_t{1} << cfg.lookup_bits) - 1;
  outputs_.resize(n);
  for (std::size_t i = 0; i < n; ++i) outputs_[i] = lookup_output(fn, input_at(i), cfg);
}

std::optional<std::size_t> LookupTable::index_of(std::int64_t input) const {
  if (!cfg_.in_range(input)) return std::nullopt;
  return static_cast<std::size_t>(input - cfg_.range_min());
}

bool LookupTable::contains(FieldElement input, FieldElement output) const {
  const auto idx = index_of(input);
  return idx && encode(outputs_[*idx]) == output;
}

std::int64_t LookupTable::saturating(std::int64_t input) const {
  if (input > cfg_.range_max()) input = cfg_.range_max();
  if (input < cfg_.range_min()) input = cfg_.range_min();
  return outputs_[*index_of(input)];
}

LookupTable build_lookup(LookupFn fn, const QuantConfig& cfg) { return LookupTable(fn, cfg); }

const LookupTable& cached_lookup(LookupFn fn, const QuantConfig& cfg) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, int>, std::unique_ptr<LookupTable>> cache;
  const auto key = std::make_tuple(static_cast<int>(fn), cfg.frac_bits, cfg.lookup_bits);
  std::lock_guard lock(mu);
  auto& slot = cache[key];
  if (!slot) slot = std::make_unique<LookupTable>(fn, cfg);
  return *slot;
}

}  // namespace zkinfer
