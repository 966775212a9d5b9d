#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "zkinfer/field.hpp"
#include "zkinfer/quant.hpp"

namespace zkinfer {

enum class LookupFn : std::uint8_t { Relu = 0, Gelu, Exp, Recip, Rsqrt, RescaleDiv };

inline constexpr std::array<LookupFn, 6> kAllLookupFns = {LookupFn::Relu,  LookupFn::Gelu,  LookupFn::Exp,
                                                          LookupFn::Recip, LookupFn::Rsqrt, LookupFn::RescaleDiv};

std::string_view lookup_fn_name(LookupFn fn);
/// Accepts the lowercase names returned by lookup_fn_name ("relu", "gelu", ...).
std::optional<LookupFn> parse_lookup_fn(std::string_view name);

/// Output of the table function for one in-range integer input.
///
/// Inputs and outputs are fixed-point at scale 2^f with two exceptions:
/// Rsqrt reads a variance carried at scale 2^(2f), and RescaleDiv is the
/// integer map q -> floor((q + 2^(f-1)) / 2^f). Outputs are clamped to the
/// table range; Recip(0) and Rsqrt(q <= 0) give the range maximum.
std::int64_t lookup_output(LookupFn fn, std::int64_t q, const QuantConfig& cfg);

/// Complete table over every integer of the lookup range.
class LookupTable {
 public:
  LookupTable(LookupFn fn, const QuantConfig& cfg);

  LookupFn function() const { return fn_; }
  const QuantConfig& config() const { return cfg_; }

  /// Always 2^B - 1.
  std::size_t size() const { return outputs_.size(); }
  std::int64_t input_at(std::size_t i) const { return static_cast<std::int64_t>(i) + cfg_.range_min(); }
  std::int64_t output_at(std::size_t i) const { return outputs_[i]; }
  FieldElement input_field(std::size_t i) const { return encode(input_at(i)); }
  FieldElement output_field(std::size_t i) const { return encode(outputs_[i]); }

  std::optional<std::size_t> index_of(std::int64_t input) const;
  std::optional<std::size_t> index_of(FieldElement input) const { return index_of(decode(input)); }

  /// True iff (input, output) is a row of the table.
  bool contains(FieldElement input, FieldElement output) const;

  /// Table output with out-of-range inputs saturated to the range endpoints.
  std::int64_t saturating(std::int64_t input) const;

 private:
  LookupFn fn_;
  QuantConfig cfg_;
  std::vector<std::int64_t> outputs_;
};

LookupTable build_lookup(LookupFn fn, const QuantConfig& cfg);

/// Process-wide table cache; entries live for the lifetime of the program.
const LookupTable& cached_lookup(LookupFn fn, const QuantConfig& cfg);

}  // namespace zkinfer
