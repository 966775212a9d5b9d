#pragma once

#include <cstdint>
#include <string>

#include "zkinfer/field.hpp"

namespace zkinfer {

/// Fixed-point and lookup-range parameters shared by a whole circuit.
///
/// Reals are carried as integers at scale 2^frac_bits. Lookup tables cover the
/// signed integers in [-(2^(lookup_bits-1) - 1), 2^(lookup_bits-1) - 1].
struct QuantConfig {
  int frac_bits = 7;
  int lookup_bits = 16;

  /// Throws std::invalid_argument unless 2 <= f <= B-2 and B <= 20.
  void validate() const;

  std::int64_t range_max() const { return (std::int64_t{1} << (lookup_bits - 1)) - 1; }
  std::int64_t range_min() const { return -range_max(); }
  /// Smallest value covered by the lookup tables; stands in for -inf in masks.
  std::int64_t mask_value() const { return range_min(); }
  std::int64_t scale() const { return std::int64_t{1} << frac_bits; }
  bool in_range(std::int64_t v) const { return v >= range_min() && v <= range_max(); }

  /// "f,B", the form accepted by `parse`.
  std::string to_string() const;
  static QuantConfig parse(const std::string& text);

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

/// Round to nearest, ties away from zero.
std::int64_t round_half_away(double x);

/// floor(a / 2^bits) for signed a.
std::int64_t floor_shift(std::int64_t a, int bits);

/// Divide by 2^f rounding half up: floor((q + 2^(f-1)) / 2^f).
std::int64_t rescale_round(std::int64_t q, int frac_bits);

/// encode(round(x * 2^f)); throws "quantization overflow" outside the lookup range.
FieldElement quantize(double x, const QuantConfig& cfg);

/// round(x * 2^(f*scale_units)) without range restriction (weights, biases).
std::int64_t to_fixed(double x, const QuantConfig& cfg, int scale_units = 1);

double dequantize(FieldElement q, const QuantConfig& cfg, int scale_units = 1);
double from_fixed(std::int64_t q, const QuantConfig& cfg, int scale_units = 1);

}  // namespace zkinfer
