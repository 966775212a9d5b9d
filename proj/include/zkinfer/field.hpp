#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>

namespace zkinfer {

/// Element of the prime field with p = 2^64 - 2^32 + 1.
///
/// Signed integers are embedded by `encode`: non-negative values map to
/// themselves and negative values to p - |v|. `decode` inverts this for
/// representatives in the lower/upper half of the field.
class FieldElement {
 public:
  static constexpr std::uint64_t kModulus = 0xFFFFFFFF00000001ULL;
  static constexpr std::uint64_t kHalf = kModulus / 2;

  constexpr FieldElement() = default;
  /// Reduces `v` modulo p.
  constexpr explicit FieldElement(std::uint64_t v) : v_(v >= kModulus ? v - kModulus : v) {}

  static constexpr FieldElement zero() { return FieldElement(); }
  static constexpr FieldElement one() { return FieldElement(1); }

  constexpr std::uint64_t value() const { return v_; }

  constexpr FieldElement& operator+=(FieldElement o) {
    // v_ + o.v_ can exceed 2^64; handle the carry explicitly.
    std::uint64_t s = v_ + o.v_;
    bool carry = s < v_;
    if (carry || s >= kModulus) s -= kModulus;
    v_ = s;
    return *this;
  }
  constexpr FieldElement& operator-=(FieldElement o) {
    v_ = v_ >= o.v_ ? v_ - o.v_ : v_ + (kModulus - o.v_);
    return *this;
  }
  constexpr FieldElement& operator*=(FieldElement o) {
    v_ = reduce128(static_cast<unsigned __int128>(v_) * o.v_);
    return *this;
  }

  friend constexpr FieldElement operator+(FieldElement a, FieldElement b) { return a += b; }
  friend constexpr FieldElement operator-(FieldElement a, FieldElement b) { return a -= b; }
  friend constexpr FieldElement operator*(FieldElement a, FieldElement b) { return a *= b; }
  constexpr FieldElement operator-() const { return FieldElement() - *this; }

  friend constexpr bool operator==(FieldElement a, FieldElement b) { return a.v_ == b.v_; }
  friend constexpr bool operator!=(FieldElement a, FieldElement b) { return a.v_ != b.v_; }

  constexpr FieldElement pow(std::uint64_t e) const {
    FieldElement base = *this, acc = one();
    while (e) {
      if (e & 1) acc *= base;
      base *= base;
      e >>= 1;
    }
    return acc;
  }

  /// Multiplicative inverse; throws for zero.
  FieldElement inverse() const {
    if (v_ == 0) throw std::domain_error("inverse of zero");
    return pow(kModulus - 2);
  }

 private:
  // Reduction for p = 2^64 - 2^32 + 1 using 2^64 = 2^32 - 1 and 2^96 = -1 (mod p).
  static constexpr std::uint64_t reduce128(unsigned __int128 x) {
    const std::uint64_t lo = static_cast<std::uint64_t>(x);
    const std::uint64_t hi = static_cast<std::uint64_t>(x >> 64);
    const std::uint64_t hi_hi = hi >> 32;
    const std::uint64_t hi_lo = hi & 0xFFFFFFFFULL;

    std::uint64_t t0 = lo - hi_hi;
    if (lo < hi_hi) t0 -= 0xFFFFFFFFULL;  // borrow: add p back, i.e. subtract 2^32 - 1
    const std::uint64_t t1 = hi_lo * 0xFFFFFFFFULL;
    std::uint64_t r = t0 + t1;
    if (r < t0) r += 0xFFFFFFFFULL;  // carry: 2^64 = 2^32 - 1
    if (r >= kModulus) r -= kModulus;
    return r;
  }

  std::uint64_t v_ = 0;
};

inline std::ostream& operator<<(std::ostream& os, FieldElement f) { return os << f.value(); }

/// Embeds a signed integer; throws when |v| >= p/2.
FieldElement encode(std::int64_t v);

/// Signed representative in (-p/2, p/2].
std::int64_t decode(FieldElement f);

}  // namespace zkinfer
