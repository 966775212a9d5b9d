#include "zkinfer/hash.hpp"

#include <stdexcept>

// The one-shot SHA256_* interface is deprecated in OpenSSL 3 but avoids the
// EVP dispatch overhead, which dominates for the 25-65 byte inputs hashed here.
#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wdeprecated-declarations"
#include <openssl/sha.h>

namespace zkinfer {

struct Sha256::State {
  SHA256_CTX ctx;
};

Sha256::Sha256() : st_(std::make_unique<State>()) { SHA256_Init(&st_->ctx); }
Sha256::~Sha256() = default;
Sha256::Sha256(const Sha256& o) : st_(std::make_unique<State>(*o.st_)) {}
Sha256& Sha256::operator=(const Sha256& o) {
  if (this != &o) *st_ = *o.st_;
  return *this;
}

Sha256& Sha256::update(const void* data, std::size_t n) {
  SHA256_Update(&st_->ctx, data, n);
  return *this;
}

Sha256& Sha256::update_u64(std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return update(b, 8);
}

Digest Sha256::finish() {
  Digest d;
  SHA256_Final(d.data(), &st_->ctx);
  SHA256_Init(&st_->ctx);
  return d;
}

Digest sha256(const void* data, std::size_t n) {
  Digest d;
  SHA256(static_cast<const unsigned char*>(data), n, d.data());
  return d;
}

Digest hash_node(const Digest& left, const Digest& right) {
  std::uint8_t buf[65];
  buf[0] = static_cast<std::uint8_t>(HashTag::MerkleNode);
  std::copy(left.begin(), left.end(), buf + 1);
  std::copy(right.begin(), right.end(), buf + 33);
  return sha256(buf, sizeof buf);
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 15]);
  }
  return s;
}

std::string to_hex(const Digest& d) { return to_hex(std::span<const std::uint8_t>(d)); }

Digest digest_from_hex(std::string_view hex) {
  if (hex.size() != 64) throw std::invalid_argument("digest hex must be 64 characters");
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw std::invalid_argument("bad hex digit");
  };
  Digest d;
  for (std::size_t i = 0; i < 32; ++i) d[i] = static_cast<std::uint8_t>(nib(hex[2 * i]) << 4 | nib(hex[2 * i + 1]));
  return d;
}

}  // namespace zkinfer

#pragma GCC diagnostic pop
