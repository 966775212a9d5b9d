#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace zkinfer {

using Digest = std::array<std::uint8_t, 32>;

/// Domain-separation tags for every SHA-256 use in the system.
enum class HashTag : std::uint8_t {
  MerkleLeaf = 0x00,
  MerkleNode = 0x01,
  TableLeaf = 0x02,
  FixedLeaf = 0x03,
  Transcript = 0x10,
  Challenge = 0x11,
  ModelCommitment = 0x20,
  Geometry = 0x21,
};

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&);
  Sha256& operator=(const Sha256&);

  Sha256& update(const void* data, std::size_t n);
  Sha256& update(std::span<const std::uint8_t> s) { return update(s.data(), s.size()); }
  Sha256& update(std::string_view s) { return update(s.data(), s.size()); }
  Sha256& update_u8(std::uint8_t v) { return update(&v, 1); }
  Sha256& update_u64(std::uint64_t v);
  Sha256& update(const Digest& d) { return update(d.data(), d.size()); }
  Digest finish();

 private:
  struct State;
  std::unique_ptr<State> st_;
};

Digest sha256(const void* data, std::size_t n);
/// H(tag || left || right) for Merkle interior nodes.
Digest hash_node(const Digest& left, const Digest& right);

std::string to_hex(const Digest& d);
std::string to_hex(std::span<const std::uint8_t> bytes);
Digest digest_from_hex(std::string_view hex);

}  // namespace zkinfer
