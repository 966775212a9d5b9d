#pragma once

#include <cstdint>
#include <vector>

#include "zkinfer/hash.hpp"

namespace zkinfer {

/// Binary Merkle tree over a power-of-two number of leaf digests.
///
/// Interior nodes are hash_node(left, right). Short leaf lists are padded with
/// all-zero digests up to the next power of two.
class MerkleTree {
 public:
  MerkleTree() = default;
  explicit MerkleTree(std::vector<Digest> leaves);

  const Digest& root() const { return nodes_[1]; }
  std::size_t leaf_count() const { return width_; }
  int depth() const { return depth_; }

  /// Sibling digests from the leaf level upwards.
  std::vector<Digest> path(std::size_t index) const;

 private:
  // Heap layout: node i has children 2i and 2i+1; leaves at [width_, 2*width_).
  std::vector<Digest> nodes_;
  std::size_t width_ = 0;
  int depth_ = 0;
};

/// Recomputes the root from a leaf and its authentication path.
bool verify_merkle_path(const Digest& leaf, std::uint64_t index, const std::vector<Digest>& path, const Digest& root);

}  // namespace zkinfer
