#include "zkinfer/merkle.hpp"

#include <stdexcept>

namespace zkinfer {

MerkleTree::MerkleTree(std::vector<Digest> leaves) {
  if (leaves.empty()) throw std::invalid_argument("merkle tree needs at least one leaf");
  width_ = 1;
  while (width_ < leaves.size()) {
    width_ <<= 1;
    ++depth_;
  }
  nodes_.assign(2 * width_, Digest{});
  std::copy(leaves.begin(), leaves.end(), nodes_.begin() + static_cast<std::ptrdiff_t>(width_));
  for (std::size_t i = width_; i-- > 1;) nodes_[i] = hash_node(nodes_[2 * i], nodes_[2 * i + 1]);
}

std::vector<Digest> MerkleTree::path(std::size_t index) const {
  if (index >= width_) throw std::out_of_range("merkle leaf index out of range");
  std::vector<Digest> out;
  out.reserve(static_cast<std::size_t>(depth_));
  for (std::size_t i = index + width_; i > 1; i >>= 1) out.push_back(nodes_[i ^ 1]);
  return out;
}

bool verify_merkle_path(const Digest& leaf, std::uint64_t index, const std::vector<Digest>& path, const Digest& root) {
  if (path.size() >= 64 || (index >> path.size()) != 0) return false;
  Digest cur = leaf;
  for (const auto& sib : path) {
    cur = (index & 1) ? hash_node(sib, cur) : hash_node(cur, sib);
    index >>= 1;
  }
  return cur == root;
}

}  // namespace zkinfer
