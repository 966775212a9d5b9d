#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "zkinfer/tensor.hpp"

namespace zkinfer {

/// Named real-valued tensors, canonically ordered by name.
///
/// File layout (all integers little-endian):
///   magic "ZKWT" | u32 version (=1) | u32 tensor count
///   per tensor, sorted by name:
///     u32 name length | name bytes | u32 rank | u32 dims[rank] | f32 data (row-major)
class WeightStore {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void set(const std::string& name, Tensor<float> t);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  /// Throws std::out_of_range("missing weight tensor: <name>").
  const Tensor<float>& at(const std::string& name) const;

  const std::map<std::string, Tensor<float>>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  std::int64_t parameter_count() const;

  std::vector<std::uint8_t> serialize() const;
  static WeightStore deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::string& path) const;
  static WeightStore load(const std::string& path);

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  std::map<std::string, Tensor<float>> tensors_;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::string read_file_text(const std::string& path);
void write_file_text(const std::string& path, const std::string& text);

}  // namespace zkinfer
