#include "zkinfer/weights.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "zkinfer/bytes.hpp"

namespace zkinfer {

std::string shape_to_string(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out.empty() ? "scalar" : out;
}

void WeightStore::set(const std::string& name, Tensor<float> t) {
  if (name.empty()) throw std::invalid_argument("weight name must not be empty");
  tensors_[name] = std::move(t);
}

const Tensor<float>& WeightStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("missing weight tensor: " + name);
  return it->second;
}

std::int64_t WeightStore::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : tensors_) n += static_cast<std::int64_t>(t.size());
  return n;
}

std::vector<std::uint8_t> WeightStore::serialize() const {
  ByteWriter w;
  w.bytes("ZKWT", 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {  // std::map iterates in lexicographic order
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data) w.f32(v);
  }
  return w.take();
}

WeightStore WeightStore::deserialize(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "ZKWT") throw DecodeError("not a weights file (bad magic)");
  if (r.u32() != kVersion) throw DecodeError("unsupported weights file version");
  const std::uint32_t count = r.u32();
  WeightStore store;
  std::string prev;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(4096);
    if (i > 0 && name <= prev) throw DecodeError("weights file tensors not in canonical order");
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw DecodeError("tensor rank too large");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::int64_t n = num_elements(shape);
    if (n < 0 || static_cast<std::uint64_t>(n) * 4 > r.remaining()) throw DecodeError("tensor data truncated");
    std::vector<float> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = r.f32();
    store.tensors_.emplace(name, Tensor<float>(std::move(shape), std::move(data)));
    prev = std::move(name);
  }
  if (!r.done()) throw DecodeError("trailing bytes in weights file");
  return store;
}

void WeightStore::save(const std::string& path) const { write_file_bytes(path, serialize()); }
WeightStore WeightStore::load(const std::string& path) { return deserialize(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string read_file_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace zkinfer
