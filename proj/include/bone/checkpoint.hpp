#pragma once

// Single-file checkpoint format: 8-byte magic, u64 little-endian manifest
// length, JSON manifest, then a contiguous little-endian element blob. The
// manifest lists {name, shape, dtype, byte_offset, byte_length} per tensor
// plus free-form run metadata, which round-trips untouched. Writes are
// write-then-rename so a path never holds a partial file.

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "bone/tensor.hpp"

namespace bone {

struct TensorRecord {
  std::string name;
  Shape shape;
  std::string dtype;  // "f32" | "f64"
  std::vector<std::uint8_t> bytes;
};

struct Checkpoint {
  std::vector<TensorRecord> tensors;
  nlohmann::json metadata;  // object; unknown keys preserved
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
TensorRecord to_record(std::string name, const Tensor<T>& t) {
  TensorRecord rec;
  rec.name = std::move(name);
  rec.shape = t.shape();
  rec.dtype = dtype_traits<T>::name;
  rec.bytes.resize(t.numel() * sizeof(T));
  std::memcpy(rec.bytes.data(), t.data().data(), rec.bytes.size());
  return rec;
}

template <typename T>
Tensor<T> from_record(const TensorRecord& rec, bool requires_grad = false) {
  if (rec.dtype != dtype_traits<T>::name) {
    throw std::invalid_argument("tensor '" + rec.name + "' has dtype " + rec.dtype +
                                ", expected " + dtype_traits<T>::name);
  }
  std::vector<T> buf(rec.bytes.size() / sizeof(T));
  std::memcpy(buf.data(), rec.bytes.data(), rec.bytes.size());
  return Tensor<T>(rec.shape, std::move(buf), requires_grad);
}

// CSV loss log: header "step,loss", one row per step, 9 significant digits.
void write_loss_log(const std::string& path,
                    const std::vector<std::pair<std::size_t, double>>& entries);
std::vector<std::pair<std::size_t, double>> read_loss_log(const std::string& path);

}  // namespace bone
