#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "splice/tensor.hpp"

namespace splice {

/// Named-tensor container; the on-disk format behind extractor weights,
/// generator checkpoints and descriptor indices. Binary layout:
///   "SPTA" | u32 version | u64 count |
///   per tensor: u32 name_len | name | u32 rank | u64 dims[rank] | f32 data[]
class TensorArchive {
 public:
  void put(const std::string& name, Tensor t) { items_[name] = std::move(t); }
  bool has(const std::string& name) const { return items_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  void merge(const TensorArchive& o) {
    for (const auto& [k, v] : o.items()) items_[k] = v;
  }
  size_t size() const { return items_.size(); }
  const std::map<std::string, Tensor>& items() const { return items_; }

  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

 private:
  std::map<std::string, Tensor> items_;
};

/// FNV-1a over the raw float bytes, in name order.
std::uint64_t archive_checksum(const TensorArchive& a);
std::uint64_t bytes_checksum(const void* data, size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace splice
