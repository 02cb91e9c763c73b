#include "splice/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace splice {

namespace {
constexpr char kMagic[4] = {'S', 'P', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("tensor archive: truncated file");
  return v;
}
}  // namespace

const Tensor& TensorArchive::get(const std::string& name) const {
  auto it = items_.find(name);
  if (it == items_.end())
    throw std::runtime_error("tensor archive: missing tensor '" + name + "'");
  return it->second;
}

Tensor& TensorArchive::get(const std::string& name) {
  return const_cast<Tensor&>(
      static_cast<const TensorArchive*>(this)->get(name));
}

void TensorArchive::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint64_t>(items_.size()));
  for (const auto& [name, t] : items_) {
    write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<std::uint32_t>(t.rank()));
    for (Index i = 0; i < t.rank(); ++i)
      write_pod(os, static_cast<std::uint64_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path + ": not a tensor archive");
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported archive version " +
                             std::to_string(version));
  const auto count = read_pod<std::uint64_t>(is);
  TensorArchive a;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = read_pod<std::uint32_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    const auto rank = read_pod<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(read_pod<std::uint64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
    if (!is)
      throw std::runtime_error(path + ": truncated data for tensor '" + name +
                               "'");
    a.put(name, std::move(t));
  }
  return a;
}

std::uint64_t bytes_checksum(const void* data, size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t archive_checksum(const TensorArchive& a) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : a.items()) {
    h = bytes_checksum(name.data(), name.size(), h);
    h = bytes_checksum(t.data(), t.size() * sizeof(Scalar), h);
  }
  return h;
}

}  // namespace splice
