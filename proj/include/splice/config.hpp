#pragma once

#include <map>
#include <string>

#include "splice/tensor.hpp"

namespace splice {

/// Flat key=value configuration ('#' starts a comment, blank lines ignored).
/// CLI flags call set() after from_file(), so flags win over file values.
class Config {
 public:
  Config() = default;
  static Config from_file(const std::string& path);

  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const;
  Scalar get_number(const std::string& key, Scalar fallback) const;
  Index get_int(const std::string& key, Index fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace splice
