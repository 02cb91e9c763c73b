#pragma once

#include <chrono>
#include <map>
#include <string>
#include <vector>

#include "splice/config.hpp"

namespace splice {

std::uint64_t file_checksum(const std::string& path);  // IoError if unreadable

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

/// Written once per CLI command: everything needed to re-run the invocation.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;  // effective merged settings
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::uint64_t> input_hashes;  // path -> content hash
  std::vector<std::string> outputs;
  std::map<std::string, double> timings_sec;

  void set_config(const Config& c) { config = c.entries(); }
  void add_input(const std::string& path) {
    input_hashes[path] = file_checksum(path);
  }
  void write(const std::string& path) const;
};

}  // namespace splice
