#include "splice/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "splice/errors.hpp"
#include "splice/serialize.hpp"

namespace splice {

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read input for hashing: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    h = bytes_checksum(buf, static_cast<size_t>(f.gcount()), h);
  }
  return h;
}

void RunManifest::write(const std::string& path) const {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config;
  j["seeds"] = seeds;
  j["input_hashes"] = input_hashes;
  j["outputs"] = outputs;
  j["timings_sec"] = timings_sec;
  std::ofstream f(path);
  if (!f) throw IoError("cannot write manifest: " + path);
  f << j.dump(2) << '\n';
}

}  // namespace splice
