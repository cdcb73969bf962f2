#pragma once

// Run manifests: which subcommand ran, with what resolved config and seed,
// what it read and wrote, and a content hash per output so reruns can be
// verified. Timestamps honor SOURCE_DATE_EPOCH when set, so reproducible
// pipelines produce reproducible manifests.

#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adpo/errors.hpp"
#include "adpo/rng.hpp"

namespace adpo {

inline std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("manifest: cannot open '" + path + "' for hashing");
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

inline std::time_t manifest_now() {
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    long long v = std::strtoll(env, &end, 10);
    if (end && *end == '\0') return static_cast<std::time_t>(v);
  }
  return std::time(nullptr);
}

inline std::string iso8601_utc(std::time_t t) {
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string subcommand;
  nlohmann::json resolved_config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::string started_at, finished_at;

  void start() { started_at = iso8601_utc(manifest_now()); }

  void finish_and_write(const std::string& path) {
    finished_at = iso8601_utc(manifest_now());
    nlohmann::json out_files = nlohmann::json::array();
    for (const std::string& p : outputs)
      out_files.push_back({{"path", p}, {"fnv1a64", hex64(fnv1a64_file(p))}});
    nlohmann::json j{{"subcommand", subcommand}, {"config", resolved_config},
                     {"inputs", inputs},         {"outputs", out_files},
                     {"seed", seed},             {"started_at", started_at},
                     {"finished_at", finished_at}};
    std::ofstream out(path);
    if (!out) throw ParseError("manifest: cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
  }
};

// Re-hash every output listed in a manifest file; true iff all match.
inline bool verify_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("manifest: cannot open '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in);
  for (const auto& f : j.at("outputs")) {
    std::string file = f.at("path").get<std::string>();
    if (hex64(fnv1a64_file(file)) != f.at("fnv1a64").get<std::string>()) return false;
  }
  return true;
}

}  // namespace adpo
