#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace cmwm {

inline constexpr const char* kToolVersion = "0.1.0";

/// Reproducibility record written next to every CLI run's output.
struct RunManifest {
  std::string command;
  std::string resolved_config_json;  // the exact config the run used
  uint64_t seed = 0;
  std::map<std::string, std::string> checkpoint_hashes;  // path -> fnv64 hex
  std::string tool_version = kToolVersion;
  std::string started_at;
  std::string finished_at;
};

uint64_t fnv1a_bytes(const void* data, size_t len);
uint64_t fnv1a_file(const std::string& path);
std::string hex_u64(uint64_t v);
std::string utc_timestamp();

std::string manifest_to_json(const RunManifest& m);
void write_manifest(const RunManifest& m, const std::string& path);

}  // namespace cmwm
