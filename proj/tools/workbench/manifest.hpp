#pragma once

// Record of one command invocation: what ran, with which configuration, and
// checksums of every file it produced. Timestamps are the only fields that
// differ between identical reruns.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cardiopinn::workbench {

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

struct ProducedFile {
  std::string path;  // relative to the output directory
  std::uintmax_t bytes = 0;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  std::string config_name;
  std::string config_hash;
  std::string tool_version;
  std::uint64_t seed = 0;
  bool deterministic = false;
  int threads = 1;
  std::string started;   // UTC, ISO 8601
  std::string finished;
  std::vector<ProducedFile> files;

  // Checksums `path` (which must lie under `root`) and records it.
  void add(const std::filesystem::path& root, const std::filesystem::path& path);
  std::string to_json() const;
  // Written atomically to <root>/manifest_<command>.json.
  std::filesystem::path write(const std::filesystem::path& root) const;
};

std::string utc_now();

}  // namespace cardiopinn::workbench
