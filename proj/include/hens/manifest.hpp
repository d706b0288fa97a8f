#pragma once

// Run manifests: what was run, with which seed and inputs, and the SHA-256
// of every file read or written.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hens::manifest {

/// Lower-case hex SHA-256 of a file's bytes. Throws DataError if unreadable.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_text(const std::string& text);

struct RunManifest {
  std::vector<std::string> command_line;
  std::string config_hash;
  std::optional<std::uint64_t> seed;
  int format_version = 1;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  double wall_time_seconds = 0.0;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
  void write(const std::filesystem::path& path) const;
  static RunManifest read(const std::filesystem::path& path);
};

struct ChecksumResult {
  std::string path;
  std::string expected;
  std::string actual;
  bool match = false;
};

/// Checks each file against the checksum recorded for it (inputs or
/// outputs). A file the manifest does not list, or that cannot be read,
/// is a DataError.
std::vector<ChecksumResult> verify_checksums(const RunManifest& manifest,
                                             const std::vector<std::string>& files);

}  // namespace hens::manifest
