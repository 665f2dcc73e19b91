#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace ctalab {

/// Writes bytes to a temp file in the target directory, then renames.
void atomic_write_file(const std::string& path, const std::string& bytes);

std::string read_file(const std::string& path);

/// 128-bit content hash (two seeded FNV-1a passes), hex.
std::string content_hash(const std::string& bytes);

/// Content-addressed store of double-valued grid payloads with a
/// self-checking header; a corrupted or mismatched entry reads as a miss.
class ArtifactCache {
 public:
  explicit ArtifactCache(std::string dir);

  /// Key is any canonical description string; hashed internally.
  void store(const std::string& key, const std::vector<std::int64_t>& dims,
             const std::vector<double>& values) const;
  std::optional<std::vector<double>> load(const std::string& key,
                                          const std::vector<std::int64_t>& dims) const;
  std::string path_for(const std::string& key) const;

 private:
  std::string dir_;
};

struct ManifestEntry {
  std::string path;
  std::string hash;
  std::uint64_t bytes = 0;
};

/// Run manifest: artifact list with content hashes plus partial-failure
/// records; serialized as JSON.
class Manifest {
 public:
  void add(const std::string& path, const std::string& bytes_written);
  void add_error(const std::string& where, const std::string& message);
  bool has_errors() const { return !errors_.empty(); }
  std::string to_json(const std::string& config_hash, std::uint64_t seed) const;

 private:
  std::vector<ManifestEntry> entries_;
  std::vector<std::pair<std::string, std::string>> errors_;
};

}  // namespace ctalab
