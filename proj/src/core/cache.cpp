#include "core/cache.hpp"

#include <cstdio>
#include <unistd.h>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace ctalab {

void atomic_write_file(const std::string& path, const std::string& bytes) {
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail_numeric("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail_numeric("short write: " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_invalid("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t a = fnv1a(bytes);
  std::uint64_t b = fnv1a(bytes, 0x9e3779b97f4a7c15ull);
  return to_hex(a) + to_hex(b);
}

namespace {
constexpr char kMagic[8] = {'C', 'T', 'A', 'D', 'N', 'C', '0', '1'};
}

ArtifactCache::ArtifactCache(std::string dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

std::string ArtifactCache::path_for(const std::string& key) const {
  return (fs::path(dir_) / (content_hash(key) + ".bin")).string();
}

void ArtifactCache::store(const std::string& key, const std::vector<std::int64_t>& dims,
                          const std::vector<double>& values) const {
  std::string payload;
  payload.append(kMagic, sizeof(kMagic));
  std::uint32_t version = 1;
  std::uint32_t ndims = static_cast<std::uint32_t>(dims.size());
  payload.append(reinterpret_cast<const char*>(&version), 4);
  payload.append(reinterpret_cast<const char*>(&ndims), 4);
  for (std::int64_t d : dims) payload.append(reinterpret_cast<const char*>(&d), 8);
  std::uint64_t count = values.size();
  payload.append(reinterpret_cast<const char*>(&count), 8);
  payload.append(reinterpret_cast<const char*>(values.data()), values.size() * 8);
  std::string digest = content_hash(payload);
  payload.append(digest);
  atomic_write_file(path_for(key), payload);
}

std::optional<std::vector<double>> ArtifactCache::load(const std::string& key,
                                                       const std::vector<std::int64_t>& dims) const {
  std::string path = path_for(key);
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  std::string payload;
  try {
    payload = read_file(path);
  } catch (const Error&) {
    return std::nullopt;
  }
  if (payload.size() < sizeof(kMagic) + 16 + 32) return std::nullopt;
  std::string digest = payload.substr(payload.size() - 32);
  std::string body = payload.substr(0, payload.size() - 32);
  if (content_hash(body) != digest) return std::nullopt;  // corruption -> miss
  const char* p = body.data();
  if (std::memcmp(p, kMagic, sizeof(kMagic)) != 0) return std::nullopt;
  p += sizeof(kMagic);
  std::uint32_t version, ndims;
  std::memcpy(&version, p, 4);
  p += 4;
  std::memcpy(&ndims, p, 4);
  p += 4;
  if (version != 1 || ndims != dims.size()) return std::nullopt;
  for (std::int64_t expect : dims) {
    std::int64_t d;
    std::memcpy(&d, p, 8);
    p += 8;
    if (d != expect) return std::nullopt;
  }
  std::uint64_t count;
  std::memcpy(&count, p, 8);
  p += 8;
  if (body.size() != static_cast<std::size_t>(p - body.data()) + count * 8) return std::nullopt;
  std::vector<double> out(count);
  std::memcpy(out.data(), p, count * 8);
  return out;
}

void Manifest::add(const std::string& path, const std::string& bytes_written) {
  entries_.push_back({path, content_hash(bytes_written), bytes_written.size()});
}

void Manifest::add_error(const std::string& where, const std::string& message) {
  errors_.emplace_back(where, message);
}

std::string Manifest::to_json(const std::string& config_hash, std::uint64_t seed) const {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["artifacts"] = nlohmann::json::array();
  for (const auto& e : entries_) {
    j["artifacts"].push_back({{"path", e.path}, {"hash", e.hash}, {"bytes", e.bytes}});
  }
  j["errors"] = nlohmann::json::array();
  for (const auto& [where, msg] : errors_) {
    j["errors"].push_back({{"where", where}, {"message", msg}});
  }
  return j.dump(2) + "\n";
}

}  // namespace ctalab
