#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/expr.hpp"

namespace ctalab {

/// Nested key/value experiment configuration.
///
/// Format: `key = value` entries and `name { ... }` blocks, `#` comments.
/// Values stay as strings; typed accessors parse on demand and report the
/// defining line on error.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& dotted_key) const;
  std::string get_string(const std::string& key, std::optional<std::string> fallback = {}) const;
  double get_double(const std::string& key, std::optional<double> fallback = {}) const;
  long get_int(const std::string& key, std::optional<long> fallback = {}) const;
  bool get_bool(const std::string& key, std::optional<bool> fallback = {}) const;
  Expr get_expr(const std::string& key, std::optional<std::string> fallback = {}) const;
  /// Comma-separated list of numbers; also accepts "a,b,..." or "dyadic:start:count:factor".
  std::vector<double> get_list(const std::string& key, std::vector<double> fallback = {}) const;

  /// Canonical text (sorted dotted keys), the content hashed for caching.
  std::string canonical() const;
  const std::string& origin() const { return origin_; }

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::map<std::string, Entry> entries_;
  std::string origin_;

  const Entry* find(const std::string& key) const;
  [[noreturn]] void missing(const std::string& key) const;
};

}  // namespace ctalab
