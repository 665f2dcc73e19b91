#include "core/config.hpp"

#include <fstream>
#include <sstream>

namespace ctalab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_config("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

Config Config::parse_string(const std::string& text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::vector<std::string> stack;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line == "}") {
      if (stack.empty())
        fail_config(origin + ":" + std::to_string(lineno) + ": unmatched '}'");
      stack.pop_back();
      continue;
    }
    if (line.back() == '{') {
      std::string name = trim(line.substr(0, line.size() - 1));
      if (name.empty() || name.find('=') != std::string::npos)
        fail_config(origin + ":" + std::to_string(lineno) + ": malformed block header '" + raw + "'");
      stack.push_back(name);
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail_config(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + raw + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      fail_config(origin + ":" + std::to_string(lineno) + ": empty key");
    std::string dotted;
    for (const auto& s : stack) dotted += s + ".";
    dotted += key;
    cfg.entries_[dotted] = Entry{value, lineno};
  }
  if (!stack.empty())
    fail_config(origin + ": unclosed block '" + stack.back() + "'");
  return cfg;
}

const Config::Entry* Config::find(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void Config::missing(const std::string& key) const {
  fail_config(origin_ + ": missing required key '" + key + "'");
}

bool Config::has(const std::string& key) const { return find(key) != nullptr; }

std::string Config::get_string(const std::string& key, std::optional<std::string> fallback) const {
  const Entry* e = find(key);
  if (!e) {
    if (fallback) return *fallback;
    missing(key);
  }
  return e->value;
}

double Config::get_double(const std::string& key, std::optional<double> fallback) const {
  const Entry* e = find(key);
  if (!e) {
    if (fallback) return *fallback;
    missing(key);
  }
  try {
    size_t used = 0;
    double v = std::stod(e->value, &used);
    if (used != e->value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail_config(origin_ + ":" + std::to_string(e->line) + ": key '" + key + "' is not a number: '" +
                e->value + "'");
  }
}

long Config::get_int(const std::string& key, std::optional<long> fallback) const {
  const Entry* e = find(key);
  if (!e) {
    if (fallback) return *fallback;
    missing(key);
  }
  try {
    size_t used = 0;
    long v = std::stol(e->value, &used);
    if (used != e->value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    fail_config(origin_ + ":" + std::to_string(e->line) + ": key '" + key + "' is not an integer: '" +
                e->value + "'");
  }
}

bool Config::get_bool(const std::string& key, std::optional<bool> fallback) const {
  const Entry* e = find(key);
  if (!e) {
    if (fallback) return *fallback;
    missing(key);
  }
  if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no") return false;
  fail_config(origin_ + ":" + std::to_string(e->line) + ": key '" + key + "' is not a boolean: '" +
              e->value + "'");
}

Expr Config::get_expr(const std::string& key, std::optional<std::string> fallback) const {
  const Entry* e = find(key);
  std::string text;
  int line = 0;
  if (!e) {
    if (!fallback) missing(key);
    text = *fallback;
  } else {
    text = e->value;
    line = e->line;
  }
  try {
    return Expr::parse(text);
  } catch (const Error& err) {
    fail_config(origin_ + ":" + std::to_string(line) + ": key '" + key + "': " + err.what());
  }
}

std::vector<double> Config::get_list(const std::string& key, std::vector<double> fallback) const {
  const Entry* e = find(key);
  if (!e) {
    if (!fallback.empty()) return fallback;
    missing(key);
  }
  const std::string& v = e->value;
  std::vector<double> out;
  try {
    if (v.rfind("dyadic:", 0) == 0) {
      // dyadic:start:count[:factor]
      std::istringstream ss(v.substr(7));
      std::string tok;
      std::vector<std::string> parts;
      while (std::getline(ss, tok, ':')) parts.push_back(tok);
      if (parts.size() < 2) throw std::invalid_argument("dyadic");
      double start = std::stod(parts[0]);
      long count = std::stol(parts[1]);
      double factor = parts.size() > 2 ? std::stod(parts[2]) : 2.0;
      double x = start;
      for (long i = 0; i < count; ++i, x *= factor) out.push_back(x);
    } else if (v.rfind("linspace:", 0) == 0) {
      // linspace:a:b:n
      std::istringstream ss(v.substr(9));
      std::string tok;
      std::vector<std::string> parts;
      while (std::getline(ss, tok, ':')) parts.push_back(tok);
      if (parts.size() != 3) throw std::invalid_argument("linspace");
      double a = std::stod(parts[0]), b = std::stod(parts[1]);
      long n = std::stol(parts[2]);
      if (n < 2) throw std::invalid_argument("linspace count");
      for (long i = 0; i < n; ++i) out.push_back(a + (b - a) * double(i) / double(n - 1));
    } else {
      std::istringstream ss(v);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(std::stod(tok));
      }
    }
  } catch (const std::exception&) {
    fail_config(origin_ + ":" + std::to_string(e->line) + ": key '" + key + "' is not a numeric list: '" +
                v + "'");
  }
  if (out.empty())
    fail_config(origin_ + ":" + std::to_string(e->line) + ": key '" + key + "' produced an empty sweep");
  return out;
}

std::string Config::canonical() const {
  std::ostringstream os;
  for (const auto& [k, e] : entries_) os << k << "=" << e.value << "\n";
  return os.str();
}

}  // namespace ctalab
