#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace lsprox::cli {

// Flat key=value configuration, one pair per line, '#' starts a comment.
// Every key must be consumed by the subcommand that reads the file; leftovers
// are reported as unknown keys.
class Config {
 public:
  static Config parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const std::size_t eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                                 ": expected key=value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                                 ": empty key");
      if (cfg.kv_.count(key))
        throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                                 ": duplicate key '" + key + "'");
      cfg.kv_[key] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
  }

  std::string require_string(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::runtime_error("config: missing required key '" + key + "'");
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    consumed_.insert(key);
    return parse_double(key, it->second);
  }

  int get_int(const std::string& key, int fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    consumed_.insert(key);
    return parse_int(key, it->second);
  }

  std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    consumed_.insert(key);
    std::size_t pos = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(it->second, &pos);
    } catch (const std::exception&) {
      throw std::runtime_error("config: key '" + key + "' has non-integer value '" +
                               it->second + "'");
    }
    if (pos != it->second.size())
      throw std::runtime_error("config: key '" + key + "' has trailing characters");
    return v;
  }

  // Allows --seed style overrides before the consumer reads the key.
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  void require_fully_consumed() const {
    std::string unknown;
    for (const auto& [key, value] : kv_)
      if (!consumed_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    if (!unknown.empty())
      throw std::runtime_error("config: unknown key(s): " + unknown);
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }
  static double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &pos);
    } catch (const std::exception&) {
      throw std::runtime_error("config: key '" + key + "' has non-numeric value '" + v + "'");
    }
    if (pos != v.size())
      throw std::runtime_error("config: key '" + key + "' has trailing characters");
    return x;
  }
  static int parse_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    int x = 0;
    try {
      x = std::stoi(v, &pos);
    } catch (const std::exception&) {
      throw std::runtime_error("config: key '" + key + "' has non-integer value '" + v + "'");
    }
    if (pos != v.size())
      throw std::runtime_error("config: key '" + key + "' has trailing characters");
    return x;
  }

  std::map<std::string, std::string> kv_;
  std::set<std::string> consumed_;
};

}  // namespace lsprox::cli
