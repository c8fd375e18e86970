#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace desksplat {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat "key = value" configuration with '#' comments. Keys are tracked as they are read so that
/// callers can reject typos.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>");
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Keys present in the file that no getter has asked for.
  std::set<std::string> unused_keys() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Canonical "key=value" lines in key order.
  std::string canonical() const;
  /// FNV-1a 64 of canonical().
  uint64_t hash() const;

 private:
  const std::string* find(const std::string& key) const;

  std::map<std::string, std::string> values_;
  std::string origin_;
  mutable std::set<std::string> used_;
};

uint64_t fnv1a64(const std::string& bytes);
std::string hex64(uint64_t v);

}  // namespace desksplat
