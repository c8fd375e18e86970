#include "desksplat/config.hpp"
#include "desksplat/schedule.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace desksplat {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& text, const std::string& what) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || errno != 0 || end != text.c_str() + text.size()) throw ConfigError(what + ": '" + text + "' is not a number");
  return v;
}

}  // namespace

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.values_.count(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

const std::string* KeyValueConfig::find(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const auto* v = find(key);
  return v ? *v : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto* v = find(key);
  return v ? to_double(*v, origin_ + ": " + key) : fallback;
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) throw ConfigError(origin_ + ": " + key + ": '" + *v + "' is not an integer");
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError(origin_ + ": " + key + ": '" + *v + "' is not a boolean");
}

std::set<std::string> KeyValueConfig::unused_keys() const {
  std::set<std::string> out;
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) out.insert(k);
  return out;
}

std::string KeyValueConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

uint64_t KeyValueConfig::hash() const { return fnv1a64(canonical()); }

Schedule Schedule::parse(const std::string& text) {
  std::istringstream in(text);
  std::string head;
  in >> head;
  if (head != "linear" && head != "step") {
    const double v = to_double(trim(text), "schedule");
    if (!(v >= 0)) throw ConfigError("schedule weights must be non-negative");
    return Schedule(v);
  }
  std::vector<std::pair<int, double>> knots;
  std::string tok;
  while (in >> tok) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos) throw ConfigError("schedule knot '" + tok + "' is not iter:value");
    const double it = to_double(tok.substr(0, colon), "schedule knot");
    if (it != static_cast<int>(it)) throw ConfigError("schedule knot iteration must be an integer");
    knots.emplace_back(static_cast<int>(it), to_double(tok.substr(colon + 1), "schedule knot"));
  }
  if (knots.empty()) throw ConfigError("schedule '" + text + "' has no knots");
  try {
    return Schedule(head == "linear" ? Kind::Linear : Kind::Step, std::move(knots));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("schedule '") + text + "': " + e.what());
  }
}

std::string Schedule::to_string() const {
  std::ostringstream out;
  out.precision(17);
  if (knots_.size() == 1 && knots_.front().first == 0) {
    out << knots_.front().second;
    return out.str();
  }
  out << (kind_ == Kind::Linear ? "linear" : "step");
  for (const auto& [i, v] : knots_) out << ' ' << i << ':' << v;
  return out.str();
}

}  // namespace desksplat
