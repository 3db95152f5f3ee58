#include "stnet/core/kv.hpp"

#include "stnet/core/errors.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace stnet {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvFile KvFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingDependencyError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

KvFile KvFile::parse_string(const std::string& text, const std::string& origin) {
  KvFile kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string s = trim(line);
    if (s.empty()) continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.entries_.count(key)) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    kv.entries_.emplace(key, Entry{value, lineno, false});
  }
  return kv;
}

const KvFile::Entry& KvFile::fetch(const std::string& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  it->second.used = true;
  return it->second;
}

void KvFile::fail(const std::string& key, const std::string& what) const {
  const Entry& e = entries_.at(key);
  throw ConfigError(origin_ + ":" + std::to_string(e.line) + ": key '" + key + "': " + what);
}

std::string KvFile::get_string(const std::string& key) { return fetch(key).value; }

std::string KvFile::get_string(const std::string& key, const std::string& fallback) {
  return has(key) ? fetch(key).value : fallback;
}

int64_t KvFile::get_int(const std::string& key) {
  const Entry& e = fetch(key);
  try {
    size_t pos = 0;
    int64_t v = std::stoll(e.value, &pos);
    if (pos != e.value.size()) fail(key, "not an integer: '" + e.value + "'");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    fail(key, "not an integer: '" + e.value + "'");
  }
}

int64_t KvFile::get_int(const std::string& key, int64_t fallback) {
  return has(key) ? get_int(key) : fallback;
}

double KvFile::get_double(const std::string& key) {
  const Entry& e = fetch(key);
  try {
    size_t pos = 0;
    double v = std::stod(e.value, &pos);
    if (pos != e.value.size()) fail(key, "not a number: '" + e.value + "'");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    fail(key, "not a number: '" + e.value + "'");
  }
}

double KvFile::get_double(const std::string& key, double fallback) {
  return has(key) ? get_double(key) : fallback;
}

bool KvFile::get_bool(const std::string& key) {
  const Entry& e = fetch(key);
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  fail(key, "not a boolean (use true/false): '" + e.value + "'");
}

bool KvFile::get_bool(const std::string& key, bool fallback) {
  return has(key) ? get_bool(key) : fallback;
}

void KvFile::require_all_consumed() const {
  std::string bad;
  for (const auto& [key, e] : entries_) {
    if (!e.used) {
      if (!bad.empty()) bad += ", ";
      bad += "'" + key + "' (line " + std::to_string(e.line) + ")";
    }
  }
  if (!bad.empty()) throw ConfigError(origin_ + ": unknown keys: " + bad);
}

void kv_write_file(const std::string& path, const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  for (const auto& [k, v] : pairs) out << k << " = " << v << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace stnet
