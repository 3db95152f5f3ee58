#ifndef STNET_CORE_KV_HPP
#define STNET_CORE_KV_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace stnet {

/// Flat key=value configuration file.
///
/// Syntax: one `key = value` per line, `#` starts a comment, blank lines are
/// ignored. Keys are unique. Every parse error cites origin:line. Callers
/// read keys through the typed getters and finish with
/// require_all_consumed(), which turns unrecognized keys into errors instead
/// of silent typos.
class KvFile {
 public:
  static KvFile parse_file(const std::string& path);
  static KvFile parse_string(const std::string& text, const std::string& origin);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& origin() const { return origin_; }

  std::string get_string(const std::string& key);
  std::string get_string(const std::string& key, const std::string& fallback);
  int64_t get_int(const std::string& key);
  int64_t get_int(const std::string& key, int64_t fallback);
  double get_double(const std::string& key);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key);
  bool get_bool(const std::string& key, bool fallback);

  /// Throws ConfigError naming every key that was never read.
  void require_all_consumed() const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
    mutable bool used = false;
  };
  const Entry& fetch(const std::string& key);
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  std::string origin_;
  std::map<std::string, Entry> entries_;
};

/// Writes pairs as `key = value` lines in the given order.
void kv_write_file(const std::string& path, const std::vector<std::pair<std::string, std::string>>& pairs);

/// Doubles formatted with enough digits to round-trip exactly.
std::string format_double(double v);

}  // namespace stnet

#endif
