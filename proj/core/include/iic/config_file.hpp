#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace iic {

// key=value configuration text. One pair per line, '#' starts a comment
// line, blank lines are skipped, keys must be unique. Typed getters track
// which keys were consumed so callers can reject typos via unused_keys().
class KeyValueConfig {
 public:
  static KeyValueConfig parse_string(std::string_view text);
  static KeyValueConfig parse_file(const std::filesystem::path& path);

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& fallback) const;

  // Keys present in the file that no getter has asked for yet.
  std::vector<std::string> unused_keys() const;

 private:
  const std::string* lookup(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

}  // namespace iic
