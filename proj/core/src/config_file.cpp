#include "iic/config_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "iic/errors.hpp"

namespace iic {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' ||
                        s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(const std::string& key, std::string_view text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last)
    throw DataError("config key '" + key + "' has malformed value '" +
                    std::string(text) + "'");
  return value;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_string(std::string_view text) {
  KeyValueConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, eol == std::string_view::npos ? eol : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;

    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw DataError("config line " + std::to_string(line_no) +
                      ": expected key=value");
    const std::string key{trim(line.substr(0, eq))};
    const std::string value{trim(line.substr(eq + 1))};
    if (key.empty())
      throw DataError("config line " + std::to_string(line_no) +
                      ": empty key");
    if (!cfg.values_.emplace(key, value).second)
      throw DataError("config key '" + key + "' appears twice");
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config: " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_string(buf.str());
}

bool KeyValueConfig::has(const std::string& key) const {
  return values_.count(key) != 0;
}

const std::string* KeyValueConfig::lookup(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  consumed_.insert(key);
  return &it->second;
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  const std::string* v = lookup(key);
  return v ? *v : fallback;
}

long KeyValueConfig::get_int(const std::string& key, long fallback) const {
  const std::string* v = lookup(key);
  return v ? parse_number<long>(key, *v) : fallback;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key,
                                      std::uint64_t fallback) const {
  const std::string* v = lookup(key);
  return v ? parse_number<std::uint64_t>(key, *v) : fallback;
}

double KeyValueConfig::get_double(const std::string& key,
                                  double fallback) const {
  const std::string* v = lookup(key);
  return v ? parse_number<double>(key, *v) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw DataError("config key '" + key + "' expects true/false, got '" + *v +
                  "'");
}

std::vector<int> KeyValueConfig::get_int_list(
    const std::string& key, const std::vector<int>& fallback) const {
  const std::string* v = lookup(key);
  if (!v) return fallback;
  std::vector<int> out;
  std::string_view rest{*v};
  if (trim(rest).empty()) return out;
  while (true) {
    const std::size_t comma = rest.find(',');
    const std::string_view item = trim(rest.substr(0, comma));
    out.push_back(static_cast<int>(parse_number<long>(key, item)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key)) out.push_back(key);
  return out;
}

}  // namespace iic
