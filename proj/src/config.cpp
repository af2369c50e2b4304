#include "wslab/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "wslab/error.hpp"

namespace wslab {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& name, const std::string& value, const char* what, int line) {
  std::string msg = "key '" + name + "': '" + value + "' is not " + what;
  if (line > 0) throw Error(ErrorCode::ConfigError, msg, line);
  throw Error(ErrorCode::ConfigError, msg);
}

std::int64_t to_int(const std::string& name, const std::string& v, int line) {
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(name, v, "an integer", line);
  return out;
}

double to_double(const std::string& name, const std::string& v, int line) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) bad_value(name, v, "a number", line);
    return out;
  } catch (const std::invalid_argument&) {
    bad_value(name, v, "a number", line);
  } catch (const std::out_of_range&) {
    bad_value(name, v, "a representable number", line);
  }
}

}  // namespace

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Config Config::parse(const std::string& text) {
  Config cfg;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::ConfigError, "unterminated section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw Error(ErrorCode::ConfigError, "empty section name", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "expected key = value", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::ConfigError, "missing key before '='", line_no);
    const std::string name = section.empty() ? key : section + "." + key;
    if (cfg.entries_.count(name)) throw Error(ErrorCode::ConfigError, "duplicate key '" + name + "'", line_no);
    cfg.entries_[name] = {value, line_no};
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void Config::set(const std::string& key, const std::string& value) { entries_[key] = {value, 0}; }

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

int Config::line(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? 0 : it->second.line;
}

std::vector<std::string> Config::keys(const std::string& section) const {
  std::vector<std::string> out;
  const std::string prefix = section.empty() ? "" : section + ".";
  for (const auto& [name, entry] : entries_) {
    if (section.empty()) {
      if (name.find('.') == std::string::npos) out.push_back(name);
    } else if (name.rfind(prefix, 0) == 0) {
      out.push_back(name.substr(prefix.size()));
    }
  }
  return out;
}

const Config::Entry* Config::find(const std::string& section, const std::string& key, std::string* name) const {
  if (!section.empty()) {
    auto it = entries_.find(section + "." + key);
    if (it != entries_.end()) {
      *name = it->first;
      return &it->second;
    }
  }
  auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  *name = it->first;
  return &it->second;
}

std::optional<std::string> Config::raw(const std::string& section, const std::string& key) const {
  std::string name;
  const Entry* e = find(section, key, &name);
  if (!e) return std::nullopt;
  return e->value;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  return raw(section, key).value_or(fallback);
}

std::int64_t Config::get_int(const std::string& section, const std::string& key, std::int64_t fallback) const {
  std::string name;
  const Entry* e = find(section, key, &name);
  return e ? to_int(name, e->value, e->line) : fallback;
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key, std::uint64_t fallback) const {
  std::string name;
  const Entry* e = find(section, key, &name);
  if (!e) return fallback;
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), out);
  if (ec != std::errc() || ptr != e->value.data() + e->value.size())
    bad_value(name, e->value, "an unsigned integer", e->line);
  return out;
}

double Config::get_double(const std::string& section, const std::string& key, double fallback) const {
  std::string name;
  const Entry* e = find(section, key, &name);
  return e ? to_double(name, e->value, e->line) : fallback;
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  std::string name;
  const Entry* e = find(section, key, &name);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "yes" || e->value == "on") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no" || e->value == "off") return false;
  bad_value(name, e->value, "a boolean", e->line);
}

std::vector<std::int64_t> Config::get_int_list(const std::string& section, const std::string& key,
                                               std::vector<std::int64_t> fallback) const {
  std::string name;
  const Entry* e = find(section, key, &name);
  if (!e) return fallback;
  std::vector<std::int64_t> out;
  for (const auto& item : split_list(e->value)) out.push_back(to_int(name, item, e->line));
  if (out.empty()) bad_value(name, e->value, "a non-empty list", e->line);
  return out;
}

std::vector<double> Config::get_double_list(const std::string& section, const std::string& key,
                                            std::vector<double> fallback) const {
  std::string name;
  const Entry* e = find(section, key, &name);
  if (!e) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(e->value)) out.push_back(to_double(name, item, e->line));
  if (out.empty()) bad_value(name, e->value, "a non-empty list", e->line);
  return out;
}

std::vector<std::string> Config::get_string_list(const std::string& section, const std::string& key,
                                                 std::vector<std::string> fallback) const {
  std::string name;
  const Entry* e = find(section, key, &name);
  if (!e) return fallback;
  auto out = split_list(e->value);
  if (out.empty()) bad_value(name, e->value, "a non-empty list", e->line);
  return out;
}

}  // namespace wslab
