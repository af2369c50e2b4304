#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wslab {

// Flat `key = value` text with optional `[section]` headers. Keys inside a
// section are stored as "section.key"; '#' and ';' start comments.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  // Later values win; used to layer command line flags over a file.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  // Source line of a stored key, 0 if set programmatically or absent.
  int line(const std::string& key) const;
  // Key names of a section (without the prefix), in sorted order.
  std::vector<std::string> keys(const std::string& section = "") const;

  // Lookups try "section.key" first, then the bare key.
  std::optional<std::string> raw(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& section, const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<std::int64_t> get_int_list(const std::string& section, const std::string& key,
                                         std::vector<std::int64_t> fallback) const;
  std::vector<double> get_double_list(const std::string& section, const std::string& key,
                                      std::vector<double> fallback) const;
  std::vector<std::string> get_string_list(const std::string& section, const std::string& key,
                                           std::vector<std::string> fallback) const;

 private:
  struct Entry {
    std::string value;
    int line = 0;  // 0 for values set programmatically
  };
  const Entry* find(const std::string& section, const std::string& key, std::string* name) const;
  std::map<std::string, Entry> entries_;
};

std::vector<std::string> split_list(const std::string& value);

}  // namespace wslab
