#pragma once

#include <map>
#include <string>
#include <vector>

#include "cogcalib/errors.hpp"

namespace cogcalib {

// Minimal key = value config with [section] headers. '#' and ';' start
// comments. Whitespace around keys and values is trimmed.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_string(const std::string& text, const std::string& origin);

  bool has(const std::string& section, const std::string& key) const;
  const std::map<std::string, std::string>& section(const std::string& name) const;
  std::vector<std::string> section_names() const;

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  long get_long(const std::string& section, const std::string& key,
                long fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;
  std::vector<std::string> get_list(const std::string& section,
                                    const std::string& key) const;

  // Every key of every listed section must appear in its allowed set;
  // unknown sections or keys raise ConfigError naming the offender.
  void check_known(
      const std::map<std::string, std::vector<std::string>>& allowed) const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::string origin_;
};

}  // namespace cogcalib
