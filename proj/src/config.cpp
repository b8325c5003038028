#include "cogcalib/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace cogcalib {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

ConfigFile ConfigFile::parse_string(const std::string& text,
                                    const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      cfg.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.sections_[section][key] = value;
  }
  return cfg;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

const std::map<std::string, std::string>& ConfigFile::section(
    const std::string& name) const {
  static const std::map<std::string, std::string> empty;
  const auto s = sections_.find(name);
  return s == sections_.end() ? empty : s->second;
}

std::vector<std::string> ConfigFile::section_names() const {
  std::vector<std::string> names;
  names.reserve(sections_.size());
  for (const auto& [name, _] : sections_) names.push_back(name);
  return names;
}

std::string ConfigFile::get_string(const std::string& section,
                                   const std::string& key,
                                   const std::string& fallback) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return fallback;
  const auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get_string(section, key, "");
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' in section [" + section +
                      "]: '" + v + "' is not a number");
  }
}

long ConfigFile::get_long(const std::string& section, const std::string& key,
                          long fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get_string(section, key, "");
  try {
    std::size_t used = 0;
    const long n = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' in section [" + section +
                      "]: '" + v + "' is not an integer");
  }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  if (!has(section, key)) return fallback;
  std::string v = get_string(section, key, "");
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  throw ConfigError("config key '" + key + "' in section [" + section + "]: '" +
                    v + "' is not a boolean");
}

std::vector<std::string> ConfigFile::get_list(const std::string& section,
                                              const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get_string(section, key, ""));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void ConfigFile::check_known(
    const std::map<std::string, std::vector<std::string>>& allowed) const {
  for (const auto& [name, entries] : sections_) {
    const auto sec = allowed.find(name);
    if (sec == allowed.end())
      throw ConfigError("unknown config section [" + name + "] in " + origin_);
    for (const auto& [key, _] : entries)
      if (std::find(sec->second.begin(), sec->second.end(), key) ==
          sec->second.end())
        throw ConfigError("unknown config key '" + key + "' in section [" + name +
                          "] in " + origin_);
  }
}

}  // namespace cogcalib
