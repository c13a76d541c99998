#pragma once

// Flat key-value run configuration. Files hold one `key = value` pair per
// line with '#' comments; keys are dotted paths like `optimizer.lr`.
// Command-line overrides use the same `key=value` shape and win over file
// values. Typed getters parse on access and reject trailing garbage.

#include <cctype>
#include <climits>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmim/error.hpp"

namespace handmim {

using json = nlohmann::json;

struct Config {
  std::map<std::string, std::string> kv;

  bool has(const std::string& key) const { return kv.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { kv[key] = value; }

  std::string require(const std::string& key) const {
    auto it = kv.find(key);
    HM_CHECK(it != kv.end(), ConfigError, "missing required config key '" + key + "'");
    return it->second;
  }

  std::string gets(const std::string& key, const std::string& def) const {
    auto it = kv.find(key);
    return it == kv.end() ? def : it->second;
  }

  double getd(const std::string& key, double def) const {
    auto it = kv.find(key);
    if (it == kv.end()) return def;
    return parse_double(key, it->second);
  }

  int geti(const std::string& key, int def) const {
    auto it = kv.find(key);
    if (it == kv.end()) return def;
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(it->second, &pos);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + it->second + "' is not an integer");
    }
    HM_CHECK(pos == it->second.size(), ConfigError,
             "config key '" + key + "': trailing characters in '" + it->second + "'");
    HM_CHECK(v >= INT_MIN && v <= INT_MAX, ConfigError, "config key '" + key + "': out of range");
    return static_cast<int>(v);
  }

  bool getb(const std::string& key, bool def) const {
    auto it = kv.find(key);
    if (it == kv.end()) return def;
    const std::string& s = it->second;
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
  }

  // Accepts "key=value"; used for command-line overrides.
  void apply_override(const std::string& arg) {
    std::size_t eq = arg.find('=');
    HM_CHECK(eq != std::string::npos && eq > 0, UsageError,
             "override '" + arg + "' is not of the form key=value");
    set(trim(arg.substr(0, eq)), trim(arg.substr(eq + 1)));
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    HM_CHECK(in.good(), IoError, "cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      std::string t = trim(line);
      if (t.empty()) continue;
      std::size_t eq = t.find('=');
      HM_CHECK(eq != std::string::npos && eq > 0, ConfigError,
               path + ":" + std::to_string(lineno) + ": expected 'key = value'");
      set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }

  static Config from_file(const std::string& path) {
    Config c;
    c.merge_file(path);
    return c;
  }

  json to_json() const {
    json j = json::object();
    for (const auto& [k, v] : kv) j[k] = v;
    return j;
  }

  static Config from_json(const json& j) {
    Config c;
    HM_CHECK(j.is_object(), DataError, "config snapshot is not an object");
    for (auto it = j.begin(); it != j.end(); ++it)
      c.kv[it.key()] = it.value().get<std::string>();
    return c;
  }

  static std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

 private:
  static double parse_double(const std::string& key, const std::string& raw) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(raw, &pos);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + raw + "' is not a number");
    }
    HM_CHECK(pos == raw.size(), ConfigError,
             "config key '" + key + "': trailing characters in '" + raw + "'");
    return v;
  }
};

}  // namespace handmim
