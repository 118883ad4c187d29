#pragma once

#include <map>
#include <string>
#include <vector>

namespace feinn {

/// Minimal TOML subset used by the experiment configs: top-level tables,
/// key = value pairs with strings, numbers, booleans and flat arrays.
struct TomlValue {
  enum Kind { String, Number, Boolean, Array } kind = Number;
  std::string str;
  double num = 0.0;
  bool boolean = false;
  std::vector<TomlValue> array;

  const std::string& as_string() const;
  double as_number() const;
  long as_integer() const;
  bool as_bool() const;
};

using TomlTable = std::map<std::string, TomlValue>;

struct TomlDoc {
  std::map<std::string, TomlTable> tables;
};

TomlDoc parse_toml(const std::string& text);
TomlDoc parse_toml_file(const std::string& path);

}  // namespace feinn
