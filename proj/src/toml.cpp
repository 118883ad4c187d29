#include "feinn/toml.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "feinn/common.hpp"

namespace feinn {

const std::string& TomlValue::as_string() const {
  require(kind == String, "toml: expected a string value");
  return str;
}

double TomlValue::as_number() const {
  require(kind == Number, "toml: expected a numeric value");
  return num;
}

long TomlValue::as_integer() const {
  require(kind == Number, "toml: expected an integer value");
  long v = static_cast<long>(num);
  require(static_cast<double>(v) == num, "toml: expected an integer, got a fraction");
  return v;
}

bool TomlValue::as_bool() const {
  require(kind == Boolean, "toml: expected a boolean value");
  return boolean;
}

namespace {

std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Remove a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

TomlValue parse_scalar(const std::string& text, int lineno) {
  TomlValue v;
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
    v.kind = TomlValue::String;
    v.str = text.substr(1, text.size() - 2);
    return v;
  }
  if (text == "true" || text == "false") {
    v.kind = TomlValue::Boolean;
    v.boolean = (text == "true");
    return v;
  }
  try {
    size_t used = 0;
    v.kind = TomlValue::Number;
    v.num = std::stod(text, &used);
    require(used == text.size(), "");
    return v;
  } catch (...) {
    throw std::runtime_error("toml: cannot parse value '" + text + "' on line " +
                             std::to_string(lineno));
  }
}

TomlValue parse_value(const std::string& text, int lineno) {
  if (!text.empty() && text.front() == '[') {
    require(text.back() == ']', "toml: unterminated array on line " + std::to_string(lineno));
    TomlValue v;
    v.kind = TomlValue::Array;
    std::string inner = text.substr(1, text.size() - 2);
    std::string cur;
    bool in_str = false;
    for (char c : inner) {
      if (c == '"') in_str = !in_str;
      if (c == ',' && !in_str) {
        std::string item = strip(cur);
        if (!item.empty()) v.array.push_back(parse_scalar(item, lineno));
        cur.clear();
      } else {
        cur += c;
      }
    }
    std::string item = strip(cur);
    if (!item.empty()) v.array.push_back(parse_scalar(item, lineno));
    return v;
  }
  return parse_scalar(text, lineno);
}

}  // namespace

TomlDoc parse_toml(const std::string& text) {
  TomlDoc doc;
  std::istringstream in(text);
  std::string line;
  std::string current;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']', "toml: malformed table header on line " + std::to_string(lineno));
      current = strip(line.substr(1, line.size() - 2));
      require(!current.empty(), "toml: empty table name on line " + std::to_string(lineno));
      doc.tables[current];  // create
      continue;
    }
    size_t eq = std::string::npos;
    bool in_str = false;
    for (size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_str = !in_str;
      if (line[i] == '=' && !in_str) {
        eq = i;
        break;
      }
    }
    require(eq != std::string::npos, "toml: expected key = value on line " + std::to_string(lineno));
    std::string key = strip(line.substr(0, eq));
    std::string val = strip(line.substr(eq + 1));
    require(!key.empty() && !val.empty(),
            "toml: malformed key = value on line " + std::to_string(lineno));
    require(!current.empty(), "toml: key outside of a table on line " + std::to_string(lineno));
    require(doc.tables[current].find(key) == doc.tables[current].end(),
            "toml: duplicate key '" + key + "' on line " + std::to_string(lineno));
    doc.tables[current][key] = parse_value(val, lineno);
  }
  return doc;
}

TomlDoc parse_toml_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_toml(ss.str());
}

}  // namespace feinn
