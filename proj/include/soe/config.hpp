#pragma once

// Flat key = value configuration files (a TOML subset): strings, numbers,
// booleans and one-level arrays of those. `[section]` headers prefix the
// following keys with "section.". Comments start with '#'.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "soe/error.hpp"

namespace soe {

using ConfigScalar = std::variant<bool, double, std::string>;
using ConfigValue = std::variant<bool, double, std::string, std::vector<ConfigScalar>>;

class Config {
 public:
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, ConfigValue>& values() const noexcept { return values_; }

  void set(const std::string& key, ConfigValue v) { values_[key] = std::move(v); }

  double get_number(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* d = std::get_if<double>(&it->second)) return *d;
    fail(ErrorCode::InvalidInput, "config key '" + key + "' is not a number");
  }
  std::size_t get_count(const std::string& key, std::size_t fallback) const {
    const double v = get_number(key, static_cast<double>(fallback));
    require(v >= 0.0 && v == std::floor(v), ErrorCode::InvalidInput, "config key '" + key + "' must be a count");
    return static_cast<std::size_t>(v);
  }
  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* b = std::get_if<bool>(&it->second)) return *b;
    fail(ErrorCode::InvalidInput, "config key '" + key + "' is not a boolean");
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (auto* s = std::get_if<std::string>(&it->second)) return *s;
    fail(ErrorCode::InvalidInput, "config key '" + key + "' is not a string");
  }
  std::optional<std::vector<double>> get_numbers(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    auto* arr = std::get_if<std::vector<ConfigScalar>>(&it->second);
    if (!arr) fail(ErrorCode::InvalidInput, "config key '" + key + "' is not an array");
    std::vector<double> out;
    for (const auto& s : *arr) {
      auto* d = std::get_if<double>(&s);
      if (!d) fail(ErrorCode::InvalidInput, "config key '" + key + "' must hold numbers only");
      out.push_back(*d);
    }
    return out;
  }

  friend bool operator==(const Config&, const Config&) = default;

 private:
  std::map<std::string, ConfigValue> values_;
};

namespace detail {

class ConfigParser {
 public:
  ConfigParser(std::string_view text, std::size_t line) : s_(text), line_(line) {}

  ConfigValue value() {
    skip_ws();
    if (peek() == '[') {
      ++pos_;
      std::vector<ConfigScalar> arr;
      skip_ws();
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      while (true) {
        arr.push_back(scalar());
        skip_ws();
        if (peek() == ',') {
          ++pos_;
          skip_ws();
          if (peek() == ']') {  // trailing comma
            ++pos_;
            break;
          }
          continue;
        }
        if (peek() == ']') {
          ++pos_;
          break;
        }
        error("expected ',' or ']' in array");
      }
      return arr;
    }
    ConfigScalar sc = scalar();
    return std::visit([](auto&& x) -> ConfigValue { return x; }, sc);
  }

  void finish() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] != '#') error("unexpected trailing characters");
  }

 private:
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorCode::InvalidInput, "config line " + std::to_string(line_) + ": " + what);
  }

  ConfigScalar scalar() {
    skip_ws();
    const char c = peek();
    if (c == '"') return string();
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return false;
    }
    std::size_t end = pos_;
    while (end < s_.size() && std::string_view("+-.0123456789eEinfa_").find(s_[end]) != std::string_view::npos)
      ++end;
    std::string num(s_.substr(pos_, end - pos_));
    std::erase(num, '_');
    if (num.empty()) error("expected a value");
    if (num[0] == '+') num.erase(0, 1);
    double v = 0.0;
    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
    if (ec != std::errc() || p != num.data() + num.size()) error("malformed number '" + num + "'");
    pos_ = end;
    return v;
  }

  std::string string() {
    ++pos_;  // opening quote
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c == '\\') {
        if (pos_ >= s_.size()) error("unterminated escape");
        const char e = s_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case 'r': out += '\r'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: error(std::string("unknown escape \\") + e);
        }
      } else {
        out += c;
      }
    }
    if (pos_ >= s_.size()) error("unterminated string");
    ++pos_;
    return out;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_;
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool valid_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  return true;
}

inline std::string render_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string render_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

inline std::string render_scalar(const ConfigScalar& s) {
  return std::visit(
      [](auto&& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool>) return x ? "true" : "false";
        else if constexpr (std::is_same_v<T, double>) return render_number(x);
        else return render_string(x);
      },
      s);
}

}  // namespace detail

inline Config parse_config(std::string_view text) {
  Config cfg;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = detail::trim(text.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      const std::size_t close = line.find(']');
      if (close == std::string_view::npos) fail(ErrorCode::InvalidInput, "config line " + std::to_string(line_no) + ": unterminated section");
      section = std::string(detail::trim(line.substr(1, close - 1)));
      if (!detail::valid_key(section)) fail(ErrorCode::InvalidInput, "config line " + std::to_string(line_no) + ": bad section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) fail(ErrorCode::InvalidInput, "config line " + std::to_string(line_no) + ": expected key = value");
    const std::string_view key = detail::trim(line.substr(0, eq));
    if (!detail::valid_key(key)) fail(ErrorCode::InvalidInput, "config line " + std::to_string(line_no) + ": bad key '" + std::string(key) + "'");
    detail::ConfigParser p(line.substr(eq + 1), line_no);
    ConfigValue v = p.value();
    p.finish();
    cfg.set(section.empty() ? std::string(key) : section + "." + std::string(key), std::move(v));
  }
  return cfg;
}

/// One `key = value` line per entry, keys sorted; parse_config(render_config(c)) == c.
inline std::string render_config(const Config& cfg) {
  std::string out;
  for (const auto& [key, value] : cfg.values()) {
    out += key + " = ";
    if (auto* arr = std::get_if<std::vector<ConfigScalar>>(&value)) {
      out += "[";
      for (std::size_t i = 0; i < arr->size(); ++i) {
        if (i) out += ", ";
        out += detail::render_scalar((*arr)[i]);
      }
      out += "]";
    } else {
      out += std::visit(
          [](auto&& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, std::vector<ConfigScalar>>) return {};
            else return detail::render_scalar(ConfigScalar(x));
          },
          value);
    }
    out += "\n";
  }
  return out;
}

}  // namespace soe
