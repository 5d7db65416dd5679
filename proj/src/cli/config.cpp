#include "wflow/config.hpp"

#include <cctype>
#include <cmath>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "wflow/datasets.hpp"

namespace wflow {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  }
  return true;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  return out;
}

bool parse_real(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

template <typename U>
bool parse_unsigned(const std::string& s, U& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    if constexpr (std::is_same_v<T, double>) os << format_double(v[i]);
    else os << v[i];
  }
  return os.str();
}

}  // namespace

ConfigError::ConfigError(const std::string& source, std::size_t line, const std::string& field,
                         const std::string& what)
    : FormatError([&] {
        std::ostringstream os;
        os << source;
        if (line) os << ':' << line;
        os << ": ";
        if (!field.empty()) os << "field '" << field << "': ";
        os << what;
        return os.str();
      }()),
      line_(line),
      field_(field) {}

Config Config::parse(std::istream& is, const std::string& source) {
  Config c;
  c.source_ = source;
  std::string section, raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = raw;
    // Comments run from '#' or ';' to the end of the line.
    const auto cut = line.find_first_of("#;");
    if (cut != std::string::npos) line.erase(cut);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(source, line_no, "", "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!valid_name(section)) throw ConfigError(source, line_no, "", "bad section name '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line_no, "", "expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (!valid_name(key)) throw ConfigError(source, line_no, "", "bad key name '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (c.entries_.count(full)) {
      std::ostringstream msg;
      msg << "duplicate key (first set on line " << c.entries_[full].line << ")";
      throw ConfigError(source, line_no, full, msg.str());
    }
    c.entries_[full] = Entry{value, line_no};
  }
  return c;
}

Config Config::parse_string(const std::string& text, const std::string& source) {
  std::istringstream is(text);
  return parse(is, source);
}

Config Config::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path, 0, "", "cannot open config file");
  return parse(is, path);
}

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

bool Config::has_section(const std::string& section) const {
  const std::string prefix = section + ".";
  auto it = entries_.lower_bound(prefix);
  return it != entries_.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

std::optional<std::string> Config::peek(const std::string& key) const {
  const Entry* e = find(key);
  return e ? std::optional<std::string>(e->value) : std::nullopt;
}

void Config::set(const std::string& key, const std::string& value) {
  if (!valid_name(key.substr(key.find('.') == std::string::npos ? 0 : key.find('.') + 1))) {
    throw ConfigError(source_, 0, key, "bad key name");
  }
  entries_[key] = Entry{value, 0};
}

const Config::Entry* Config::find(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void Config::record(const std::string& key, const std::string& value) const { resolved_[key] = value; }

std::size_t Config::line_of(const std::string& key) const {
  const Entry* e = find(key);
  return e ? e->line : 0;
}

void Config::fail(const std::string& key, const std::string& what) const {
  const Entry* e = find(key);
  throw ConfigError(source_, e ? e->line : 0, key, what);
}

std::string Config::text(const std::string& key) const {
  const Entry* e = find(key);
  if (!e) throw ConfigError(source_, 0, key, "required key is missing");
  record(key, e->value);
  return e->value;
}

std::string Config::text(const std::string& key, const std::string& fallback) const {
  const Entry* e = find(key);
  const std::string v = e ? e->value : fallback;
  record(key, v);
  return v;
}

double Config::real(const std::string& key, double fallback) const {
  const Entry* e = find(key);
  double v = fallback;
  if (e && !parse_real(e->value, v)) fail(key, "expected a number, got '" + e->value + "'");
  if (!std::isfinite(v)) fail(key, "value must be finite");
  record(key, format_double(v));
  return v;
}

std::size_t Config::count(const std::string& key, std::size_t fallback) const {
  const Entry* e = find(key);
  std::size_t v = fallback;
  if (e && !parse_unsigned(e->value, v)) fail(key, "expected a non-negative integer, got '" + e->value + "'");
  record(key, std::to_string(v));
  return v;
}

std::uint64_t Config::seed(const std::string& key, std::uint64_t fallback) const {
  const Entry* e = find(key);
  std::uint64_t v = fallback;
  if (e && !parse_unsigned(e->value, v)) fail(key, "expected a non-negative integer, got '" + e->value + "'");
  record(key, std::to_string(v));
  return v;
}

bool Config::flag(const std::string& key, bool fallback) const {
  const Entry* e = find(key);
  bool v = fallback;
  if (e) {
    if (e->value == "true" || e->value == "yes" || e->value == "1") v = true;
    else if (e->value == "false" || e->value == "no" || e->value == "0") v = false;
    else fail(key, "expected true or false, got '" + e->value + "'");
  }
  record(key, v ? "true" : "false");
  return v;
}

std::vector<double> Config::reals(const std::string& key, const std::vector<double>& fallback) const {
  const Entry* e = find(key);
  std::vector<double> v = fallback;
  if (e) {
    v.clear();
    if (!e->value.empty()) {
      for (const std::string& item : split_list(e->value)) {
        double x = 0.0;
        if (!parse_real(item, x) || !std::isfinite(x)) fail(key, "expected a list of numbers, got '" + e->value + "'");
        v.push_back(x);
      }
    }
  }
  record(key, join(v));
  return v;
}

std::vector<std::size_t> Config::counts(const std::string& key, const std::vector<std::size_t>& fallback) const {
  const Entry* e = find(key);
  std::vector<std::size_t> v = fallback;
  if (e) {
    v.clear();
    if (!e->value.empty()) {
      for (const std::string& item : split_list(e->value)) {
        std::size_t x = 0;
        if (!parse_unsigned(item, x)) fail(key, "expected a list of non-negative integers, got '" + e->value + "'");
        v.push_back(x);
      }
    }
  }
  record(key, join(v));
  return v;
}

std::vector<std::string> Config::words(const std::string& key, const std::vector<std::string>& fallback) const {
  const Entry* e = find(key);
  std::vector<std::string> v = fallback;
  if (e) v = e->value.empty() ? std::vector<std::string>{} : split_list(e->value);
  record(key, join(v));
  return v;
}

void Config::reject_unused(const std::string& context) const {
  const Entry* worst = nullptr;
  std::string worst_key;
  for (const auto& [key, e] : entries_) {
    if (resolved_.count(key) || consumed_.count(key)) continue;
    if (!worst || e.line < worst->line) {
      worst = &e;
      worst_key = key;
    }
  }
  if (worst) throw ConfigError(source_, worst->line, worst_key, "unknown key for " + context);
}

void Config::write_resolved(std::ostream& os) const {
  std::string section;
  for (const auto& [key, value] : resolved_) {
    if (key.find('.') == std::string::npos) os << key << " = " << value << '\n';
  }
  for (const auto& [key, value] : resolved_) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    const std::string s = key.substr(0, dot);
    if (s != section) {
      os << '\n' << '[' << s << "]\n";
      section = s;
    }
    os << key.substr(dot + 1) << " = " << value << '\n';
  }
}

}  // namespace wflow
