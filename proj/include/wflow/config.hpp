#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "wflow/errors.hpp"

namespace wflow {

/// Bad configuration text or value. `line` is 0 when the problem is not tied
/// to a line of the file (missing key, command-line override).
class ConfigError : public FormatError {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& field, const std::string& what);
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

/// Flat `key = value` text with `[section]` headers. Keys are addressed as
/// "section.key" (top-level keys have no dot). Every read is recorded with
/// its resolved value, defaults included, so the run can be echoed and
/// replayed.
class Config {
 public:
  static Config parse(std::istream& is, const std::string& source = "<config>");
  static Config parse_string(const std::string& text, const std::string& source = "<config>");
  static Config load(const std::string& path);

  bool has(const std::string& key) const;
  /// True when any key of `[section]` is present.
  bool has_section(const std::string& section) const;
  /// Value as written, without recording the read.
  std::optional<std::string> peek(const std::string& key) const;
  /// Overrides (or adds) a value, e.g. from the command line.
  void set(const std::string& key, const std::string& value);

  std::string text(const std::string& key) const;  // required
  std::string text(const std::string& key, const std::string& fallback) const;
  double real(const std::string& key, double fallback) const;
  std::size_t count(const std::string& key, std::size_t fallback) const;
  std::uint64_t seed(const std::string& key, std::uint64_t fallback) const;
  bool flag(const std::string& key, bool fallback) const;
  std::vector<double> reals(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::size_t> counts(const std::string& key, const std::vector<std::size_t>& fallback) const;
  std::vector<std::string> words(const std::string& key, const std::vector<std::string>& fallback) const;

  /// Marks a key as consumed without echoing it (settings that do not affect
  /// results, such as the output directory).
  void consume(const std::string& key) const { consumed_.insert(key); }

  /// Throws ConfigError for the first key in the file that was never read.
  void reject_unused(const std::string& context) const;

  /// Resolved values of every key read so far.
  const std::map<std::string, std::string>& resolved() const { return resolved_; }
  /// Resolved values as config text (top-level keys first, then sections).
  void write_resolved(std::ostream& os) const;

  const std::string& source() const { return source_; }
  /// Line of `key` in the file, 0 when absent or set programmatically.
  std::size_t line_of(const std::string& key) const;
  /// ConfigError located at `key`.
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  const Entry* find(const std::string& key) const;
  void record(const std::string& key, const std::string& value) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
  mutable std::map<std::string, std::string> resolved_;
  mutable std::set<std::string> consumed_;
};

}  // namespace wflow
