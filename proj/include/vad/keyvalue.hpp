#pragma once

// Flat "key = value" text records. '#' starts a comment line; blank lines are
// ignored. Used for model files, calibration artifacts and config files.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vad {

class KeyValues {
 public:
  /// Throws ErrorKind::format with the offending line number.
  static KeyValues parse(std::string_view text);
  static KeyValues load(const std::string& path);

  void set(const std::string& key, std::string value);
  bool contains(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::optional<std::string> find(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  std::string to_string() const;

 private:
  std::map<std::string, std::string> entries_;
};

/// Shortest text that round-trips: 17 significant digits.
std::string format_double(double value);
std::string format_doubles(const std::vector<double>& values);

double parse_double(std::string_view text);
long long parse_int(std::string_view text);

}  // namespace vad
