// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <map>
#include <string>
#include <vector>

namespace pdot::util {

/// Line-oriented `key = value` configuration. '#' starts a comment, blank
/// lines are skipped, a key may repeat (values accumulate in file order).
class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_text(const std::string& text, const std::string& origin = "<text>");

  bool has(const std::string& key) const;
  /// Last value wins for scalar keys; throws std::runtime_error when absent.
  std::string get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// All values for a repeated key, in file order.
  std::vector<std::string> get_all(const std::string& key) const;

 private:
  std::map<std::string, std::vector<std::string>> values_;
  std::string origin_;
};

}  // namespace pdot::util
