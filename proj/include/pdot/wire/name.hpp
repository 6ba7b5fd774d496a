// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pdot::wire {

/// A domain name as an ordered list of labels, root excluded.
/// Original case is preserved; comparisons ignore ASCII case.
class DomainName {
 public:
  DomainName() = default;

  /// Parses dotted notation ("example.com", trailing dot optional, "." = root).
  /// Throws WireError on empty labels, labels over 63 bytes, or names whose
  /// wire form would exceed 255 bytes.
  static DomainName parse(std::string_view text);

  static DomainName from_labels(std::vector<std::string> labels);

  const std::vector<std::string>& labels() const { return labels_; }
  bool is_root() const { return labels_.empty(); }
  size_t label_count() const { return labels_.size(); }

  /// Dotted form without trailing dot; "." for the root.
  std::string str() const;

  /// Lowercased dotted form, suitable as a lookup key.
  std::string key() const;

  /// Wire length: one length octet per label plus bytes, plus the root octet.
  size_t wire_size() const;

  /// True when `this` equals `zone` or is a descendant of it.
  bool is_subdomain_of(const DomainName& zone) const;

  /// Name with the first label removed; root stays root.
  DomainName parent() const;

  DomainName child(std::string_view label) const;

  bool operator==(const DomainName& other) const;
  bool operator!=(const DomainName& other) const { return !(*this == other); }

 private:
  std::vector<std::string> labels_;
};

bool label_equal_ci(std::string_view a, std::string_view b);

}  // namespace pdot::wire
