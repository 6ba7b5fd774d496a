// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/wire/name.hpp"

#include <algorithm>
#include <cctype>

#include "pdot/wire/message.hpp"

namespace pdot::wire {

namespace {

char lower(char c) {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

void check_label(std::string_view label) {
  if (label.empty()) {
    throw WireError(WireErrc::BadLabel, "empty label");
  }
  if (label.size() > 63) {
    throw WireError(WireErrc::BadLabel, "label exceeds 63 bytes");
  }
}

void check_total(const std::vector<std::string>& labels) {
  size_t wire = 1;  // root octet
  for (const auto& l : labels) wire += 1 + l.size();
  if (wire > 255) {
    throw WireError(WireErrc::NameTooLong, "name exceeds 255 wire bytes");
  }
}

}  // namespace

bool label_equal_ci(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(),
                    [](char x, char y) { return lower(x) == lower(y); });
}

DomainName DomainName::parse(std::string_view text) {
  DomainName n;
  if (text.empty()) {
    throw WireError(WireErrc::BadLabel, "empty name");
  }
  if (text == ".") return n;
  if (text.back() == '.') text.remove_suffix(1);

  size_t start = 0;
  while (start <= text.size()) {
    size_t dot = text.find('.', start);
    std::string_view label =
        dot == std::string_view::npos ? text.substr(start) : text.substr(start, dot - start);
    check_label(label);
    n.labels_.emplace_back(label);
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  check_total(n.labels_);
  return n;
}

DomainName DomainName::from_labels(std::vector<std::string> labels) {
  for (const auto& l : labels) check_label(l);
  check_total(labels);
  DomainName n;
  n.labels_ = std::move(labels);
  return n;
}

std::string DomainName::str() const {
  if (labels_.empty()) return ".";
  std::string out;
  for (size_t i = 0; i < labels_.size(); ++i) {
    if (i) out += '.';
    out += labels_[i];
  }
  return out;
}

std::string DomainName::key() const {
  std::string out = str();
  std::transform(out.begin(), out.end(), out.begin(), lower);
  return out;
}

size_t DomainName::wire_size() const {
  size_t n = 1;
  for (const auto& l : labels_) n += 1 + l.size();
  return n;
}

bool DomainName::is_subdomain_of(const DomainName& zone) const {
  if (zone.labels_.size() > labels_.size()) return false;
  size_t off = labels_.size() - zone.labels_.size();
  for (size_t i = 0; i < zone.labels_.size(); ++i) {
    if (!label_equal_ci(labels_[off + i], zone.labels_[i])) return false;
  }
  return true;
}

DomainName DomainName::parent() const {
  DomainName n;
  if (labels_.size() > 1) {
    n.labels_.assign(labels_.begin() + 1, labels_.end());
  }
  return n;
}

DomainName DomainName::child(std::string_view label) const {
  check_label(label);
  std::vector<std::string> ls;
  ls.reserve(labels_.size() + 1);
  ls.emplace_back(label);
  ls.insert(ls.end(), labels_.begin(), labels_.end());
  check_total(ls);
  DomainName n;
  n.labels_ = std::move(ls);
  return n;
}

bool DomainName::operator==(const DomainName& other) const {
  if (labels_.size() != other.labels_.size()) return false;
  for (size_t i = 0; i < labels_.size(); ++i) {
    if (!label_equal_ci(labels_[i], other.labels_[i])) return false;
  }
  return true;
}

}  // namespace pdot::wire
