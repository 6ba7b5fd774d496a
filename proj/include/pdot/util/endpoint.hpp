// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <cstdint>
#include <string>

namespace pdot::util {

/// A host:port pair. Hosts are IPv4 dotted-quad addresses throughout the suite.
struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  bool operator==(const Endpoint&) const = default;
  std::string str() const { return host + ":" + std::to_string(port); }

  /// Parses "host:port"; throws std::invalid_argument on malformed input.
  static Endpoint parse(std::string_view text);
};

}  // namespace pdot::util
