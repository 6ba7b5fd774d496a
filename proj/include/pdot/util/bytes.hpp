// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pdot::util {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline Bytes to_bytes(std::string_view s) {
  return Bytes(s.begin(), s.end());
}

inline std::string to_string(ByteView b) {
  return std::string(b.begin(), b.end());
}

inline void append(Bytes& dst, ByteView src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

std::string to_hex(ByteView data);

/// Parses a lowercase/uppercase hex string; throws std::invalid_argument on bad input.
Bytes from_hex(std::string_view hex);

/// True if `needle` occurs as a contiguous byte substring of `haystack`.
bool contains(ByteView haystack, ByteView needle);

}  // namespace pdot::util
