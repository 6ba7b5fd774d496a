// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <optional>

#include "pdot/util/bytes.hpp"

namespace pdot::wire {

/// Prefixes `payload` with its 16-bit big-endian length.
/// Throws WireError{Oversize} for payloads over 65535 bytes.
util::Bytes frame(util::ByteView payload);

/// Reassembles length-prefixed messages from an arbitrary byte stream.
class FrameBuffer {
 public:
  void feed(util::ByteView data);

  /// Returns the next complete payload, or nullopt until one is buffered.
  std::optional<util::Bytes> next();

  size_t buffered() const { return buf_.size(); }

 private:
  util::Bytes buf_;
};

}  // namespace pdot::wire
