// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/wire/framing.hpp"

#include "pdot/wire/message.hpp"

namespace pdot::wire {

util::Bytes frame(util::ByteView payload) {
  if (payload.size() > 65535) {
    throw WireError(WireErrc::Oversize, "frame payload exceeds 65535 bytes");
  }
  util::Bytes out;
  out.reserve(payload.size() + 2);
  out.push_back(static_cast<std::uint8_t>(payload.size() >> 8));
  out.push_back(static_cast<std::uint8_t>(payload.size() & 0xFF));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

void FrameBuffer::feed(util::ByteView data) {
  buf_.insert(buf_.end(), data.begin(), data.end());
}

std::optional<util::Bytes> FrameBuffer::next() {
  if (buf_.size() < 2) return std::nullopt;
  size_t len = static_cast<size_t>(buf_[0]) << 8 | buf_[1];
  if (buf_.size() < 2 + len) return std::nullopt;
  util::Bytes payload(buf_.begin() + 2, buf_.begin() + 2 + len);
  buf_.erase(buf_.begin(), buf_.begin() + 2 + len);
  return payload;
}

}  // namespace pdot::wire
