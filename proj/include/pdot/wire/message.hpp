// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pdot/util/bytes.hpp"
#include "pdot/wire/name.hpp"

namespace pdot::wire {

using util::Bytes;
using util::ByteView;

// Record types. Unknown types are carried with opaque rdata.
inline constexpr std::uint16_t kTypeA = 1;
inline constexpr std::uint16_t kTypeNs = 2;
inline constexpr std::uint16_t kClassIn = 1;

// Response codes.
inline constexpr std::uint8_t kRcodeNoError = 0;
inline constexpr std::uint8_t kRcodeFormErr = 1;
inline constexpr std::uint8_t kRcodeServFail = 2;
inline constexpr std::uint8_t kRcodeNxDomain = 3;

// Header flag bits.
inline constexpr std::uint16_t kFlagQr = 0x8000;
inline constexpr std::uint16_t kFlagAa = 0x0400;
inline constexpr std::uint16_t kFlagTc = 0x0200;
inline constexpr std::uint16_t kFlagRd = 0x0100;
inline constexpr std::uint16_t kFlagRa = 0x0080;

enum class WireErrc {
  Truncated,
  BadLabel,
  NameTooLong,
  CompressionLoop,
  BadPointer,
  BadRdata,
  Oversize,
  TrailingBytes,
};

class WireError : public std::runtime_error {
 public:
  WireError(WireErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  WireErrc code() const { return code_; }

 private:
  WireErrc code_;
};

struct Question {
  DomainName name;
  std::uint16_t qtype = kTypeA;
  std::uint16_t qclass = kClassIn;

  bool operator==(const Question&) const = default;
};

struct ResourceRecord {
  DomainName name;
  std::uint16_t rtype = kTypeA;
  std::uint16_t rclass = kClassIn;
  std::uint32_t ttl = 0;
  Bytes rdata;  // NS rdata holds an uncompressed encoded name after decode.

  bool operator==(const ResourceRecord&) const = default;

  static ResourceRecord a(const DomainName& name, const std::string& ipv4,
                          std::uint32_t ttl);
  static ResourceRecord ns(const DomainName& name, const DomainName& target,
                           std::uint32_t ttl);

  /// Dotted-quad view of A rdata; throws WireError on wrong size.
  std::string a_address() const;

  /// Target name carried in NS rdata.
  DomainName ns_target() const;
};

struct Message {
  std::uint16_t id = 0;
  std::uint16_t flags = 0;
  std::vector<Question> questions;
  std::vector<ResourceRecord> answers;
  std::vector<ResourceRecord> authorities;
  std::vector<ResourceRecord> additionals;

  bool qr() const { return flags & kFlagQr; }
  bool aa() const { return flags & kFlagAa; }
  bool rd() const { return flags & kFlagRd; }
  std::uint8_t rcode() const { return flags & 0x000F; }

  void set_qr(bool on) { set_bit(kFlagQr, on); }
  void set_aa(bool on) { set_bit(kFlagAa, on); }
  void set_rd(bool on) { set_bit(kFlagRd, on); }
  void set_rcode(std::uint8_t rc) { flags = (flags & ~0x000F) | (rc & 0x0F); }

  bool operator==(const Message&) const = default;

 private:
  void set_bit(std::uint16_t bit, bool on) {
    if (on) {
      flags |= bit;
    } else {
      flags &= ~bit;
    }
  }
};

/// Builds a recursion-desired question message.
Message make_query(std::uint16_t id, const DomainName& name, std::uint16_t qtype);

/// Builds a response skeleton echoing id and question.
Message make_response(const Message& query, std::uint8_t rcode);

/// Appends the uncompressed wire form of `name` to `out`.
void encode_name(const DomainName& name, Bytes& out);

/// Reads one possibly-compressed name starting at `offset` within `msg`.
/// Advances `offset` past the in-place portion. Pointer chains are bounded;
/// exceeding the bound throws WireError{CompressionLoop}.
DomainName decode_name(ByteView msg, size_t& offset);

/// Serializes a message. Never emits compression pointers.
/// Throws WireError{Oversize} if the result would exceed 65535 bytes.
Bytes encode_message(const Message& m);

/// Parses a full message. Rejects trailing bytes, truncation, bad labels,
/// and compression loops; never reads past the buffer.
Message decode_message(ByteView data);

}  // namespace pdot::wire
