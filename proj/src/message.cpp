// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/wire/message.hpp"

#include <charconv>

namespace pdot::wire {

namespace {

constexpr size_t kMaxMessage = 65535;
constexpr int kMaxPointerFollows = 127;

std::uint8_t read_u8(ByteView d, size_t& off) {
  if (off + 1 > d.size()) throw WireError(WireErrc::Truncated, "truncated message");
  return d[off++];
}

std::uint16_t read_u16(ByteView d, size_t& off) {
  if (off + 2 > d.size()) throw WireError(WireErrc::Truncated, "truncated message");
  std::uint16_t v = static_cast<std::uint16_t>(d[off] << 8 | d[off + 1]);
  off += 2;
  return v;
}

std::uint32_t read_u32(ByteView d, size_t& off) {
  if (off + 4 > d.size()) throw WireError(WireErrc::Truncated, "truncated message");
  std::uint32_t v = static_cast<std::uint32_t>(d[off]) << 24 |
                    static_cast<std::uint32_t>(d[off + 1]) << 16 |
                    static_cast<std::uint32_t>(d[off + 2]) << 8 |
                    static_cast<std::uint32_t>(d[off + 3]);
  off += 4;
  return v;
}

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_u32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16 & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8 & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

Question decode_question(ByteView d, size_t& off) {
  Question q;
  q.name = decode_name(d, off);
  q.qtype = read_u16(d, off);
  q.qclass = read_u16(d, off);
  return q;
}

ResourceRecord decode_rr(ByteView d, size_t& off) {
  ResourceRecord rr;
  rr.name = decode_name(d, off);
  rr.rtype = read_u16(d, off);
  rr.rclass = read_u16(d, off);
  rr.ttl = read_u32(d, off);
  std::uint16_t rdlen = read_u16(d, off);
  if (off + rdlen > d.size()) {
    throw WireError(WireErrc::Truncated, "truncated rdata");
  }
  if (rr.rtype == kTypeNs) {
    // Decompress so the stored rdata stands alone.
    size_t pos = off;
    DomainName target = decode_name(d, pos);
    if (pos != off + rdlen) {
      throw WireError(WireErrc::BadRdata, "NS rdata length mismatch");
    }
    encode_name(target, rr.rdata);
  } else {
    if (rr.rtype == kTypeA && rdlen != 4) {
      throw WireError(WireErrc::BadRdata, "A rdata must be 4 bytes");
    }
    rr.rdata.assign(d.begin() + off, d.begin() + off + rdlen);
  }
  off += rdlen;
  return rr;
}

void encode_question(const Question& q, Bytes& out) {
  encode_name(q.name, out);
  put_u16(out, q.qtype);
  put_u16(out, q.qclass);
}

void encode_rr(const ResourceRecord& rr, Bytes& out) {
  encode_name(rr.name, out);
  put_u16(out, rr.rtype);
  put_u16(out, rr.rclass);
  put_u32(out, rr.ttl);
  if (rr.rdata.size() > kMaxMessage) {
    throw WireError(WireErrc::Oversize, "rdata too large");
  }
  put_u16(out, static_cast<std::uint16_t>(rr.rdata.size()));
  out.insert(out.end(), rr.rdata.begin(), rr.rdata.end());
}

}  // namespace

ResourceRecord ResourceRecord::a(const DomainName& name, const std::string& ipv4,
                                 std::uint32_t ttl) {
  ResourceRecord rr;
  rr.name = name;
  rr.rtype = kTypeA;
  rr.ttl = ttl;
  const char* p = ipv4.data();
  const char* end = p + ipv4.size();
  for (int i = 0; i < 4; ++i) {
    unsigned value = 256;
    auto [next, ec] = std::from_chars(p, end, value);
    if (ec != std::errc{} || value > 255 || (i < 3 && (next == end || *next != '.'))) {
      throw WireError(WireErrc::BadRdata, "not a dotted quad: " + ipv4);
    }
    rr.rdata.push_back(static_cast<std::uint8_t>(value));
    p = i < 3 ? next + 1 : next;
  }
  if (p != end) {
    throw WireError(WireErrc::BadRdata, "not a dotted quad: " + ipv4);
  }
  return rr;
}

ResourceRecord ResourceRecord::ns(const DomainName& name, const DomainName& target,
                                  std::uint32_t ttl) {
  ResourceRecord rr;
  rr.name = name;
  rr.rtype = kTypeNs;
  rr.ttl = ttl;
  encode_name(target, rr.rdata);
  return rr;
}

std::string ResourceRecord::a_address() const {
  if (rtype != kTypeA || rdata.size() != 4) {
    throw WireError(WireErrc::BadRdata, "record carries no IPv4 address");
  }
  std::string out;
  for (int i = 0; i < 4; ++i) {
    if (i) out += '.';
    out += std::to_string(rdata[i]);
  }
  return out;
}

DomainName ResourceRecord::ns_target() const {
  if (rtype != kTypeNs) {
    throw WireError(WireErrc::BadRdata, "record carries no NS target");
  }
  size_t off = 0;
  DomainName n = decode_name(ByteView(rdata), off);
  if (off != rdata.size()) {
    throw WireError(WireErrc::BadRdata, "NS rdata length mismatch");
  }
  return n;
}

Message make_query(std::uint16_t id, const DomainName& name, std::uint16_t qtype) {
  Message m;
  m.id = id;
  m.set_rd(true);
  m.questions.push_back(Question{name, qtype, kClassIn});
  return m;
}

Message make_response(const Message& query, std::uint8_t rcode) {
  Message m;
  m.id = query.id;
  m.flags = query.flags;
  m.set_qr(true);
  m.set_rcode(rcode);
  m.questions = query.questions;
  return m;
}

void encode_name(const DomainName& name, Bytes& out) {
  for (const auto& label : name.labels()) {
    out.push_back(static_cast<std::uint8_t>(label.size()));
    out.insert(out.end(), label.begin(), label.end());
  }
  out.push_back(0);
}

DomainName decode_name(ByteView msg, size_t& offset) {
  std::vector<std::string> labels;
  size_t pos = offset;
  size_t wire = 1;
  int follows = 0;
  bool jumped = false;

  for (;;) {
    std::uint8_t len = read_u8(msg, pos);
    if (len == 0) {
      if (!jumped) offset = pos;
      break;
    }
    if ((len & 0xC0) == 0xC0) {
      std::uint8_t low = read_u8(msg, pos);
      size_t target = static_cast<size_t>(len & 0x3F) << 8 | low;
      if (target >= msg.size()) {
        throw WireError(WireErrc::BadPointer, "compression pointer out of range");
      }
      if (++follows > kMaxPointerFollows) {
        throw WireError(WireErrc::CompressionLoop, "compression pointer chain too long");
      }
      if (!jumped) {
        offset = pos;
        jumped = true;
      }
      pos = target;
      continue;
    }
    if (len & 0xC0) {
      throw WireError(WireErrc::BadLabel, "unsupported label type");
    }
    if (pos + len > msg.size()) {
      throw WireError(WireErrc::Truncated, "truncated label");
    }
    wire += 1 + len;
    if (wire > 255) {
      throw WireError(WireErrc::NameTooLong, "name exceeds 255 wire bytes");
    }
    labels.emplace_back(reinterpret_cast<const char*>(msg.data()) + pos, len);
    pos += len;
  }
  return DomainName::from_labels(std::move(labels));
}

Bytes encode_message(const Message& m) {
  if (m.questions.size() > 0xFFFF || m.answers.size() > 0xFFFF ||
      m.authorities.size() > 0xFFFF || m.additionals.size() > 0xFFFF) {
    throw WireError(WireErrc::Oversize, "section count exceeds 16 bits");
  }
  Bytes out;
  put_u16(out, m.id);
  put_u16(out, m.flags);
  put_u16(out, static_cast<std::uint16_t>(m.questions.size()));
  put_u16(out, static_cast<std::uint16_t>(m.answers.size()));
  put_u16(out, static_cast<std::uint16_t>(m.authorities.size()));
  put_u16(out, static_cast<std::uint16_t>(m.additionals.size()));
  for (const auto& q : m.questions) encode_question(q, out);
  for (const auto& rr : m.answers) encode_rr(rr, out);
  for (const auto& rr : m.authorities) encode_rr(rr, out);
  for (const auto& rr : m.additionals) encode_rr(rr, out);
  if (out.size() > kMaxMessage) {
    throw WireError(WireErrc::Oversize, "message exceeds 65535 bytes");
  }
  return out;
}

Message decode_message(ByteView data) {
  if (data.size() > kMaxMessage) {
    throw WireError(WireErrc::Oversize, "message exceeds 65535 bytes");
  }
  size_t off = 0;
  Message m;
  m.id = read_u16(data, off);
  m.flags = read_u16(data, off);
  std::uint16_t qd = read_u16(data, off);
  std::uint16_t an = read_u16(data, off);
  std::uint16_t ns = read_u16(data, off);
  std::uint16_t ar = read_u16(data, off);
  for (int i = 0; i < qd; ++i) m.questions.push_back(decode_question(data, off));
  for (int i = 0; i < an; ++i) m.answers.push_back(decode_rr(data, off));
  for (int i = 0; i < ns; ++i) m.authorities.push_back(decode_rr(data, off));
  for (int i = 0; i < ar; ++i) m.additionals.push_back(decode_rr(data, off));
  if (off != data.size()) {
    throw WireError(WireErrc::TrailingBytes, "bytes after final record");
  }
  return m;
}

}  // namespace pdot::wire
