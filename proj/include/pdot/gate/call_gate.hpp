// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "pdot/util/bytes.hpp"
#include "pdot/util/endpoint.hpp"

namespace pdot::gate {

using util::Bytes;
using util::ByteView;

using SessionId = std::uint64_t;
using ConnId = std::uint64_t;

// Crossing purposes. client_data counts only ciphertext of established
// sessions: queries in, answers out.
inline constexpr const char* kPurposeSessionOpen = "session_open";
inline constexpr const char* kPurposeSessionClose = "session_close";
inline constexpr const char* kPurposeSession = "session";  // handshake/alert bytes
inline constexpr const char* kPurposeClientData = "client_data";
inline constexpr const char* kPurposeControl = "control";
inline constexpr const char* kPurposeNotify = "notify";
inline constexpr const char* kPurposeUpstreamConnect = "upstream_connect";
inline constexpr const char* kPurposeUpstreamSend = "upstream_send";
inline constexpr const char* kPurposeUpstreamRecv = "upstream_recv";
inline constexpr const char* kPurposeUpstreamClose = "upstream_close";

struct CallGateStats {
  std::map<std::string, std::uint64_t> calls_in;   // host -> trusted, by purpose
  std::map<std::string, std::uint64_t> calls_out;  // trusted -> host, by purpose

  std::uint64_t total_in() const;
  std::uint64_t total_out() const;
  std::uint64_t in(const std::string& purpose) const;
  std::uint64_t out(const std::string& purpose) const;
  std::string to_json() const;
};

/// Counts every host<->trusted transition and, when tapping, records the
/// payload bytes the host side got to see.
class CallGate {
 public:
  void crossed_in(const char* purpose, ByteView payload = {});
  void crossed_out(const char* purpose, ByteView payload = {});

  CallGateStats snapshot() const;
  void reset();

  void set_tap(bool enabled);
  bool tap_enabled() const;

  /// Stores a payload in the tap without counting a crossing (for data that
  /// reaches the host on the return path of an outward call).
  void record_tap(ByteView payload);

  /// True when any single tapped payload contains `needle`.
  bool tap_contains(ByteView needle) const;
  size_t tap_payloads() const;
  size_t tap_bytes() const;

 private:
  mutable std::mutex mu_;
  CallGateStats stats_;
  bool tap_ = false;
  std::vector<Bytes> tapped_;
};

/// Installed by the host into the trusted component; every call is an
/// OCALL analogue and is counted by the gate wrapper.
class HostServices {
 public:
  virtual ~HostServices() = default;

  /// Sends bytes to the session's client socket.
  virtual void client_send(SessionId id, ByteView data) = 0;
  /// Session handshake completed; subsequent inbound bytes are client data.
  virtual void session_established(SessionId id) = 0;
  /// Trusted side will emit nothing further for this session.
  virtual void session_finished(SessionId id) = 0;

  virtual ConnId upstream_connect(const util::Endpoint& ep, int timeout_ms) = 0;
  virtual void upstream_send(ConnId conn, ByteView data) = 0;
  /// Exactly n bytes or throws; empty result never returned.
  virtual Bytes upstream_recv_exact(ConnId conn, size_t n, int timeout_ms) = 0;
  virtual void upstream_close(ConnId conn) = 0;
};

/// The trusted component's inward-facing surface; every call is an ECALL
/// analogue and is counted by the gate wrapper.
class TrustedEndpoint {
 public:
  virtual ~TrustedEndpoint() = default;

  /// Throws on capacity exhaustion.
  virtual SessionId session_open() = 0;
  virtual void session_bytes(SessionId id, ByteView data) = 0;
  virtual void session_close(SessionId id) = 0;
  virtual std::string control_stats_json() = 0;
};

/// Counting wrapper handed to the trusted component. client_send crossings
/// are tagged "session" until session_established passes through, then
/// "client_data"; no TLS parsing is involved on the host side.
class GatedHostServices final : public HostServices {
 public:
  GatedHostServices(CallGate& gate, HostServices& inner) : gate_(gate), inner_(inner) {}

  void client_send(SessionId id, ByteView data) override;
  void session_established(SessionId id) override;
  void session_finished(SessionId id) override;
  ConnId upstream_connect(const util::Endpoint& ep, int timeout_ms) override;
  void upstream_send(ConnId conn, ByteView data) override;
  Bytes upstream_recv_exact(ConnId conn, size_t n, int timeout_ms) override;
  void upstream_close(ConnId conn) override;

 private:
  bool is_established(SessionId id);

  CallGate& gate_;
  HostServices& inner_;
  std::mutex mu_;
  std::map<SessionId, bool> established_;
};

/// Counting wrapper used by the host when calling into the trusted component.
class GatedTrustedEndpoint final : public TrustedEndpoint {
 public:
  GatedTrustedEndpoint(CallGate& gate, TrustedEndpoint& inner)
      : gate_(gate), inner_(inner) {}

  SessionId session_open() override;
  void session_bytes(SessionId id, ByteView data) override;
  void session_close(SessionId id) override;
  std::string control_stats_json() override;

  /// Host-side record of which sessions finished their handshake, used to
  /// tag inbound bytes without parsing TLS.
  void mark_established(SessionId id);
  void forget(SessionId id);

 private:
  CallGate& gate_;
  TrustedEndpoint& inner_;
  std::mutex mu_;
  std::map<SessionId, bool> established_;
};

}  // namespace pdot::gate
