// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/gate/call_gate.hpp"

#include <algorithm>

#include <json.hpp>

namespace pdot::gate {

std::uint64_t CallGateStats::total_in() const {
  std::uint64_t n = 0;
  for (const auto& [_, v] : calls_in) n += v;
  return n;
}

std::uint64_t CallGateStats::total_out() const {
  std::uint64_t n = 0;
  for (const auto& [_, v] : calls_out) n += v;
  return n;
}

std::uint64_t CallGateStats::in(const std::string& purpose) const {
  auto it = calls_in.find(purpose);
  return it == calls_in.end() ? 0 : it->second;
}

std::uint64_t CallGateStats::out(const std::string& purpose) const {
  auto it = calls_out.find(purpose);
  return it == calls_out.end() ? 0 : it->second;
}

std::string CallGateStats::to_json() const {
  nlohmann::json j;
  j["calls_in"] = calls_in;
  j["calls_out"] = calls_out;
  j["total_in"] = total_in();
  j["total_out"] = total_out();
  return j.dump();
}

void CallGate::crossed_in(const char* purpose, ByteView payload) {
  std::lock_guard lock(mu_);
  ++stats_.calls_in[purpose];
  if (tap_ && !payload.empty()) tapped_.emplace_back(payload.begin(), payload.end());
}

void CallGate::crossed_out(const char* purpose, ByteView payload) {
  std::lock_guard lock(mu_);
  ++stats_.calls_out[purpose];
  if (tap_ && !payload.empty()) tapped_.emplace_back(payload.begin(), payload.end());
}

CallGateStats CallGate::snapshot() const {
  std::lock_guard lock(mu_);
  return stats_;
}

void CallGate::reset() {
  std::lock_guard lock(mu_);
  stats_ = CallGateStats{};
  tapped_.clear();
}

void CallGate::set_tap(bool enabled) {
  std::lock_guard lock(mu_);
  tap_ = enabled;
  if (!enabled) tapped_.clear();
}

bool CallGate::tap_enabled() const {
  std::lock_guard lock(mu_);
  return tap_;
}

void CallGate::record_tap(ByteView payload) {
  std::lock_guard lock(mu_);
  if (tap_ && !payload.empty()) tapped_.emplace_back(payload.begin(), payload.end());
}

bool CallGate::tap_contains(ByteView needle) const {
  std::lock_guard lock(mu_);
  for (const auto& payload : tapped_) {
    if (util::contains(payload, needle)) return true;
  }
  return false;
}

size_t CallGate::tap_payloads() const {
  std::lock_guard lock(mu_);
  return tapped_.size();
}

size_t CallGate::tap_bytes() const {
  std::lock_guard lock(mu_);
  size_t n = 0;
  for (const auto& payload : tapped_) n += payload.size();
  return n;
}

bool GatedHostServices::is_established(SessionId id) {
  std::lock_guard lock(mu_);
  auto it = established_.find(id);
  return it != established_.end() && it->second;
}

void GatedHostServices::client_send(SessionId id, ByteView data) {
  gate_.crossed_out(is_established(id) ? kPurposeClientData : kPurposeSession, data);
  inner_.client_send(id, data);
}

void GatedHostServices::session_established(SessionId id) {
  {
    std::lock_guard lock(mu_);
    established_[id] = true;
  }
  gate_.crossed_out(kPurposeNotify);
  inner_.session_established(id);
}

void GatedHostServices::session_finished(SessionId id) {
  {
    std::lock_guard lock(mu_);
    established_.erase(id);
  }
  gate_.crossed_out(kPurposeNotify);
  inner_.session_finished(id);
}

ConnId GatedHostServices::upstream_connect(const util::Endpoint& ep, int timeout_ms) {
  gate_.crossed_out(kPurposeUpstreamConnect);
  return inner_.upstream_connect(ep, timeout_ms);
}

void GatedHostServices::upstream_send(ConnId conn, ByteView data) {
  gate_.crossed_out(kPurposeUpstreamSend, data);
  inner_.upstream_send(conn, data);
}

Bytes GatedHostServices::upstream_recv_exact(ConnId conn, size_t n, int timeout_ms) {
  gate_.crossed_out(kPurposeUpstreamRecv);
  Bytes data = inner_.upstream_recv_exact(conn, n, timeout_ms);
  // The host handled these bytes on the return path; expose them to the tap.
  gate_.record_tap(data);
  return data;
}

void GatedHostServices::upstream_close(ConnId conn) {
  gate_.crossed_out(kPurposeUpstreamClose);
  inner_.upstream_close(conn);
}

SessionId GatedTrustedEndpoint::session_open() {
  gate_.crossed_in(kPurposeSessionOpen);
  return inner_.session_open();
}

void GatedTrustedEndpoint::session_bytes(SessionId id, ByteView data) {
  bool established;
  {
    std::lock_guard lock(mu_);
    auto it = established_.find(id);
    established = it != established_.end() && it->second;
  }
  gate_.crossed_in(established ? kPurposeClientData : kPurposeSession, data);
  inner_.session_bytes(id, data);
}

void GatedTrustedEndpoint::session_close(SessionId id) {
  gate_.crossed_in(kPurposeSessionClose);
  forget(id);
  inner_.session_close(id);
}

std::string GatedTrustedEndpoint::control_stats_json() {
  gate_.crossed_in(kPurposeControl);
  return inner_.control_stats_json();
}

void GatedTrustedEndpoint::mark_established(SessionId id) {
  std::lock_guard lock(mu_);
  established_[id] = true;
}

void GatedTrustedEndpoint::forget(SessionId id) {
  std::lock_guard lock(mu_);
  established_.erase(id);
}

}  // namespace pdot::gate
