// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <thread>

#include "pdot/gate/call_gate.hpp"
#include "pdot/util/net.hpp"

namespace pdot::host {

/// What the untrusted half does to traffic, for security experiments.
struct AdversaryMode {
  enum class Kind { None, DropInbound, Delay, Redirect };
  Kind kind = Kind::None;
  int delay_ms = 0;            // Delay
  util::Endpoint redirect_to;  // Redirect

  static AdversaryMode none() { return {}; }
  static AdversaryMode drop_inbound() { return {Kind::DropInbound, 0, {}}; }
  static AdversaryMode delay(int ms) { return {Kind::Delay, ms, {}}; }
  static AdversaryMode redirect(util::Endpoint to) {
    return {Kind::Redirect, 0, std::move(to)};
  }

  /// Parses "none", "drop_inbound", "delay:<ms>", "redirect:<host:port>".
  static AdversaryMode parse(const std::string& text);
};

struct BoundaryConfig {
  std::string bind_host = "127.0.0.1";
  std::uint16_t bind_port = 0;  // 0 = ephemeral
  size_t max_clients = 50;
};

/// The untrusted half of the resolver process. Owns every socket: the client
/// listener, per-session client sockets, and upstream connections opened on
/// behalf of the trusted component. Never parses TLS; all session bytes are
/// opaque. Implements the outward-call surface the trusted component uses.
class HostBoundary final : public gate::HostServices {
 public:
  HostBoundary(gate::CallGate& gate, BoundaryConfig cfg);
  ~HostBoundary() override;
  HostBoundary(const HostBoundary&) = delete;

  /// Must be called before start().
  void attach(gate::TrustedEndpoint& trusted);

  /// Counting facade over this boundary. The trusted component's outward
  /// calls must come through here so the gate sees every crossing.
  gate::HostServices& services() { return gated_; }

  /// Binds and begins accepting. Resets gate statistics.
  void start();
  void stop();

  std::uint16_t port() const;
  util::Endpoint endpoint() const;

  void set_adversary(AdversaryMode mode);
  AdversaryMode adversary() const;

  size_t active_relays() const;
  std::uint64_t refused_connections() const;

  // HostServices (invoked from the trusted side, through the gate wrapper).
  void client_send(gate::SessionId id, util::ByteView data) override;
  void session_established(gate::SessionId id) override;
  void session_finished(gate::SessionId id) override;
  gate::ConnId upstream_connect(const util::Endpoint& ep, int timeout_ms) override;
  void upstream_send(gate::ConnId conn, util::ByteView data) override;
  util::Bytes upstream_recv_exact(gate::ConnId conn, size_t n, int timeout_ms) override;
  void upstream_close(gate::ConnId conn) override;

 private:
  struct Relay {
    util::TcpSocket socket;
    std::mutex write_mu;
    std::atomic<bool> open{true};
  };

  void accept_loop();
  void relay_loop(std::shared_ptr<Relay> relay, gate::SessionId id);
  void redirect_loop(util::TcpSocket client, util::Endpoint target);
  std::shared_ptr<Relay> find_relay(gate::SessionId id) const;
  void spawn_worker(std::function<void()> fn);
  void worker_done();

  gate::CallGate& gate_;
  BoundaryConfig cfg_;
  gate::GatedHostServices gated_;
  std::unique_ptr<gate::GatedTrustedEndpoint> trusted_;

  std::unique_ptr<util::TcpListener> listener_;
  std::thread acceptor_;
  std::atomic<bool> running_{false};

  mutable std::mutex relays_mu_;
  std::map<gate::SessionId, std::shared_ptr<Relay>> relays_;

  // Relay/redirect threads run detached; stop() waits for this to reach zero.
  std::mutex worker_mu_;
  std::condition_variable worker_cv_;
  int workers_ = 0;

  mutable std::mutex upstream_mu_;
  std::map<gate::ConnId, std::shared_ptr<util::TcpSocket>> upstreams_;
  gate::ConnId next_conn_id_ = 0;

  mutable std::mutex adversary_mu_;
  AdversaryMode adversary_;

  std::atomic<std::uint64_t> refused_{0};
};

/// Tiny TCP control endpoint: on each connection, writes one JSON object
/// (gate statistics merged with the trusted component's counters) and closes.
class ControlServer {
 public:
  ControlServer(const std::string& host, std::uint16_t port, gate::CallGate& gate,
                gate::TrustedEndpoint& trusted);
  ~ControlServer();

  std::uint16_t port() const;
  void stop();

 private:
  void serve_loop();

  gate::CallGate& gate_;
  gate::TrustedEndpoint& trusted_;
  std::unique_ptr<util::TcpListener> listener_;
  std::thread thread_;
};

/// Client helper for ControlServer: connects, reads the JSON blob.
std::string fetch_control_stats(const util::Endpoint& ep, int timeout_ms = 2000);

}  // namespace pdot::host
