// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/host/boundary.hpp"

#include <json.hpp>

namespace pdot::host {

AdversaryMode AdversaryMode::parse(const std::string& text) {
  if (text.empty() || text == "none") return none();
  if (text == "drop_inbound") return drop_inbound();
  if (text.starts_with("delay:")) return delay(std::stoi(text.substr(6)));
  if (text.starts_with("redirect:")) {
    return redirect(util::Endpoint::parse(text.substr(9)));
  }
  throw std::invalid_argument("unknown adversary mode: " + text);
}

HostBoundary::HostBoundary(gate::CallGate& gate, BoundaryConfig cfg)
    : gate_(gate), cfg_(std::move(cfg)), gated_(gate, *this) {}

HostBoundary::~HostBoundary() { stop(); }

void HostBoundary::attach(gate::TrustedEndpoint& trusted) {
  trusted_ = std::make_unique<gate::GatedTrustedEndpoint>(gate_, trusted);
}

void HostBoundary::spawn_worker(std::function<void()> fn) {
  {
    std::lock_guard lock(worker_mu_);
    ++workers_;
  }
  std::thread([this, fn = std::move(fn)] {
    fn();
    worker_done();
  }).detach();
}

void HostBoundary::worker_done() {
  std::lock_guard lock(worker_mu_);
  --workers_;
  worker_cv_.notify_all();
}

void HostBoundary::start() {
  if (!trusted_) throw std::logic_error("attach() must precede start()");
  if (running_.exchange(true)) return;
  gate_.reset();
  listener_ = std::make_unique<util::TcpListener>(cfg_.bind_host, cfg_.bind_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

void HostBoundary::stop() {
  if (!running_.exchange(false)) return;
  if (listener_) listener_->stop();
  if (acceptor_.joinable()) acceptor_.join();

  // Wake every relay blocked in recv; they unwind and close their sessions.
  {
    std::lock_guard lock(relays_mu_);
    for (auto& [id, relay] : relays_) {
      relay->open.store(false);
      relay->socket.shutdown_both();
    }
  }
  {
    std::unique_lock lock(worker_mu_);
    worker_cv_.wait(lock, [&] { return workers_ == 0; });
  }
  // Wake trusted-side threads blocked on upstream reads. Entries stay until
  // the trusted side calls upstream_close.
  std::lock_guard lock(upstream_mu_);
  for (auto& [id, sock] : upstreams_) sock->shutdown_both();
}

std::uint16_t HostBoundary::port() const {
  return listener_ ? listener_->port() : 0;
}

util::Endpoint HostBoundary::endpoint() const {
  return util::Endpoint{cfg_.bind_host, port()};
}

void HostBoundary::set_adversary(AdversaryMode mode) {
  std::lock_guard lock(adversary_mu_);
  adversary_ = std::move(mode);
}

AdversaryMode HostBoundary::adversary() const {
  std::lock_guard lock(adversary_mu_);
  return adversary_;
}

size_t HostBoundary::active_relays() const {
  std::lock_guard lock(relays_mu_);
  return relays_.size();
}

std::uint64_t HostBoundary::refused_connections() const { return refused_.load(); }

void HostBoundary::accept_loop() {
  while (running_.load(std::memory_order_acquire)) {
    std::optional<util::TcpSocket> sock = listener_->accept();
    if (!sock) break;

    AdversaryMode mode = adversary();
    if (mode.kind == AdversaryMode::Kind::Redirect) {
      auto shared_sock = std::make_shared<util::TcpSocket>(std::move(*sock));
      spawn_worker([this, shared_sock, target = mode.redirect_to] {
        redirect_loop(std::move(*shared_sock), target);
      });
      continue;
    }

    {
      std::lock_guard lock(relays_mu_);
      if (relays_.size() >= cfg_.max_clients) {
        refused_.fetch_add(1);
        continue;  // socket closes on scope exit: connection refused
      }
    }

    gate::SessionId id;
    try {
      id = trusted_->session_open();
    } catch (const std::exception&) {
      refused_.fetch_add(1);
      continue;
    }

    auto relay = std::make_shared<Relay>();
    relay->socket = std::move(*sock);
    {
      std::lock_guard lock(relays_mu_);
      relays_[id] = relay;
    }
    spawn_worker([this, relay, id] { relay_loop(relay, id); });
  }
}

void HostBoundary::relay_loop(std::shared_ptr<Relay> relay, gate::SessionId id) {
  // Inbound direction: socket -> gate. The outbound direction happens on
  // trusted-side threads through client_send.
  for (;;) {
    if (!running_.load(std::memory_order_acquire) || !relay->open.load()) break;
    util::Bytes data;
    try {
      data = relay->socket.recv_some(16384, 200);
    } catch (const util::NetTimeout&) {
      continue;  // poll again; also notices shutdown
    } catch (const util::NetError&) {
      break;
    }
    if (data.empty()) break;  // orderly EOF

    AdversaryMode mode = adversary();
    if (mode.kind == AdversaryMode::Kind::DropInbound) continue;
    if (mode.kind == AdversaryMode::Kind::Delay && mode.delay_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(mode.delay_ms));
    }

    try {
      trusted_->session_bytes(id, data);
    } catch (const std::exception&) {
      break;  // unknown/overloaded session
    }
  }

  relay->open.store(false);
  try {
    trusted_->session_close(id);
  } catch (const std::exception&) {
  }
  std::lock_guard lock(relays_mu_);
  relays_.erase(id);
}

void HostBoundary::redirect_loop(util::TcpSocket client, util::Endpoint target) {
  // Byte-for-byte TCP proxy; the client performs TLS with the target.
  util::TcpSocket backend;
  try {
    backend = util::TcpSocket::connect(target, 2000);
  } catch (const std::exception&) {
    return;
  }
  std::atomic<bool> done{false};
  std::thread back_to_client([&] {
    while (!done.load()) {
      try {
        util::Bytes data = backend.recv_some(16384, 200);
        if (data.empty()) break;
        client.send_all(data);
      } catch (const util::NetTimeout&) {
        continue;
      } catch (const util::NetError&) {
        break;
      }
    }
    done.store(true);
    client.shutdown_both();
  });
  while (!done.load() && running_.load(std::memory_order_acquire)) {
    try {
      util::Bytes data = client.recv_some(16384, 200);
      if (data.empty()) break;
      backend.send_all(data);
    } catch (const util::NetTimeout&) {
      continue;
    } catch (const util::NetError&) {
      break;
    }
  }
  done.store(true);
  backend.shutdown_both();
  back_to_client.join();
}

std::shared_ptr<HostBoundary::Relay> HostBoundary::find_relay(gate::SessionId id) const {
  std::lock_guard lock(relays_mu_);
  auto it = relays_.find(id);
  return it == relays_.end() ? nullptr : it->second;
}

void HostBoundary::client_send(gate::SessionId id, util::ByteView data) {
  std::shared_ptr<Relay> relay = find_relay(id);
  if (!relay || !relay->open.load()) return;  // client is gone; drop silently
  std::lock_guard lock(relay->write_mu);
  try {
    relay->socket.send_all(data);
  } catch (const util::NetError&) {
    relay->open.store(false);
    relay->socket.shutdown_both();
  }
}

void HostBoundary::session_established(gate::SessionId id) {
  if (trusted_) trusted_->mark_established(id);
}

void HostBoundary::session_finished(gate::SessionId id) {
  std::shared_ptr<Relay> relay = find_relay(id);
  if (relay) {
    relay->open.store(false);
    relay->socket.shutdown_both();  // wakes the relay thread
  }
}

gate::ConnId HostBoundary::upstream_connect(const util::Endpoint& ep, int timeout_ms) {
  auto sock = std::make_shared<util::TcpSocket>(util::TcpSocket::connect(ep, timeout_ms));
  // RST on close: benchmark workloads would otherwise exhaust ports with
  // TIME_WAIT entries, one per resolution hop.
  sock->set_linger_reset();
  std::lock_guard lock(upstream_mu_);
  gate::ConnId id = ++next_conn_id_;
  upstreams_[id] = std::move(sock);
  return id;
}

void HostBoundary::upstream_send(gate::ConnId conn, util::ByteView data) {
  std::shared_ptr<util::TcpSocket> sock;
  {
    std::lock_guard lock(upstream_mu_);
    auto it = upstreams_.find(conn);
    if (it == upstreams_.end()) throw util::NetError("unknown upstream connection");
    sock = it->second;
  }
  sock->send_all(data);
}

util::Bytes HostBoundary::upstream_recv_exact(gate::ConnId conn, size_t n,
                                              int timeout_ms) {
  std::shared_ptr<util::TcpSocket> sock;
  {
    std::lock_guard lock(upstream_mu_);
    auto it = upstreams_.find(conn);
    if (it == upstreams_.end()) throw util::NetError("unknown upstream connection");
    sock = it->second;
  }
  return sock->recv_exact(n, timeout_ms);
}

void HostBoundary::upstream_close(gate::ConnId conn) {
  std::lock_guard lock(upstream_mu_);
  upstreams_.erase(conn);
}

ControlServer::ControlServer(const std::string& host, std::uint16_t port,
                             gate::CallGate& gate, gate::TrustedEndpoint& trusted)
    : gate_(gate), trusted_(trusted) {
  listener_ = std::make_unique<util::TcpListener>(host, port);
  thread_ = std::thread([this] { serve_loop(); });
}

ControlServer::~ControlServer() { stop(); }

std::uint16_t ControlServer::port() const { return listener_->port(); }

void ControlServer::stop() {
  listener_->stop();
  if (thread_.joinable()) thread_.join();
}

void ControlServer::serve_loop() {
  for (;;) {
    std::optional<util::TcpSocket> sock = listener_->accept();
    if (!sock) return;
    try {
      nlohmann::json j;
      j["gate"] = nlohmann::json::parse(gate_.snapshot().to_json());
      j["resolver"] = nlohmann::json::parse(trusted_.control_stats_json());
      std::string text = j.dump() + "\n";
      sock->send_all(util::to_bytes(text));
    } catch (const std::exception&) {
    }
  }
}

std::string fetch_control_stats(const util::Endpoint& ep, int timeout_ms) {
  util::TcpSocket sock = util::TcpSocket::connect(ep, timeout_ms);
  std::string out;
  for (;;) {
    util::Bytes chunk;
    try {
      chunk = sock.recv_some(4096, timeout_ms);
    } catch (const util::NetError&) {
      break;
    }
    if (chunk.empty()) break;
    out += util::to_string(chunk);
  }
  return out;
}

}  // namespace pdot::host
