// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <atomic>
#include <optional>
#include <stdexcept>

#include "pdot/util/bytes.hpp"
#include "pdot/util/endpoint.hpp"

namespace pdot::util {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NetTimeout : public NetError {
 public:
  using NetError::NetError;
};

/// Move-only RAII wrapper over a connected TCP socket.
class TcpSocket {
 public:
  TcpSocket() = default;
  explicit TcpSocket(int fd) : fd_(fd) {}
  TcpSocket(TcpSocket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
  TcpSocket& operator=(TcpSocket&& other) noexcept;
  ~TcpSocket();
  TcpSocket(const TcpSocket&) = delete;
  TcpSocket& operator=(const TcpSocket&) = delete;

  static TcpSocket connect(const Endpoint& ep, int timeout_ms);

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }

  /// Receives up to `max` bytes. Returns an empty vector on orderly EOF.
  /// timeout_ms < 0 blocks indefinitely. Throws NetTimeout / NetError.
  Bytes recv_some(size_t max, int timeout_ms) const;

  /// Receives exactly `n` bytes; throws NetError on premature EOF.
  Bytes recv_exact(size_t n, int timeout_ms) const;

  void send_all(ByteView data) const;

  /// Close with RST instead of FIN so test workloads do not pile up
  /// TIME_WAIT sockets.
  void set_linger_reset() const;

  void shutdown_both() const;
  void close();

  Endpoint peer() const;
  Endpoint local() const;

 private:
  int fd_ = -1;
};

/// Listening socket; accept() can be unblocked from another thread via stop().
class TcpListener {
 public:
  TcpListener() = default;
  TcpListener(const std::string& host, std::uint16_t port);  // port 0 = ephemeral
  ~TcpListener();
  TcpListener(TcpListener&&) = delete;

  std::uint16_t port() const { return port_; }
  Endpoint endpoint() const;

  /// Blocks until a connection arrives or stop() is called (returns nullopt).
  std::optional<TcpSocket> accept();

  void stop();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::string host_;
  std::atomic<bool> stopped_{false};
};

/// Reserves a currently-free TCP port by binding to port 0 and closing.
std::uint16_t pick_free_port();

}  // namespace pdot::util
