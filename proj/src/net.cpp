// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/util/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace pdot::util {

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
  throw NetError(what + ": " + std::strerror(errno));
}

sockaddr_in make_addr(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1) {
    throw NetError("not an IPv4 address: " + ep.host);
  }
  return addr;
}

Endpoint endpoint_from(const sockaddr_in& addr) {
  char buf[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &addr.sin_addr, buf, sizeof(buf));
  return Endpoint{buf, ntohs(addr.sin_port)};
}

void set_nonblocking(int fd, bool on) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  if (flags < 0) throw_errno("fcntl(F_GETFL)");
  if (on) {
    flags |= O_NONBLOCK;
  } else {
    flags &= ~O_NONBLOCK;
  }
  if (::fcntl(fd, F_SETFL, flags) < 0) throw_errno("fcntl(F_SETFL)");
}

/// Waits for events on fd. Returns false on timeout.
bool wait_fd(int fd, short events, int timeout_ms) {
  pollfd pfd{fd, events, 0};
  for (;;) {
    int rc = ::poll(&pfd, 1, timeout_ms);
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw_errno("poll");
  }
}

}  // namespace

TcpSocket& TcpSocket::operator=(TcpSocket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

TcpSocket::~TcpSocket() { close(); }

TcpSocket TcpSocket::connect(const Endpoint& ep, int timeout_ms) {
  sockaddr_in addr = make_addr(ep);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw_errno("socket");
  TcpSocket sock(fd);

  set_nonblocking(fd, true);
  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  if (rc < 0) {
    if (errno != EINPROGRESS) throw_errno("connect " + ep.str());
    if (!wait_fd(fd, POLLOUT, timeout_ms)) {
      throw NetTimeout("connect timeout: " + ep.str());
    }
    int err = 0;
    socklen_t len = sizeof(err);
    if (::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) < 0) {
      throw_errno("getsockopt(SO_ERROR)");
    }
    if (err != 0) {
      throw NetError("connect " + ep.str() + ": " + std::strerror(err));
    }
  }
  set_nonblocking(fd, false);

  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return sock;
}

Bytes TcpSocket::recv_some(size_t max, int timeout_ms) const {
  if (!wait_fd(fd_, POLLIN, timeout_ms)) throw NetTimeout("recv timeout");
  Bytes buf(max);
  for (;;) {
    ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n >= 0) {
      buf.resize(static_cast<size_t>(n));
      return buf;
    }
    if (errno != EINTR) throw_errno("recv");
  }
}

Bytes TcpSocket::recv_exact(size_t n, int timeout_ms) const {
  Bytes out;
  out.reserve(n);
  while (out.size() < n) {
    Bytes chunk = recv_some(n - out.size(), timeout_ms);
    if (chunk.empty()) throw NetError("connection closed mid-message");
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

void TcpSocket::send_all(ByteView data) const {
  size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("send");
    }
    off += static_cast<size_t>(n);
  }
}

void TcpSocket::set_linger_reset() const {
  linger lg{1, 0};
  ::setsockopt(fd_, SOL_SOCKET, SO_LINGER, &lg, sizeof(lg));
}

void TcpSocket::shutdown_both() const {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void TcpSocket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

Endpoint TcpSocket::peer() const {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (::getpeername(fd_, reinterpret_cast<sockaddr*>(&addr), &len) < 0) {
    throw_errno("getpeername");
  }
  return endpoint_from(addr);
}

Endpoint TcpSocket::local() const {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) < 0) {
    throw_errno("getsockname");
  }
  return endpoint_from(addr);
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) : host_(host) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw_errno("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr = make_addr(Endpoint{host, port});
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    throw_errno("bind " + host + ":" + std::to_string(port));
  }
  if (::listen(fd_, 128) < 0) throw_errno("listen");

  socklen_t len = sizeof(addr);
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) < 0) {
    throw_errno("getsockname");
  }
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() { stop(); }

Endpoint TcpListener::endpoint() const { return Endpoint{host_, port_}; }

std::optional<TcpSocket> TcpListener::accept() {
  while (!stopped_.load(std::memory_order_acquire)) {
    // Short poll so stop() takes effect promptly even with no connections.
    if (!wait_fd(fd_, POLLIN, 100)) continue;
    int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return TcpSocket(fd);
    }
    if (errno == EINTR || errno == ECONNABORTED) continue;
    if (stopped_.load(std::memory_order_acquire)) break;
    throw_errno("accept");
  }
  return std::nullopt;
}

void TcpListener::stop() {
  bool was = stopped_.exchange(true, std::memory_order_acq_rel);
  if (!was && fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

std::uint16_t pick_free_port() {
  TcpListener probe("127.0.0.1", 0);
  std::uint16_t p = probe.port();
  return p;
}

}  // namespace pdot::util
