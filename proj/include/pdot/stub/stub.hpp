// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <condition_variable>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "pdot/attest/attest.hpp"
#include "pdot/tlsio/tls.hpp"
#include "pdot/util/endpoint.hpp"
#include "pdot/util/net.hpp"
#include "pdot/wire/message.hpp"

namespace pdot::stub {

class StubError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Query sent, no answer within the budget. Never triggers failover.
class StubTimeout : public StubError {
 public:
  using StubError::StubError;
};

/// The server's certificate failed attestation verification or the trust
/// decision; the handshake was aborted before any query byte left.
class VerifyFailure : public StubError {
 public:
  using StubError::StubError;
};

/// The TLS session ended while queries were outstanding.
class SessionClosed : public StubError {
 public:
  using StubError::StubError;
};

struct StubConfig {
  std::vector<util::Endpoint> resolvers;  // tried in order
  attest::TrustPolicy policy;
  int query_timeout_ms = 5000;
  std::string legacy_ca_pem;  // optional chain check when attestation is off

  void validate() const;
  static StubConfig load_file(const std::string& path);
};

/// One TLS session whose handshake already passed verification. Queries may
/// be pipelined from several threads; responses are matched by DNS id.
class VerifiedSession {
 public:
  /// Connects, handshakes, and verifies within `deadline`. Throws
  /// VerifyFailure / NetError / StubTimeout accordingly.
  VerifiedSession(const util::Endpoint& ep, const tlsio::TlsContext& ctx,
                  std::chrono::steady_clock::time_point deadline);
  ~VerifiedSession();
  VerifiedSession(const VerifiedSession&) = delete;

  /// Sends `query` and waits for the matching response. The returned message
  /// always carries `query.id`. Throws StubTimeout or SessionClosed.
  wire::Message ask(const wire::Message& query, int timeout_ms);

  /// Pipelined send. `done` runs on the session's reader thread with the
  /// response (id restored), or nullopt if the session closes first; it must
  /// return quickly. Throws SessionClosed when the session is already down.
  using AnswerFn = std::function<void(std::optional<wire::Message>)>;
  void ask_callback(const wire::Message& query, AnswerFn done);

  bool alive() const;
  const util::Endpoint& endpoint() const { return endpoint_; }
  const tlsio::VerifyOutcome& verify_outcome() const { return engine_.verify_outcome(); }

 private:
  void pump_loop();
  void send_pending_ciphertext();
  void fail_all_pending();
  std::uint16_t enqueue_locked(const wire::Message& query, AnswerFn done);
  void send_query(wire::Message on_wire);

  util::Endpoint endpoint_;
  util::TcpSocket sock_;
  tlsio::TlsEngine engine_;

  std::mutex write_mu_;  // serializes write_frame + ciphertext send

  struct Pending {
    std::uint16_t caller_id = 0;  // restored onto the reply
    AnswerFn done;
  };

  mutable std::mutex mu_;
  std::condition_variable state_cv_;
  bool dead_ = false;
  std::map<std::uint16_t, Pending> pending_;

  std::atomic<bool> stopping_{false};
  std::thread pump_;
};

/// Keeps at most one verified session per endpoint; handshakes to the same
/// endpoint are serialized.
class ConnectionPool {
 public:
  explicit ConnectionPool(tlsio::TlsContext ctx) : ctx_(std::move(ctx)) {}

  std::shared_ptr<VerifiedSession> get(const util::Endpoint& ep,
                                       std::chrono::steady_clock::time_point deadline);
  /// Removes `s` if it is still the pooled session for its endpoint.
  void drop(const std::shared_ptr<VerifiedSession>& s);
  void clear();
  size_t live_sessions() const;

 private:
  tlsio::TlsContext ctx_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<VerifiedSession>> sessions_;
  std::map<std::string, std::shared_ptr<std::mutex>> handshake_mu_;
};

/// The verifying client: pool reuse, failover across resolvers, SERVFAIL
/// synthesis on timeout.
class Stub {
 public:
  explicit Stub(StubConfig cfg);

  /// Resolves `query` against the configured resolvers. Always returns a
  /// message with the query's id; rcode SERVFAIL when resolution failed.
  wire::Message resolve(const wire::Message& query);
  wire::Message resolve(const std::string& name, std::uint16_t qtype);

  /// Unpooled session to `ep` (or the first resolver), for callers that must
  /// pay the handshake per query.
  std::shared_ptr<VerifiedSession> fresh_session();
  std::shared_ptr<VerifiedSession> fresh_session(const util::Endpoint& ep);

  /// Why the most recent resolve returned SERVFAIL (empty when it didn't).
  std::string last_failure() const;

  const StubConfig& config() const { return cfg_; }
  ConnectionPool& pool() { return pool_; }

 private:
  StubConfig cfg_;
  tlsio::TlsContext ctx_;
  ConnectionPool pool_;
  mutable std::mutex failure_mu_;
  std::string last_failure_;
};

}  // namespace pdot::stub
