// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <thread>
#include <vector>

#include "pdot/cache/rb_cache.hpp"
#include "pdot/gate/call_gate.hpp"
#include "pdot/tlsio/tls.hpp"
#include "pdot/util/blocking_queue.hpp"
#include "pdot/wire/message.hpp"

namespace pdot::enclave {

using Clock = std::chrono::steady_clock;

struct ResolverConfig {
  int num_handlers = 30;
  size_t max_clients = 50;
  int handler_timeout_ms = 5000;
  size_t per_thread_memory_budget = 0;  // advisory only
  bool cache_enabled = true;
  int cache_delay_floor_ms = 0;  // 0 = answer cache hits immediately
  size_t cache_max_entries = 1'000'000;
  size_t in_query_capacity = 1024;
  std::vector<util::Endpoint> root_hints;
  std::string upstream_ca_pem;  // trust anchor for name-server connections

  void validate() const;  // throws std::invalid_argument
  static ResolverConfig load_file(const std::string& path);
};

struct QueryTicket {
  gate::SessionId client_id = 0;
  wire::Question question;
  std::uint16_t original_id = 0;
  Clock::time_point enqueue_time;
};

struct AnswerTicket {
  gate::SessionId client_id = 0;
  wire::Message response;
  Clock::time_point completion_time;
};

struct ResolverStats {
  std::uint64_t queries_received = 0;
  std::uint64_t answered = 0;
  std::uint64_t dropped_timeout = 0;
  std::uint64_t dropped_disconnected = 0;
  std::uint64_t in_flight = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t sessions_opened = 0;
  std::uint64_t active_sessions = 0;
  int handler_pool_size = 0;

  std::string to_json() const;
};

struct ResolverIdentity {
  crypto::KeyPtr key;
  crypto::CertPtr cert;
  std::vector<crypto::CertPtr> chain;  // extra certs presented after the leaf
};

enum class ResolveErrc { Timeout, DepthLimit, Unreachable, Protocol, Capacity };

class ResolveError : public std::runtime_error {
 public:
  ResolveError(ResolveErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ResolveErrc code() const { return code_; }

 private:
  ResolveErrc code_;
};

struct ResolveResult {
  std::uint8_t rcode = wire::kRcodeNoError;
  std::vector<wire::ResourceRecord> answers;
  size_t ns_sessions = 0;  // upstream connections opened
};

/// The trusted component. TLS endpoints for client sessions live here, on
/// memory BIOs; all socket work is delegated outward through HostServices.
///
/// Per session one reader and one writer thread; a fixed pool of handler
/// threads blocks on the shared in-query FIFO. All blocking happens on this
/// side of the gate.
class TrustedResolver final : public gate::TrustedEndpoint {
 public:
  TrustedResolver(ResolverConfig cfg, ResolverIdentity identity,
                  gate::HostServices& host);
  ~TrustedResolver() override;
  TrustedResolver(const TrustedResolver&) = delete;

  gate::SessionId session_open() override;
  void session_bytes(gate::SessionId id, util::ByteView data) override;
  void session_close(gate::SessionId id) override;
  std::string control_stats_json() override;

  void shutdown();

  ResolverStats stats() const;
  const cache::RbCache& cache() const { return cache_; }
  cache::RbCache& cache() { return cache_; }

  /// Walks the zone hierarchy from the root hints for one question.
  /// Exposed for direct tests; handlers call this internally.
  ResolveResult resolve_recursive(const wire::Question& question,
                                  Clock::time_point deadline);

  /// Out-queue instrumentation for `id`: {items inspected, items popped}.
  /// A strictly head-popping writer keeps these equal.
  std::pair<std::uint64_t, std::uint64_t> debug_out_queue_counters(
      gate::SessionId id) const;

 private:
  struct Session;

  std::shared_ptr<Session> find_session(gate::SessionId id) const;
  void reader_loop(std::shared_ptr<Session> s);
  void writer_loop(std::shared_ptr<Session> s);
  void handler_loop();
  void reaper_loop();
  void detach_session_locked(gate::SessionId id);
  void handle_ticket(const QueryTicket& ticket);
  void emit_plain_response(Session& s, const wire::Message& response);

  ResolverConfig cfg_;
  ResolverIdentity identity_;
  gate::HostServices& host_;
  tlsio::TlsContext server_ctx_;
  tlsio::TlsContext upstream_ctx_;
  cache::RbCache cache_;

  util::BlockingQueue<QueryTicket> in_queries_;

  mutable std::mutex sessions_mu_;
  std::map<gate::SessionId, std::shared_ptr<Session>> sessions_;
  std::vector<std::shared_ptr<Session>> graveyard_;
  gate::SessionId next_session_id_ = 0;

  mutable std::mutex stats_mu_;
  ResolverStats stats_;

  std::vector<std::thread> handlers_;
  std::thread reaper_;
  std::atomic<bool> shutting_down_{false};
  std::condition_variable reaper_cv_;
  std::mutex reaper_mu_;
};

}  // namespace pdot::enclave
