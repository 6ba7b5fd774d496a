// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/enclave/resolver.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "pdot/util/kv_config.hpp"
#include "pdot/util/net.hpp"

namespace pdot::enclave {

namespace {

constexpr int kMaxReferralDepth = 16;
constexpr size_t kMaxTlsRecord = 5 + 16384 + 256;

std::uint16_t fresh_query_id() {
  thread_local std::mt19937 rng{std::random_device{}()};
  return static_cast<std::uint16_t>(rng());
}

int remaining_ms(Clock::time_point deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
      deadline - Clock::now());
  return static_cast<int>(left.count());
}

/// In-"enclave" TLS client speaking to one name server through host OCALLs.
/// Reads whole TLS records (5-byte header, then body) so the number of
/// crossings per record is fixed.
class UpstreamChannel {
 public:
  UpstreamChannel(gate::HostServices& host, const tlsio::TlsContext& ctx,
                  const util::Endpoint& ep, Clock::time_point deadline)
      : host_(host), engine_(ctx, /*is_server=*/false) {
    int budget = remaining_ms(deadline);
    if (budget <= 0) throw ResolveError(ResolveErrc::Timeout, "deadline exhausted");
    conn_ = host_.upstream_connect(ep, budget);
    open_ = true;
    pump_out();
    while (!engine_.established()) {
      if (engine_.state() == tlsio::TlsState::Failed) {
        throw ResolveError(ResolveErrc::Protocol,
                           "upstream TLS failure: " + engine_.last_error());
      }
      read_record(deadline);
      pump_out();
    }
  }

  ~UpstreamChannel() { close(); }

  wire::Message ask(const wire::Message& query, Clock::time_point deadline) {
    engine_.write_frame(wire::encode_message(query));
    pump_out();
    for (;;) {
      if (auto frame = engine_.next_frame()) {
        return wire::decode_message(*frame);
      }
      if (engine_.state() == tlsio::TlsState::Closed ||
          engine_.state() == tlsio::TlsState::Failed) {
        throw ResolveError(ResolveErrc::Protocol, "upstream closed mid-query");
      }
      read_record(deadline);
    }
  }

  void close() {
    if (!open_) return;
    open_ = false;
    try {
      engine_.shutdown();
      pump_out();
    } catch (...) {
    }
    host_.upstream_close(conn_);
  }

 private:
  void pump_out() {
    util::Bytes out = engine_.take_ciphertext();
    if (!out.empty()) host_.upstream_send(conn_, out);
  }

  void read_record(Clock::time_point deadline) {
    int budget = remaining_ms(deadline);
    if (budget <= 0) throw ResolveError(ResolveErrc::Timeout, "deadline exhausted");
    util::Bytes header;
    try {
      header = host_.upstream_recv_exact(conn_, 5, budget);
    } catch (const util::NetTimeout&) {
      throw ResolveError(ResolveErrc::Timeout, "upstream read timed out");
    }
    size_t body_len = static_cast<size_t>(header[3]) << 8 | header[4];
    if (5 + body_len > kMaxTlsRecord) {
      throw ResolveError(ResolveErrc::Protocol, "oversized TLS record");
    }
    budget = remaining_ms(deadline);
    if (budget <= 0) throw ResolveError(ResolveErrc::Timeout, "deadline exhausted");
    util::Bytes body;
    try {
      body = host_.upstream_recv_exact(conn_, body_len, budget);
    } catch (const util::NetTimeout&) {
      throw ResolveError(ResolveErrc::Timeout, "upstream read timed out");
    }
    header.insert(header.end(), body.begin(), body.end());
    engine_.feed_ciphertext(header);
  }

  gate::HostServices& host_;
  tlsio::TlsEngine engine_;
  gate::ConnId conn_ = 0;
  bool open_ = false;
};

}  // namespace

void ResolverConfig::validate() const {
  if (num_handlers < 1) throw std::invalid_argument("num_handlers must be >= 1");
  if (handler_timeout_ms <= 0) throw std::invalid_argument("handler_timeout_ms must be > 0");
  if (max_clients < 1) throw std::invalid_argument("max_clients must be >= 1");
  if (root_hints.empty()) throw std::invalid_argument("at least one root hint required");
}

ResolverConfig ResolverConfig::load_file(const std::string& path) {
  util::KvConfig cfg = util::KvConfig::parse_file(path);
  ResolverConfig c;
  c.num_handlers = static_cast<int>(cfg.get_int("num_handlers", c.num_handlers));
  c.max_clients = static_cast<size_t>(cfg.get_int("max_clients", static_cast<long>(c.max_clients)));
  c.handler_timeout_ms =
      static_cast<int>(cfg.get_int("handler_timeout_ms", c.handler_timeout_ms));
  c.per_thread_memory_budget = static_cast<size_t>(
      cfg.get_int("per_thread_memory_budget", static_cast<long>(c.per_thread_memory_budget)));
  c.cache_enabled = cfg.get_bool("cache_enabled", c.cache_enabled);
  c.cache_delay_floor_ms =
      static_cast<int>(cfg.get_int("cache_delay_floor_ms", c.cache_delay_floor_ms));
  c.cache_max_entries = static_cast<size_t>(
      cfg.get_int("cache_max_entries", static_cast<long>(c.cache_max_entries)));
  c.in_query_capacity = static_cast<size_t>(
      cfg.get_int("in_query_capacity", static_cast<long>(c.in_query_capacity)));
  for (const auto& hint : cfg.get_all("root_hint")) {
    c.root_hints.push_back(util::Endpoint::parse(hint));
  }
  if (cfg.has("upstream_ca")) {
    std::ifstream in(cfg.get("upstream_ca"));
    if (!in) throw std::runtime_error("cannot open upstream_ca file");
    std::ostringstream ss;
    ss << in.rdbuf();
    c.upstream_ca_pem = ss.str();
  }
  return c;
}

std::string ResolverStats::to_json() const {
  nlohmann::json j;
  j["queries_received"] = queries_received;
  j["answered"] = answered;
  j["dropped_timeout"] = dropped_timeout;
  j["dropped_disconnected"] = dropped_disconnected;
  j["in_flight"] = in_flight;
  j["cache_hits"] = cache_hits;
  j["cache_misses"] = cache_misses;
  j["sessions_opened"] = sessions_opened;
  j["active_sessions"] = active_sessions;
  j["handler_pool_size"] = handler_pool_size;
  return j.dump();
}

struct TrustedResolver::Session {
  gate::SessionId id = 0;
  tlsio::TlsEngine engine;
  util::BlockingQueue<util::Bytes> inbox{256};
  util::BlockingQueue<AnswerTicket> out_queue{1024};
  std::atomic<bool> accepting{true};
  std::atomic<int> exited_threads{0};
  std::mutex emit_mu;  // serializes write_frame + take + send
  std::thread reader;
  std::thread writer;

  Session(gate::SessionId sid, const tlsio::TlsContext& ctx)
      : id(sid), engine(ctx, /*is_server=*/true) {}
};

TrustedResolver::TrustedResolver(ResolverConfig cfg, ResolverIdentity identity,
                                 gate::HostServices& host)
    : cfg_(std::move(cfg)),
      identity_(std::move(identity)),
      host_(host),
      server_ctx_([this] {
        std::vector<X509*> chain;
        for (const auto& c : identity_.chain) chain.push_back(c.get());
        return tlsio::TlsContext::server(identity_.key.get(), identity_.cert.get(), chain);
      }()),
      upstream_ctx_(cfg_.upstream_ca_pem.empty()
                        ? tlsio::TlsContext::client_insecure()
                        : tlsio::TlsContext::client_ca(cfg_.upstream_ca_pem)),
      cache_(cfg_.cache_max_entries),
      in_queries_(cfg_.in_query_capacity) {
  cfg_.validate();
  stats_.handler_pool_size = cfg_.num_handlers;
  handlers_.reserve(static_cast<size_t>(cfg_.num_handlers));
  for (int i = 0; i < cfg_.num_handlers; ++i) {
    handlers_.emplace_back([this] { handler_loop(); });
  }
  reaper_ = std::thread([this] { reaper_loop(); });
}

TrustedResolver::~TrustedResolver() { shutdown(); }

gate::SessionId TrustedResolver::session_open() {
  std::shared_ptr<Session> s;
  {
    std::lock_guard lock(sessions_mu_);
    if (sessions_.size() >= cfg_.max_clients) {
      throw ResolveError(ResolveErrc::Capacity, "client capacity reached");
    }
    gate::SessionId id = ++next_session_id_;
    s = std::make_shared<Session>(id, server_ctx_);
    sessions_[id] = s;
  }
  {
    std::lock_guard lock(stats_mu_);
    ++stats_.sessions_opened;
    ++stats_.active_sessions;
  }
  s->reader = std::thread([this, s] { reader_loop(s); });
  s->writer = std::thread([this, s] { writer_loop(s); });
  return s->id;
}

void TrustedResolver::session_bytes(gate::SessionId id, util::ByteView data) {
  std::shared_ptr<Session> s = find_session(id);
  if (!s) throw std::invalid_argument("unknown session " + std::to_string(id));
  s->inbox.push(util::Bytes(data.begin(), data.end()));
}

void TrustedResolver::session_close(gate::SessionId id) {
  std::lock_guard lock(sessions_mu_);
  detach_session_locked(id);
}

void TrustedResolver::detach_session_locked(gate::SessionId id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return;
  std::shared_ptr<Session> s = it->second;
  sessions_.erase(it);
  s->accepting.store(false, std::memory_order_release);
  s->inbox.close();
  s->out_queue.close();
  graveyard_.push_back(std::move(s));
  {
    std::lock_guard slock(stats_mu_);
    --stats_.active_sessions;
  }
  reaper_cv_.notify_one();
}

std::string TrustedResolver::control_stats_json() { return stats().to_json(); }

std::shared_ptr<TrustedResolver::Session> TrustedResolver::find_session(
    gate::SessionId id) const {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

void TrustedResolver::emit_plain_response(Session& s, const wire::Message& response) {
  std::lock_guard lock(s.emit_mu);
  s.engine.write_frame(wire::encode_message(response));
  util::Bytes out = s.engine.take_ciphertext();
  if (!out.empty()) host_.client_send(s.id, out);
}

void TrustedResolver::reader_loop(std::shared_ptr<Session> s) {
  bool notified_established = false;
  while (auto chunk = s->inbox.pop()) {
    try {
      s->engine.feed_ciphertext(*chunk);
    } catch (const tlsio::TlsError&) {
      break;
    }
    {
      std::lock_guard lock(s->emit_mu);
      util::Bytes out = s->engine.take_ciphertext();
      if (!out.empty()) host_.client_send(s->id, out);
    }
    if (!notified_established && s->engine.established()) {
      notified_established = true;
      host_.session_established(s->id);
    }

    while (auto frame = s->engine.next_frame()) {
      QueryTicket ticket;
      try {
        wire::Message query = wire::decode_message(*frame);
        if (query.questions.empty()) {
          throw wire::WireError(wire::WireErrc::Truncated, "no question");
        }
        ticket.client_id = s->id;
        ticket.question = query.questions[0];
        ticket.original_id = query.id;
        ticket.enqueue_time = Clock::now();
      } catch (const wire::WireError&) {
        // Malformed payload: answer FORMERR, enqueue nothing.
        wire::Message err;
        err.id = frame->size() >= 2 ? static_cast<std::uint16_t>((*frame)[0] << 8 | (*frame)[1])
                                    : 0;
        err.set_qr(true);
        err.set_rcode(wire::kRcodeFormErr);
        try {
          emit_plain_response(*s, err);
        } catch (const tlsio::TlsError&) {
        }
        continue;
      }
      {
        std::lock_guard lock(stats_mu_);
        ++stats_.queries_received;
        ++stats_.in_flight;
      }
      if (!in_queries_.push(ticket)) {
        // Shutdown raced the enqueue; keep the books balanced.
        std::lock_guard lock(stats_mu_);
        --stats_.queries_received;
        --stats_.in_flight;
        break;
      }
    }

    tlsio::TlsState st = s->engine.state();
    if (st == tlsio::TlsState::Closed || st == tlsio::TlsState::Failed) break;
  }

  // Peer is gone (or the host told us to stop): no more answers for this
  // session. The writer drains what is left and drops it.
  s->accepting.store(false, std::memory_order_release);
  s->out_queue.close();
  if (s->exited_threads.fetch_add(1) + 1 == 2) host_.session_finished(s->id);
}

void TrustedResolver::writer_loop(std::shared_ptr<Session> s) {
  while (auto ticket = s->out_queue.pop()) {
    if (!s->accepting.load(std::memory_order_acquire)) {
      std::lock_guard lock(stats_mu_);
      ++stats_.dropped_disconnected;
      --stats_.in_flight;
      continue;
    }
    try {
      emit_plain_response(*s, ticket->response);
      std::lock_guard lock(stats_mu_);
      ++stats_.answered;
      --stats_.in_flight;
    } catch (const tlsio::TlsError&) {
      s->accepting.store(false, std::memory_order_release);
      std::lock_guard lock(stats_mu_);
      ++stats_.dropped_disconnected;
      --stats_.in_flight;
    }
  }
  if (s->exited_threads.fetch_add(1) + 1 == 2) host_.session_finished(s->id);
}

void TrustedResolver::handler_loop() {
  while (auto ticket = in_queries_.pop()) {
    handle_ticket(*ticket);
  }
}

void TrustedResolver::handle_ticket(const QueryTicket& ticket) {
  Clock::time_point start = Clock::now();
  Clock::time_point deadline = start + std::chrono::milliseconds(cfg_.handler_timeout_ms);

  std::shared_ptr<Session> s = find_session(ticket.client_id);
  if (!s || !s->accepting.load(std::memory_order_acquire)) {
    std::lock_guard lock(stats_mu_);
    ++stats_.dropped_disconnected;
    --stats_.in_flight;
    return;
  }

  wire::Message response;
  response.id = ticket.original_id;
  response.set_qr(true);
  response.set_rd(true);
  response.flags |= wire::kFlagRa;
  response.questions.push_back(ticket.question);

  cache::CacheKey key = cache::CacheKey::of(ticket.question.name, ticket.question.qtype);
  bool from_cache = false;
  if (cfg_.cache_enabled) {
    if (auto cached = cache_.lookup(key)) {
      response.answers = *cached;
      response.set_aa(false);
      from_cache = true;
      std::lock_guard lock(stats_mu_);
      ++stats_.cache_hits;
    } else {
      std::lock_guard lock(stats_mu_);
      ++stats_.cache_misses;
    }
  }

  if (!from_cache) {
    ResolveResult result;
    try {
      result = resolve_recursive(ticket.question, deadline);
      response.set_rcode(result.rcode);
      response.answers = result.answers;
      if (cfg_.cache_enabled && result.rcode == wire::kRcodeNoError &&
          !result.answers.empty()) {
        cache_.insert(key, result.answers);
      }
    } catch (const ResolveError& e) {
      if (e.code() == ResolveErrc::Timeout) {
        // Abandon: enqueue nothing, move on to the next ticket.
        std::lock_guard lock(stats_mu_);
        ++stats_.dropped_timeout;
        --stats_.in_flight;
        return;
      }
      // Hard failure (unreachable, depth limit, protocol): tell the client.
      response.set_rcode(wire::kRcodeServFail);
    } catch (const std::exception&) {
      response.set_rcode(wire::kRcodeServFail);
    }
  } else if (cfg_.cache_delay_floor_ms > 0) {
    // Hold cache hits back to the configured floor so hit/miss timing does
    // not leak other clients' history.
    std::this_thread::sleep_until(start +
                                  std::chrono::milliseconds(cfg_.cache_delay_floor_ms));
  }

  if (!s->accepting.load(std::memory_order_acquire)) {
    std::lock_guard lock(stats_mu_);
    ++stats_.dropped_disconnected;
    --stats_.in_flight;
    return;
  }
  AnswerTicket answer{ticket.client_id, std::move(response), Clock::now()};
  if (!s->out_queue.push(std::move(answer))) {
    std::lock_guard lock(stats_mu_);
    ++stats_.dropped_disconnected;
    --stats_.in_flight;
  }
  // in_flight is released by the writer on send (or drop).
}

ResolveResult TrustedResolver::resolve_recursive(const wire::Question& question,
                                                 Clock::time_point deadline) {
  ResolveResult result;
  size_t hint_index = 0;
  util::Endpoint current = cfg_.root_hints[0];

  for (int depth = 0; depth <= kMaxReferralDepth; ++depth) {
    wire::Message reply;
    try {
      UpstreamChannel channel(host_, upstream_ctx_, current, deadline);
      ++result.ns_sessions;
      wire::Message query =
          wire::make_query(fresh_query_id(), question.name, question.qtype);
      reply = channel.ask(query, deadline);
      channel.close();
    } catch (const ResolveError& e) {
      if (e.code() != ResolveErrc::Timeout && depth == 0 &&
          hint_index + 1 < cfg_.root_hints.size()) {
        ++hint_index;
        current = cfg_.root_hints[hint_index];
        --depth;
        continue;
      }
      throw;
    } catch (const util::NetTimeout&) {
      throw ResolveError(ResolveErrc::Timeout, "upstream connect timed out");
    } catch (const std::exception& e) {
      // Root hints are replicas; on a dead root, move to the next one.
      if (depth == 0 && hint_index + 1 < cfg_.root_hints.size()) {
        ++hint_index;
        current = cfg_.root_hints[hint_index];
        --depth;
        continue;
      }
      throw ResolveError(ResolveErrc::Unreachable, e.what());
    }

    if (reply.rcode() == wire::kRcodeNxDomain) {
      result.rcode = wire::kRcodeNxDomain;
      result.answers.clear();
      return result;
    }
    if (reply.rcode() != wire::kRcodeNoError) {
      throw ResolveError(ResolveErrc::Protocol,
                         "upstream rcode " + std::to_string(reply.rcode()));
    }
    if (!reply.answers.empty()) {
      result.rcode = wire::kRcodeNoError;
      result.answers = reply.answers;
      return result;
    }

    // Referral: find an NS in authority with glue in additional.
    std::optional<util::Endpoint> next;
    for (const auto& ns : reply.authorities) {
      if (ns.rtype != wire::kTypeNs) continue;
      wire::DomainName target = ns.ns_target();
      for (const auto& glue : reply.additionals) {
        if (glue.rtype == wire::kTypeA && glue.name == target) {
          // Sim fleets share one port across nodes; inherit it.
          next = util::Endpoint{glue.a_address(), current.port};
          break;
        }
      }
      if (next) break;
    }
    if (!next) {
      throw ResolveError(ResolveErrc::Protocol, "response carries no usable referral");
    }
    current = *next;
  }
  throw ResolveError(ResolveErrc::DepthLimit, "referral depth limit exceeded");
}

ResolverStats TrustedResolver::stats() const {
  std::lock_guard lock(stats_mu_);
  return stats_;
}

std::pair<std::uint64_t, std::uint64_t> TrustedResolver::debug_out_queue_counters(
    gate::SessionId id) const {
  std::shared_ptr<Session> s = find_session(id);
  if (!s) return {0, 0};
  return {s->out_queue.elements_inspected(), s->out_queue.pops()};
}

void TrustedResolver::reaper_loop() {
  std::unique_lock lock(reaper_mu_);
  for (;;) {
    reaper_cv_.wait_for(lock, std::chrono::milliseconds(50));
    std::vector<std::shared_ptr<Session>> dead;
    {
      std::lock_guard slock(sessions_mu_);
      dead.swap(graveyard_);
    }
    for (auto& s : dead) {
      if (s->reader.joinable()) s->reader.join();
      if (s->writer.joinable()) s->writer.join();
    }
    if (shutting_down_.load(std::memory_order_acquire)) {
      std::lock_guard slock(sessions_mu_);
      if (graveyard_.empty() && sessions_.empty()) return;
    }
  }
}

void TrustedResolver::shutdown() {
  bool expected = false;
  if (!shutting_down_.compare_exchange_strong(expected, true)) {
    return;
  }
  {
    std::lock_guard lock(sessions_mu_);
    std::vector<gate::SessionId> ids;
    ids.reserve(sessions_.size());
    for (const auto& [id, _] : sessions_) ids.push_back(id);
    for (gate::SessionId id : ids) detach_session_locked(id);
  }
  in_queries_.close();
  for (auto& h : handlers_) {
    if (h.joinable()) h.join();
  }
  reaper_cv_.notify_one();
  if (reaper_.joinable()) reaper_.join();
}

}  // namespace pdot::enclave
