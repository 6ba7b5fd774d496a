// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/stub/stub.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "pdot/util/kv_config.hpp"

namespace pdot::stub {

using Clock = std::chrono::steady_clock;

namespace {

int remaining_ms(Clock::time_point deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return static_cast<int>(std::max<std::int64_t>(left.count(), 0));
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void StubConfig::validate() const {
  if (resolvers.empty()) throw std::invalid_argument("at least one resolver required");
  if (query_timeout_ms <= 0) throw std::invalid_argument("query_timeout_ms must be positive");
}

StubConfig StubConfig::load_file(const std::string& path) {
  util::KvConfig cfg = util::KvConfig::parse_file(path);
  std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve_path = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };

  StubConfig c;
  for (const auto& r : cfg.get_all("resolver")) {
    c.resolvers.push_back(util::Endpoint::parse(r));
  }
  c.query_timeout_ms = cfg.get_int("query_timeout_ms", c.query_timeout_ms);
  if (cfg.has("policy")) {
    c.policy = attest::TrustPolicy::load_file(resolve_path(cfg.get("policy")));
  } else {
    c.policy.require_attestation = cfg.get_bool("require_attestation", true);
  }
  if (cfg.has("legacy_ca")) {
    c.legacy_ca_pem = read_text_file(resolve_path(cfg.get("legacy_ca")));
  }
  c.validate();
  return c;
}

VerifiedSession::VerifiedSession(const util::Endpoint& ep, const tlsio::TlsContext& ctx,
                                 Clock::time_point deadline)
    : endpoint_(ep),
      sock_(util::TcpSocket::connect(ep, remaining_ms(deadline))),
      engine_(ctx, false) {
  // The client engine queues its hello on construction.
  send_pending_ciphertext();
  pump_ = std::thread([this] { pump_loop(); });

  std::unique_lock lk(mu_);
  bool done = state_cv_.wait_until(lk, deadline, [this] {
    return dead_ || engine_.state() != tlsio::TlsState::Handshaking;
  });
  if (engine_.established()) return;

  // Tear the pump down before throwing; the socket is ours to close.
  lk.unlock();
  stopping_ = true;
  sock_.shutdown_both();
  if (pump_.joinable()) pump_.join();

  const auto& outcome = engine_.verify_outcome();
  if (outcome.attempted && !outcome.ok) {
    throw VerifyFailure(outcome.error + (outcome.detail.empty() ? "" : ": " + outcome.detail));
  }
  if (!done) throw StubTimeout("handshake timed out to " + ep.str());
  throw SessionClosed("handshake failed to " + ep.str() +
                      (engine_.last_error().empty() ? "" : ": " + engine_.last_error()));
}

VerifiedSession::~VerifiedSession() {
  stopping_ = true;
  try {
    engine_.shutdown();
    send_pending_ciphertext();
  } catch (const std::exception&) {
  }
  sock_.shutdown_both();
  if (pump_.joinable()) pump_.join();
}

bool VerifiedSession::alive() const {
  std::lock_guard lk(mu_);
  return !dead_ && engine_.established();
}

void VerifiedSession::send_pending_ciphertext() {
  std::lock_guard lk(write_mu_);
  auto out = engine_.take_ciphertext();
  if (!out.empty()) sock_.send_all(out);
}

std::uint16_t VerifiedSession::enqueue_locked(const wire::Message& query, AnswerFn done) {
  if (dead_) throw SessionClosed("session to " + endpoint_.str() + " is closed");
  // The caller's id goes on the wire unless it would collide with an
  // in-flight query; then a free id substitutes and is mapped back on reply.
  std::uint16_t wire_id = query.id;
  if (pending_.count(wire_id)) {
    static thread_local std::mt19937 rng{std::random_device{}()};
    do {
      wire_id = static_cast<std::uint16_t>(rng());
    } while (pending_.count(wire_id));
  }
  pending_[wire_id] = Pending{query.id, std::move(done)};
  return wire_id;
}

void VerifiedSession::send_query(wire::Message on_wire) {
  try {
    std::lock_guard lk(write_mu_);
    engine_.write_frame(wire::encode_message(on_wire));
    auto out = engine_.take_ciphertext();
    if (!out.empty()) sock_.send_all(out);
  } catch (const std::exception& e) {
    {
      std::lock_guard lk(mu_);
      pending_.erase(on_wire.id);
    }
    throw SessionClosed(std::string("send failed: ") + e.what());
  }
}

wire::Message VerifiedSession::ask(const wire::Message& query, int timeout_ms) {
  auto prom = std::make_shared<std::promise<std::optional<wire::Message>>>();
  auto fut = prom->get_future();
  std::uint16_t wire_id;
  {
    std::lock_guard lk(mu_);
    wire_id = enqueue_locked(
        query, [prom](std::optional<wire::Message> reply) { prom->set_value(std::move(reply)); });
  }
  wire::Message on_wire = query;
  on_wire.id = wire_id;
  send_query(std::move(on_wire));

  if (fut.wait_for(std::chrono::milliseconds(timeout_ms)) != std::future_status::ready) {
    std::lock_guard lk(mu_);
    // The pump may deliver between the wait and this erase; losing that race
    // just means the promise was fulfilled after we stopped caring.
    pending_.erase(wire_id);
    throw StubTimeout("no response from " + endpoint_.str());
  }
  auto reply = fut.get();
  if (!reply) throw SessionClosed("session to " + endpoint_.str() + " closed mid-query");
  return *reply;
}

void VerifiedSession::ask_callback(const wire::Message& query, AnswerFn done) {
  std::uint16_t wire_id;
  {
    std::lock_guard lk(mu_);
    wire_id = enqueue_locked(query, std::move(done));
  }
  wire::Message on_wire = query;
  on_wire.id = wire_id;
  send_query(std::move(on_wire));
}

void VerifiedSession::pump_loop() {
  try {
    while (!stopping_) {
      util::Bytes data;
      try {
        data = sock_.recv_some(16384, 100);
      } catch (const util::NetTimeout&) {
        continue;
      }
      if (data.empty()) break;
      engine_.feed_ciphertext(data);
      send_pending_ciphertext();
      state_cv_.notify_all();

      while (auto frame = engine_.next_frame()) {
        if (frame->size() < 2) continue;
        auto id = static_cast<std::uint16_t>(((*frame)[0] << 8) | (*frame)[1]);
        Pending p;
        {
          std::lock_guard lk(mu_);
          auto it = pending_.find(id);
          if (it == pending_.end()) continue;  // late or unsolicited
          p = std::move(it->second);
          pending_.erase(it);
        }
        std::optional<wire::Message> reply;
        try {
          wire::Message m = wire::decode_message(*frame);
          m.id = p.caller_id;
          reply = std::move(m);
        } catch (const std::exception&) {
          // Undecodable payload on a verified session; surface as no answer.
        }
        p.done(std::move(reply));
      }
      auto st = engine_.state();
      if (st == tlsio::TlsState::Closed || st == tlsio::TlsState::Failed) break;
    }
  } catch (const std::exception&) {
    // Socket error; fall through to the common teardown.
  }
  fail_all_pending();
}

void VerifiedSession::fail_all_pending() {
  std::map<std::uint16_t, Pending> orphans;
  {
    std::lock_guard lk(mu_);
    dead_ = true;
    orphans.swap(pending_);
  }
  state_cv_.notify_all();
  for (auto& [id, p] : orphans) p.done(std::nullopt);
}

std::shared_ptr<VerifiedSession> ConnectionPool::get(const util::Endpoint& ep,
                                                     Clock::time_point deadline) {
  std::shared_ptr<std::mutex> hs_mu;
  {
    std::lock_guard lk(mu_);
    auto it = sessions_.find(ep.str());
    if (it != sessions_.end() && it->second->alive()) return it->second;
    auto& slot = handshake_mu_[ep.str()];
    if (!slot) slot = std::make_shared<std::mutex>();
    hs_mu = slot;
  }

  std::lock_guard hs_lk(*hs_mu);
  {
    // Another caller may have finished the handshake while we waited.
    std::lock_guard lk(mu_);
    auto it = sessions_.find(ep.str());
    if (it != sessions_.end() && it->second->alive()) return it->second;
  }
  auto session = std::make_shared<VerifiedSession>(ep, ctx_, deadline);
  std::lock_guard lk(mu_);
  sessions_[ep.str()] = session;
  return session;
}

void ConnectionPool::drop(const std::shared_ptr<VerifiedSession>& s) {
  std::lock_guard lk(mu_);
  auto it = sessions_.find(s->endpoint().str());
  if (it != sessions_.end() && it->second == s) sessions_.erase(it);
}

void ConnectionPool::clear() {
  std::map<std::string, std::shared_ptr<VerifiedSession>> doomed;
  {
    std::lock_guard lk(mu_);
    doomed.swap(sessions_);
  }
}

size_t ConnectionPool::live_sessions() const {
  std::lock_guard lk(mu_);
  size_t n = 0;
  for (const auto& [ep, s] : sessions_) {
    if (s->alive()) ++n;
  }
  return n;
}

namespace {

tlsio::TlsContext make_context(const StubConfig& cfg) {
  if (cfg.policy.require_attestation) {
    return tlsio::TlsContext::client_attesting(cfg.policy);
  }
  if (!cfg.legacy_ca_pem.empty()) {
    return tlsio::TlsContext::client_ca(cfg.legacy_ca_pem);
  }
  return tlsio::TlsContext::client_insecure();
}

}  // namespace

Stub::Stub(StubConfig cfg)
    : cfg_(std::move(cfg)), ctx_(make_context(cfg_)), pool_(ctx_) {
  cfg_.validate();
}

wire::Message Stub::resolve(const std::string& name, std::uint16_t qtype) {
  static thread_local std::mt19937 rng{std::random_device{}()};
  auto id = static_cast<std::uint16_t>(rng());
  return resolve(wire::make_query(id, wire::DomainName::parse(name), qtype));
}

wire::Message Stub::resolve(const wire::Message& query) {
  auto deadline = Clock::now() + std::chrono::milliseconds(cfg_.query_timeout_ms);
  std::string failure;

  for (const auto& ep : cfg_.resolvers) {
    if (Clock::now() >= deadline) {
      failure += (failure.empty() ? "" : "; ") + ep.str() + ": no time budget left";
      break;
    }
    // A pooled session can go stale between checks; one retry with a fresh
    // handshake distinguishes that from a genuinely failing endpoint.
    for (int attempt = 0; attempt < 2; ++attempt) {
      std::shared_ptr<VerifiedSession> session;
      try {
        session = pool_.get(ep, deadline);
      } catch (const VerifyFailure& e) {
        failure += (failure.empty() ? "" : "; ") + ep.str() + ": " + e.what();
        break;  // verification refusal: move to the next resolver
      } catch (const std::exception& e) {
        failure += (failure.empty() ? "" : "; ") + ep.str() + ": " + e.what();
        break;  // unreachable or handshake breakage: next resolver
      }
      bool reused = attempt == 0;
      try {
        return session->ask(query, remaining_ms(deadline));
      } catch (const StubTimeout&) {
        // The query reached a verified resolver; the contract is a local
        // SERVFAIL, not failover.
        {
          std::lock_guard lk(failure_mu_);
          last_failure_ = ep.str() + ": query timeout";
        }
        return wire::make_response(query, wire::kRcodeServFail);
      } catch (const SessionClosed& e) {
        pool_.drop(session);
        if (reused) continue;  // stale pooled session; handshake anew once
        failure += (failure.empty() ? "" : "; ") + ep.str() + ": " + e.what();
        break;
      }
    }
  }

  {
    std::lock_guard lk(failure_mu_);
    last_failure_ = failure.empty() ? "no resolvers configured" : failure;
  }
  return wire::make_response(query, wire::kRcodeServFail);
}

std::shared_ptr<VerifiedSession> Stub::fresh_session() {
  return fresh_session(cfg_.resolvers.front());
}

std::shared_ptr<VerifiedSession> Stub::fresh_session(const util::Endpoint& ep) {
  auto deadline = Clock::now() + std::chrono::milliseconds(cfg_.query_timeout_ms);
  return std::make_shared<VerifiedSession>(ep, ctx_, deadline);
}

std::string Stub::last_failure() const {
  std::lock_guard lk(failure_mu_);
  return last_failure_;
}

}  // namespace pdot::stub
