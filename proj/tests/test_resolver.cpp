// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <future>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pdot/enclave/resolver.hpp"
#include "pdot/host/boundary.hpp"
#include "pdot/stub/stub.hpp"
#include "testutil.hpp"

using namespace pdot;
using namespace std::chrono_literals;
using doctest::Contains;

namespace {

enclave::Clock::time_point in_ms(int ms) {
  return enclave::Clock::now() + std::chrono::milliseconds(ms);
}

wire::Question question_for(const std::string& name,
                            std::uint16_t qtype = wire::kTypeA) {
  wire::Question q;
  q.name = wire::DomainName::parse(name);
  q.qtype = qtype;
  return q;
}

// Counter updates trail the client-visible reply by a few scheduler hops.
template <typename Pred>
bool eventually(Pred pred, int budget_ms = 2000) {
  auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(budget_ms);
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(10ms);
  }
  return pred();
}

}  // namespace

TEST_CASE("resolver config validates and loads from files") {
  enclave::ResolverConfig cfg;
  cfg.root_hints = {util::Endpoint{"127.0.0.1", 853}};
  CHECK_NOTHROW(cfg.validate());

  auto broken = cfg;
  broken.num_handlers = 0;
  CHECK_THROWS_WITH_AS(broken.validate(), Contains("num_handlers"),
                       std::invalid_argument);
  broken = cfg;
  broken.handler_timeout_ms = 0;
  CHECK_THROWS_WITH_AS(broken.validate(), Contains("handler_timeout_ms"),
                       std::invalid_argument);
  broken = cfg;
  broken.max_clients = 0;
  CHECK_THROWS_WITH_AS(broken.validate(), Contains("max_clients"),
                       std::invalid_argument);
  broken = cfg;
  broken.root_hints.clear();
  CHECK_THROWS_WITH_AS(broken.validate(), Contains("root hint"),
                       std::invalid_argument);

  std::string dir = testutil::tmp_dir("rescfg");
  testutil::write_text(dir + "/ca.pem", "not really a cert\n");
  testutil::write_text(dir + "/resolver.conf",
                       "num_handlers = 7\n"
                       "handler_timeout_ms = 900\n"
                       "cache_enabled = false\n"
                       "cache_delay_floor_ms = 25\n"
                       "root_hint = 127.0.0.1:9001\n"
                       "root_hint = 127.0.0.2:9002\n"
                       "upstream_ca = " + dir + "/ca.pem\n");
  auto loaded = enclave::ResolverConfig::load_file(dir + "/resolver.conf");
  CHECK(loaded.num_handlers == 7);
  CHECK(loaded.handler_timeout_ms == 900);
  CHECK_FALSE(loaded.cache_enabled);
  CHECK(loaded.cache_delay_floor_ms == 25);
  CHECK(loaded.max_clients == 50);  // untouched default
  REQUIRE(loaded.root_hints.size() == 2);
  CHECK(loaded.root_hints[1].str() == "127.0.0.2:9002");
  CHECK(loaded.upstream_ca_pem == "not really a cert\n");

  testutil::write_text(dir + "/missing-ca.conf",
                       "root_hint = 127.0.0.1:9001\n"
                       "upstream_ca = " + dir + "/nope.pem\n");
  CHECK_THROWS_WITH_AS(enclave::ResolverConfig::load_file(dir + "/missing-ca.conf"),
                       Contains("upstream_ca"), std::runtime_error);
}

TEST_CASE("recursive walk opens one upstream session per delegation hop") {
  testutil::Cluster c;

  auto got = c.resolver->resolve_recursive(question_for("d0.test"), in_ms(5000));
  CHECK(got.rcode == wire::kRcodeNoError);
  REQUIRE(got.answers.size() == 1);
  CHECK(got.answers[0].a_address() == "10.2.0.1");
  CHECK(got.ns_sessions == 3);  // root referral, tld referral, authoritative

  auto ns = c.resolver->resolve_recursive(question_for("d2.test", wire::kTypeNs),
                                          in_ms(5000));
  REQUIRE(ns.answers.size() == 1);
  CHECK(ns.answers[0].ns_target().str() == "a1.ns.sim");

  // An unknown leaf dies at the tld, which is authoritative for the gap.
  auto ghost = c.resolver->resolve_recursive(question_for("ghost.test"), in_ms(5000));
  CHECK(ghost.rcode == wire::kRcodeNxDomain);
  CHECK(ghost.answers.empty());
  CHECK(ghost.ns_sessions == 2);

  CHECK_THROWS_AS(c.resolver->resolve_recursive(question_for("d0.test"), in_ms(-50)),
                  enclave::ResolveError);
  try {
    c.resolver->resolve_recursive(question_for("d0.test"), in_ms(-50));
  } catch (const enclave::ResolveError& e) {
    CHECK(e.code() == enclave::ResolveErrc::Timeout);
  }
}

TEST_CASE("dead first root hint fails over to the replica") {
  testutil::Cluster c;
  auto rcfg = c.resolver.get();

  // Rebuild a resolver whose first hint points nowhere.
  enclave::ResolverConfig cfg;
  cfg.root_hints = {util::Endpoint{"127.0.61.9", c.fleet->port()},
                    c.fleet->root_endpoint()};
  cfg.upstream_ca_pem = c.fleet->ca_pem();
  enclave::ResolverIdentity identity;
  identity.key = crypto::generate_ed25519();
  identity.cert = attest::build_attested_certificate(identity.key.get(),
                                                     c.measurement, c.authority);
  gate::CallGate gate;
  host::HostBoundary boundary(gate, {});
  enclave::TrustedResolver resolver(cfg, std::move(identity), boundary);

  auto got = resolver.resolve_recursive(question_for("d1.test"), in_ms(8000));
  CHECK(got.rcode == wire::kRcodeNoError);
  REQUIRE(got.answers.size() == 1);
  CHECK(got.answers[0].a_address() == "10.2.0.2");
  resolver.shutdown();
  (void)rcfg;
}

TEST_CASE("stub queries flow end to end with cache accounting") {
  testutil::Cluster c;
  stub::Stub stub(c.stub_config());

  wire::Message q = wire::make_query(0x7777, wire::DomainName::parse("d1.test"),
                                     wire::kTypeA);
  wire::Message r = stub.resolve(q);
  CHECK(r.id == 0x7777);
  CHECK(r.qr());
  CHECK(r.rcode() == wire::kRcodeNoError);
  REQUIRE(r.answers.size() == 1);
  CHECK(r.answers[0].a_address() == "10.2.0.2");
  CHECK(r.answers[0].ttl == 300);

  REQUIRE(eventually([&] {
    auto s = c.resolver->stats();
    return s.answered == 1 && s.in_flight == 0;
  }));
  auto s = c.resolver->stats();
  CHECK(s.queries_received == 1);
  CHECK(s.cache_misses == 1);
  CHECK(s.cache_hits == 0);
  CHECK(s.sessions_opened == 1);
  CHECK(s.active_sessions == 1);

  // Same question again: served from cache, upstream untouched.
  size_t walks_before = c.ns_log.count("a1", "answer");
  wire::Message again = stub.resolve("d1.test", wire::kTypeA);
  CHECK(again.rcode() == wire::kRcodeNoError);
  REQUIRE(again.answers.size() == 1);
  CHECK(again.answers[0].a_address() == "10.2.0.2");
  CHECK_FALSE(again.aa());
  REQUIRE(eventually([&] { return c.resolver->stats().cache_hits == 1; }));
  CHECK(c.ns_log.count("a1", "answer") == walks_before);

  // Negative answers are not cached; each one walks the tree again.
  CHECK(stub.resolve("ghost.test", wire::kTypeA).rcode() == wire::kRcodeNxDomain);
  CHECK(stub.resolve("ghost.test", wire::kTypeA).rcode() == wire::kRcodeNxDomain);
  REQUIRE(eventually([&] { return c.resolver->stats().cache_misses == 3; }));
}

TEST_CASE("disabled cache never counts and always walks") {
  testutil::Cluster::Options opt;
  opt.resolver.cache_enabled = false;
  testutil::Cluster c(std::move(opt));
  stub::Stub stub(c.stub_config());

  CHECK(stub.resolve("d0.test", wire::kTypeA).rcode() == wire::kRcodeNoError);
  CHECK(stub.resolve("d0.test", wire::kTypeA).rcode() == wire::kRcodeNoError);

  REQUIRE(eventually([&] { return c.resolver->stats().answered == 2; }));
  auto s = c.resolver->stats();
  CHECK(s.cache_hits == 0);
  CHECK(s.cache_misses == 0);
  CHECK(c.ns_log.count("a1", "answer") == 2);
}

TEST_CASE("cache hits wait out the configured delay floor") {
  testutil::Cluster::Options opt;
  opt.resolver.cache_delay_floor_ms = 200;
  testutil::Cluster c(std::move(opt));
  stub::Stub stub(c.stub_config());

  CHECK(stub.resolve("d3.test", wire::kTypeA).rcode() == wire::kRcodeNoError);

  auto t0 = std::chrono::steady_clock::now();
  CHECK(stub.resolve("d3.test", wire::kTypeA).rcode() == wire::kRcodeNoError);
  auto hit_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  CHECK(hit_ms >= 195);
  REQUIRE(eventually([&] { return c.resolver->stats().cache_hits == 1; }));
  CHECK(c.ns_log.count("a1", "answer") == 1);
}

TEST_CASE("pipelined answers drain the out queue strictly in order") {
  testutil::Cluster c;
  stub::Stub stub(c.stub_config());
  auto session = stub.fresh_session();

  constexpr int kQueries = 24;
  std::vector<std::promise<wire::Message>> done(kQueries);
  for (int i = 0; i < kQueries; ++i) {
    wire::Message q = wire::make_query(
        static_cast<std::uint16_t>(0x2000 + i),
        wire::DomainName::parse("d" + std::to_string(i % 4) + ".test"),
        wire::kTypeA);
    session->ask_callback(q, [&done, i](std::optional<wire::Message> reply) {
      if (reply) {
        done[i].set_value(*reply);
      } else {
        done[i].set_exception(std::make_exception_ptr(
            std::runtime_error("session closed")));
      }
    });
  }
  for (int i = 0; i < kQueries; ++i) {
    auto fut = done[i].get_future();
    REQUIRE(fut.wait_for(10s) == std::future_status::ready);
    wire::Message r = fut.get();
    CHECK(r.id == 0x2000 + i);
    CHECK(r.rcode() == wire::kRcodeNoError);
  }

  // The only session in this cluster has id 1. The writer never skips or
  // reorders: every element it looked at, it popped.
  REQUIRE(eventually([&] {
    return c.resolver->debug_out_queue_counters(1).second == kQueries;
  }));
  auto [inspected, popped] = c.resolver->debug_out_queue_counters(1);
  CHECK(inspected == popped);
  CHECK(popped == kQueries);
}

TEST_CASE("counters balance across a concurrent burst") {
  testutil::Cluster c;
  stub::Stub stub(c.stub_config());

  constexpr int kThreads = 4;
  constexpr int kPerThread = 15;
  std::atomic<int> noerror{0};
  std::atomic<int> nxdomain{0};
  std::vector<std::thread> workers;
  for (int t = 0; t < kThreads; ++t) {
    workers.emplace_back([&, t] {
      for (int i = 0; i < kPerThread; ++i) {
        bool ghost = (i % 5) == 4;
        std::string name =
            ghost ? "nope" + std::to_string(t) + "." + std::to_string(i) + ".test"
                  : "d" + std::to_string((t + i) % 4) + ".test";
        auto r = stub.resolve(name, wire::kTypeA);
        if (r.rcode() == wire::kRcodeNoError) ++noerror;
        if (r.rcode() == wire::kRcodeNxDomain) ++nxdomain;
      }
    });
  }
  for (auto& w : workers) w.join();

  CHECK(noerror == kThreads * kPerThread * 4 / 5);
  CHECK(nxdomain == kThreads * kPerThread / 5);

  REQUIRE(eventually([&] { return c.resolver->stats().in_flight == 0; }));
  auto s = c.resolver->stats();
  CHECK(s.queries_received == kThreads * kPerThread);
  CHECK(s.queries_received ==
        s.answered + s.dropped_timeout + s.dropped_disconnected + s.in_flight);
  CHECK(s.answered == kThreads * kPerThread);
  CHECK(s.sessions_opened == 1);  // all threads share the pooled session
}

TEST_CASE("handler deadline abandons the query instead of answering late") {
  testutil::Cluster::Options opt;
  opt.ns_delay_ms = 800;
  opt.resolver.handler_timeout_ms = 250;
  opt.stub_timeout_ms = 1500;
  testutil::Cluster c(std::move(opt));
  stub::Stub stub(c.stub_config());

  wire::Message q = wire::make_query(0x5151, wire::DomainName::parse("d0.test"),
                                     wire::kTypeA);
  wire::Message r = stub.resolve(q);
  CHECK(r.rcode() == wire::kRcodeServFail);  // synthesized locally
  CHECK(r.id == 0x5151);
  CHECK(stub.last_failure() == c.endpoint().str() + ": query timeout");

  REQUIRE(eventually([&] { return c.resolver->stats().dropped_timeout == 1; }, 4000));
  auto s = c.resolver->stats();
  CHECK(s.answered == 0);
  CHECK(s.in_flight == 0);
  CHECK(s.queries_received == 1);
}

TEST_CASE("garbage frames draw formerr without burning a query slot") {
  testutil::Cluster c;
  testutil::TlsClient client(c.endpoint(),
                             tlsio::TlsContext::client_attesting(c.policy()));

  util::Bytes garbage = {0xab, 0xcd, 0x01};
  wire::Message err = wire::decode_message(client.exchange(garbage));
  CHECK(err.id == 0xabcd);
  CHECK(err.qr());
  CHECK(err.rcode() == wire::kRcodeFormErr);
  CHECK(c.resolver->stats().queries_received == 0);

  // The session survives and still serves well-formed queries.
  wire::Message q = wire::make_query(7, wire::DomainName::parse("d0.test"),
                                     wire::kTypeA);
  wire::Message ok = client.ask(q);
  CHECK(ok.rcode() == wire::kRcodeNoError);
  REQUIRE(ok.answers.size() == 1);
  CHECK(ok.answers[0].a_address() == "10.2.0.1");
}

TEST_CASE("session capacity is enforced and reclaimed") {
  testutil::Cluster::Options opt;
  opt.resolver.max_clients = 2;
  testutil::Cluster c(std::move(opt));

  gate::SessionId a = c.resolver->session_open();
  gate::SessionId b = c.resolver->session_open();
  CHECK(a != b);
  CHECK_THROWS_AS(c.resolver->session_open(), enclave::ResolveError);
  try {
    c.resolver->session_open();
  } catch (const enclave::ResolveError& e) {
    CHECK(e.code() == enclave::ResolveErrc::Capacity);
  }

  c.resolver->session_close(a);
  gate::SessionId d = c.resolver->session_open();
  CHECK(d != b);
  c.resolver->session_close(b);
  c.resolver->session_close(d);
}

TEST_CASE("boundary refuses connections over its client budget") {
  testutil::Cluster::Options opt;
  opt.boundary_max_clients = 1;
  testutil::Cluster c(std::move(opt));
  stub::Stub stub(c.stub_config());

  auto held = stub.fresh_session();
  CHECK(held->alive());
  CHECK_THROWS(stub.fresh_session());
  CHECK(c.boundary->refused_connections() == 1);

  held.reset();  // frees the one relay slot
  REQUIRE(eventually([&] { return c.boundary->active_relays() == 0; }));
  auto later = stub.fresh_session();
  CHECK(later->alive());
}

TEST_CASE("adversary mode text forms parse exactly") {
  using host::AdversaryMode;
  CHECK(AdversaryMode::parse("none").kind == AdversaryMode::Kind::None);
  CHECK(AdversaryMode::parse("drop_inbound").kind ==
        AdversaryMode::Kind::DropInbound);
  auto d = AdversaryMode::parse("delay:250");
  CHECK(d.kind == AdversaryMode::Kind::Delay);
  CHECK(d.delay_ms == 250);
  auto r = AdversaryMode::parse("redirect:10.0.0.1:8853");
  CHECK(r.kind == AdversaryMode::Kind::Redirect);
  CHECK(r.redirect_to.str() == "10.0.0.1:8853");
  CHECK_THROWS(AdversaryMode::parse("bogus"));
  CHECK_THROWS(AdversaryMode::parse("delay:fast"));
}

TEST_CASE("host dropping inbound bytes starves the trusted side") {
  testutil::Cluster::Options opt;
  opt.stub_timeout_ms = 900;
  testutil::Cluster c(std::move(opt));
  stub::Stub stub(c.stub_config());

  CHECK(stub.resolve("d0.test", wire::kTypeA).rcode() == wire::kRcodeNoError);
  REQUIRE(eventually([&] { return c.resolver->stats().answered == 1; }));

  c.boundary->set_adversary(host::AdversaryMode::drop_inbound());
  CHECK(stub.resolve("d1.test", wire::kTypeA).rcode() == wire::kRcodeServFail);
  CHECK(c.resolver->stats().queries_received == 1);  // nothing got through

  // Recovery needs a clean session: the dropped record broke the old one.
  c.boundary->set_adversary(host::AdversaryMode::none());
  stub.pool().clear();
  CHECK(stub.resolve("d1.test", wire::kTypeA).rcode() == wire::kRcodeNoError);
}

TEST_CASE("host delay shows up in client latency") {
  testutil::Cluster c;
  stub::Stub stub(c.stub_config());
  CHECK(stub.resolve("d0.test", wire::kTypeA).rcode() == wire::kRcodeNoError);

  c.boundary->set_adversary(host::AdversaryMode::delay(300));
  auto t0 = std::chrono::steady_clock::now();
  CHECK(stub.resolve("d0.test", wire::kTypeA).rcode() == wire::kRcodeNoError);
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - t0)
                .count();
  CHECK(ms >= 295);
}

TEST_CASE("redirected clients notice the impostor before sending a query") {
  testutil::Cluster c;
  stub::Stub stub(c.stub_config());

  // The host reroutes new connections to a name server that presents a
  // perfectly valid CA-signed certificate, but no attestation.
  c.boundary->set_adversary(
      host::AdversaryMode::redirect(c.fleet->node_endpoint("a1")));
  CHECK_THROWS_AS(stub.fresh_session(), stub::VerifyFailure);

  wire::Message r = stub.resolve("d0.test", wire::kTypeA);
  CHECK(r.rcode() == wire::kRcodeServFail);
  CHECK(stub.last_failure() != "");
  CHECK(c.resolver->stats().queries_received == 0);

  c.boundary->set_adversary(host::AdversaryMode::none());
  stub.pool().clear();
  CHECK(stub.resolve("d0.test", wire::kTypeA).rcode() == wire::kRcodeNoError);
}

TEST_CASE("the host side sees ciphertext only, in a bounded number of crossings") {
  testutil::Cluster c;
  c.gate.set_tap(true);
  stub::Stub stub(c.stub_config());

  CHECK(stub.resolve("d0.test", wire::kTypeA).rcode() == wire::kRcodeNoError);
  REQUIRE(eventually([&] { return c.resolver->stats().answered == 1; }));

  auto cold = c.gate.snapshot();
  CHECK(cold.in(gate::kPurposeSessionOpen) == 1);
  CHECK(cold.out(gate::kPurposeUpstreamConnect) == 3);
  CHECK(cold.in(gate::kPurposeClientData) >= 1);
  CHECK(cold.out(gate::kPurposeClientData) >= 1);

  CHECK(c.gate.tap_payloads() > 0);
  // Neither the presentation form nor the wire encoding of the query name
  // may reach the host side.
  CHECK_FALSE(c.gate.tap_contains(util::to_bytes("d0.test")));
  util::Bytes qname_wire = {0x02, 'd', '0', 0x04, 't', 'e', 's', 't', 0x00};
  CHECK_FALSE(c.gate.tap_contains(qname_wire));

  // Warm queries cross only for the query in and the answer out.
  c.gate.reset();
  CHECK(stub.resolve("d0.test", wire::kTypeA).rcode() == wire::kRcodeNoError);
  REQUIRE(eventually([&] { return c.resolver->stats().answered == 2; }));
  auto warm = c.gate.snapshot();
  CHECK(warm.in(gate::kPurposeSessionOpen) == 0);
  CHECK(warm.out(gate::kPurposeUpstreamConnect) == 0);
  CHECK(warm.in(gate::kPurposeClientData) >= 1);
  CHECK(warm.in(gate::kPurposeClientData) <= 3);
  CHECK(warm.out(gate::kPurposeClientData) >= 1);
  CHECK(warm.out(gate::kPurposeClientData) <= 3);
  CHECK_FALSE(c.gate.tap_contains(util::to_bytes("d0.test")));
  CHECK_FALSE(c.gate.tap_contains(qname_wire));
}

TEST_CASE("control channel reports gate and resolver statistics together") {
  testutil::Cluster c;
  stub::Stub stub(c.stub_config());
  CHECK(stub.resolve("d2.test", wire::kTypeA).rcode() == wire::kRcodeNoError);
  REQUIRE(eventually([&] { return c.resolver->stats().answered == 1; }));

  host::ControlServer ctrl("127.0.0.1", 0, c.gate, *c.resolver);
  std::string blob =
      host::fetch_control_stats(util::Endpoint{"127.0.0.1", ctrl.port()});
  auto j = nlohmann::json::parse(blob);
  CHECK(j["resolver"]["queries_received"].get<std::uint64_t>() == 1);
  CHECK(j["resolver"]["answered"].get<std::uint64_t>() == 1);
  CHECK(j["gate"]["calls_in"].contains("client_data"));
  CHECK(j["gate"]["calls_out"].contains("upstream_connect"));
  ctrl.stop();

  auto direct = nlohmann::json::parse(c.resolver->control_stats_json());
  CHECK(direct["handler_pool_size"].get<int>() == 30);
}
