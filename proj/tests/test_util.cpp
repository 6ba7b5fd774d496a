// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include <doctest.h>

#include <chrono>
#include <thread>

#include "pdot/util/bytes.hpp"
#include "pdot/util/endpoint.hpp"
#include "pdot/util/kv_config.hpp"
#include "pdot/util/net.hpp"
#include "pdot/util/token_bucket.hpp"

using namespace pdot::util;

TEST_CASE("hex round-trips and rejects junk") {
  Bytes data = {0x00, 0x0f, 0xa5, 0xff};
  CHECK(to_hex(data) == "000fa5ff");
  CHECK(from_hex("000fa5ff") == data);
  CHECK(from_hex("000FA5FF") == data);
  CHECK_THROWS_AS(from_hex("0g"), std::invalid_argument);
  CHECK_THROWS_AS(from_hex("abc"), std::invalid_argument);  // odd length
  CHECK(from_hex("").empty());
}

TEST_CASE("byte substring search") {
  Bytes hay = to_bytes("the quick brown fox");
  CHECK(contains(hay, to_bytes("quick")));
  CHECK(contains(hay, to_bytes("the")));
  CHECK(contains(hay, to_bytes("fox")));
  CHECK_FALSE(contains(hay, to_bytes("foxx")));
  CHECK(contains(hay, Bytes{}));
  CHECK_FALSE(contains(Bytes{}, to_bytes("x")));
}

TEST_CASE("endpoint parsing") {
  Endpoint ep = Endpoint::parse("127.0.0.1:853");
  CHECK(ep.host == "127.0.0.1");
  CHECK(ep.port == 853);
  CHECK(ep.str() == "127.0.0.1:853");
  CHECK_THROWS_AS(Endpoint::parse("127.0.0.1"), std::invalid_argument);
  CHECK_THROWS_AS(Endpoint::parse("host:"), std::invalid_argument);
  CHECK_THROWS_AS(Endpoint::parse(":80"), std::invalid_argument);
  CHECK_THROWS_AS(Endpoint::parse("h:99999"), std::invalid_argument);
  CHECK_THROWS_AS(Endpoint::parse("h:80x"), std::invalid_argument);
}

TEST_CASE("kv config grammar") {
  auto cfg = KvConfig::parse_text(
      "# comment\n"
      "alpha = 1\n"
      "beta=two words  # trailing comment\n"
      "\n"
      "alpha = 3\n",
      "t");
  CHECK(cfg.get("alpha") == "3");  // last wins
  CHECK(cfg.get_all("alpha") == std::vector<std::string>{"1", "3"});
  CHECK(cfg.get("beta") == "two words");
  CHECK(cfg.get_int("alpha", 0) == 3);
  CHECK(cfg.get_int("missing", 42) == 42);
  CHECK(cfg.get_or("missing", "x") == "x");
  CHECK_FALSE(cfg.has("gamma"));
  CHECK_THROWS(cfg.get("gamma"));
  CHECK_THROWS_WITH_AS(KvConfig::parse_text("novalue\n", "t"),
                       doctest::Contains("t:1"), std::runtime_error);
  CHECK_THROWS_AS(KvConfig::parse_text("= x\n", "t"), std::runtime_error);
}

TEST_CASE("kv config booleans") {
  auto cfg = KvConfig::parse_text("a = true\nb = false\nc = 1\nd = 0\n", "t");
  CHECK(cfg.get_bool("a", false));
  CHECK_FALSE(cfg.get_bool("b", true));
  CHECK(cfg.get_bool("c", false));
  CHECK_FALSE(cfg.get_bool("d", true));
  CHECK(cfg.get_bool("missing", true));
}

TEST_CASE("token bucket paces callers at the configured rate") {
  // 3 acquisitions after the free first one at 20/s: at least 150 ms total.
  TokenBucket bucket(20.0);
  auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 4; ++i) bucket.acquire();
  auto elapsed = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - start)
                     .count();
  CHECK(elapsed >= 149.0);
  CHECK(elapsed < 1000.0);
}

TEST_CASE("token bucket never exceeds rate under burst") {
  TokenBucket bucket(100.0);
  auto t0 = std::chrono::steady_clock::now();
  int n = 20;
  for (int i = 0; i < n; ++i) bucket.acquire();
  auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  // n acquisitions in dt seconds; observed rate bounded by the configured one
  // with one free initial token.
  CHECK(static_cast<double>(n - 1) / dt <= 100.0 * 1.05);
}

TEST_CASE("tcp loopback echo with exact reads") {
  TcpListener listener("127.0.0.1", 0);
  std::thread server([&] {
    auto conn = listener.accept();
    REQUIRE(conn.has_value());
    Bytes got = conn->recv_exact(5, 2000);
    conn->send_all(got);
  });
  TcpSocket client = TcpSocket::connect(listener.endpoint(), 2000);
  client.send_all(to_bytes("hello"));
  Bytes echoed = client.recv_exact(5, 2000);
  CHECK(to_string(echoed) == "hello");
  server.join();
}

TEST_CASE("tcp recv_some times out rather than blocking forever") {
  TcpListener listener("127.0.0.1", 0);
  std::thread server([&] {
    auto conn = listener.accept();
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
  });
  TcpSocket client = TcpSocket::connect(listener.endpoint(), 2000);
  CHECK_THROWS_AS(client.recv_some(16, 50), NetTimeout);
  server.join();
}

TEST_CASE("listener stop unblocks accept") {
  TcpListener listener("127.0.0.1", 0);
  std::thread waiter([&] { CHECK_FALSE(listener.accept().has_value()); });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  listener.stop();
  waiter.join();
}
