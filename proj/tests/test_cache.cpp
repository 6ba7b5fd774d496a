// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <thread>

#include "pdot/cache/rb_cache.hpp"
#include "testutil.hpp"

using namespace pdot::cache;
using pdot::wire::DomainName;
using pdot::wire::ResourceRecord;
using pdot::wire::kTypeA;
using pdot::wire::kTypeNs;

namespace {

CacheKey key_of(const std::string& name, std::uint16_t qtype = kTypeA) {
  return CacheKey::of(DomainName::parse(name), qtype);
}

std::vector<ResourceRecord> a_records(const std::string& name, const std::string& ip,
                                      std::uint32_t ttl = 300) {
  return {ResourceRecord::a(DomainName::parse(name), ip, ttl)};
}

}  // namespace

TEST_CASE("insert, hit, and miss") {
  RbCache cache;
  cache.insert(key_of("a.test"), a_records("a.test", "10.0.0.1"));
  auto hit = cache.lookup(key_of("a.test"));
  REQUIRE(hit.has_value());
  CHECK(hit->at(0).a_address() == "10.0.0.1");

  CHECK_FALSE(cache.lookup(key_of("b.test")).has_value());
  CHECK_FALSE(cache.lookup(key_of("a.test", kTypeNs)).has_value());  // distinct keys

  auto stats = cache.stats();
  CHECK(stats.hits == 1);
  CHECK(stats.misses == 2);
  CHECK(stats.inserts == 1);
  CHECK(cache.size() == 1);
}

TEST_CASE("key lookup ignores name case") {
  RbCache cache;
  cache.insert(key_of("Mixed.Case.Test"), a_records("Mixed.Case.Test", "10.0.0.7"));
  CHECK(cache.lookup(key_of("mixed.case.test")).has_value());
  CHECK(cache.lookup(key_of("MIXED.CASE.TEST")).has_value());
}

TEST_CASE("reinsert overwrites in place") {
  RbCache cache;
  cache.insert(key_of("a.test"), a_records("a.test", "10.0.0.1"));
  cache.insert(key_of("a.test"), a_records("a.test", "10.0.0.2"));
  CHECK(cache.size() == 1);
  CHECK(cache.lookup(key_of("a.test"))->at(0).a_address() == "10.0.0.2");
  auto stats = cache.stats();
  CHECK(stats.inserts == 1);
  CHECK(stats.overwrites == 1);
  CHECK(cache.validate() == RbCache::Check::Ok);
}

TEST_CASE("expiry is lazy and read-only") {
  RbCache cache;
  cache.insert(key_of("gone.test"), a_records("gone.test", "10.0.0.1", 0));
  cache.insert(key_of("stays.test"), a_records("stays.test", "10.0.0.2", 600));
  // Ages are whole seconds; a ttl of 0 lapses once age exceeds zero seconds.
  std::this_thread::sleep_for(std::chrono::milliseconds(1100));

  CHECK_FALSE(cache.lookup(key_of("gone.test")).has_value());
  auto stats = cache.stats();
  CHECK(stats.expired_misses == 1);
  CHECK(stats.misses == 1);
  // The node is still in the tree; only its answer expired.
  CHECK(cache.size() == 2);
  CHECK(cache.validate() == RbCache::Check::Ok);
  CHECK(cache.lookup(key_of("stays.test")).has_value());

  // Refreshing the expired key revives it without growing the tree.
  cache.insert(key_of("gone.test"), a_records("gone.test", "10.0.0.3", 600));
  CHECK(cache.size() == 2);
  CHECK(cache.lookup(key_of("gone.test"))->at(0).a_address() == "10.0.0.3");
}

TEST_CASE("entry expires at the smallest ttl among its records") {
  RbCache cache;
  std::vector<ResourceRecord> mixed = {
      ResourceRecord::a(DomainName::parse("multi.test"), "10.0.0.1", 600),
      ResourceRecord::a(DomainName::parse("multi.test"), "10.0.0.2", 0),
  };
  cache.insert(key_of("multi.test"), mixed);
  std::this_thread::sleep_for(std::chrono::milliseconds(1100));
  CHECK_FALSE(cache.lookup(key_of("multi.test")).has_value());
}

TEST_CASE("capacity rejects new keys but not overwrites") {
  RbCache cache(3);
  cache.insert(key_of("a.test"), a_records("a.test", "10.0.0.1"));
  cache.insert(key_of("b.test"), a_records("b.test", "10.0.0.2"));
  cache.insert(key_of("c.test"), a_records("c.test", "10.0.0.3"));
  cache.insert(key_of("d.test"), a_records("d.test", "10.0.0.4"));  // dropped
  CHECK(cache.size() == 3);
  CHECK_FALSE(cache.lookup(key_of("d.test")).has_value());
  CHECK(cache.stats().rejected_full == 1);

  cache.insert(key_of("b.test"), a_records("b.test", "10.9.9.9"));
  CHECK(cache.size() == 3);
  CHECK(cache.lookup(key_of("b.test"))->at(0).a_address() == "10.9.9.9");
}

TEST_CASE("empty record set is refused") {
  RbCache cache;
  CHECK_THROWS_AS(cache.insert(key_of("x.test"), {}), std::invalid_argument);
}

TEST_CASE("behavior matches a linear-scan reference over random operations") {
  RbCache cache;
  std::map<CacheKey, std::string> reference;
  std::mt19937 rng(20240612);
  std::uniform_int_distribution<int> name_pick(0, 199);
  std::uniform_int_distribution<int> op_pick(0, 2);

  for (int i = 0; i < 5000; ++i) {
    std::string name = "n" + std::to_string(name_pick(rng)) + ".test";
    CacheKey k = key_of(name);
    if (op_pick(rng) == 0) {
      std::string ip = "10.3." + std::to_string(rng() % 256) + "." +
                       std::to_string(rng() % 256);
      cache.insert(k, a_records(name, ip, 3600));
      reference[k] = ip;
    } else {
      auto got = cache.lookup(k);
      auto want = reference.find(k);
      if (want == reference.end()) {
        CHECK_FALSE(got.has_value());
      } else {
        REQUIRE(got.has_value());
        CHECK(got->at(0).a_address() == want->second);
      }
    }
  }
  CHECK(cache.size() == reference.size());
  CHECK(cache.validate() == RbCache::Check::Ok);
}

TEST_CASE("tree stays balanced: red-black height bound holds") {
  RbCache cache;
  // Ascending keys are the classic worst case for an unbalanced tree.
  for (int i = 0; i < 4096; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "k%06d.test", i);
    cache.insert(key_of(buf), a_records(buf, "10.0.0.1"));
  }
  CHECK(cache.validate() == RbCache::Check::Ok);
  size_t n = cache.size();
  REQUIRE(n == 4096);
  double bound = 2.0 * std::log2(static_cast<double>(n) + 1.0);
  CHECK(cache.height() <= static_cast<size_t>(bound));

  // Lookups walk one root-to-node path: comparisons are bounded by height+1.
  size_t comparisons = 0;
  cache.lookup(key_of("k000000.test"), &comparisons);
  CHECK(comparisons <= cache.height() + 1);
  comparisons = 0;
  cache.lookup(key_of("missing.test"), &comparisons);
  CHECK(comparisons <= cache.height() + 1);
}

TEST_CASE("validator notices a corrupted tree") {
  RbCache cache;
  for (int i = 0; i < 64; ++i) {
    std::string name = "v" + std::to_string(i) + ".test";
    cache.insert(key_of(name), a_records(name, "10.0.0.1"));
  }
  REQUIRE(cache.validate() == RbCache::Check::Ok);
  REQUIRE(cache.debug_flip_color(key_of("v31.test")));
  auto check = cache.validate();
  CHECK(check != RbCache::Check::Ok);
  CHECK(std::string(to_string(check)) != "Ok");
  CHECK_FALSE(cache.debug_flip_color(key_of("absent.test")));
}

TEST_CASE("concurrent readers and a writer keep the tree consistent") {
  RbCache cache;
  std::atomic<bool> stop{false};
  std::vector<std::thread> readers;
  for (int t = 0; t < 4; ++t) {
    readers.emplace_back([&cache, &stop, t] {
      std::mt19937 rng(t);
      while (!stop) {
        std::string name = "c" + std::to_string(rng() % 500) + ".test";
        cache.lookup(key_of(name));
      }
    });
  }
  for (int i = 0; i < 500; ++i) {
    std::string name = "c" + std::to_string(i) + ".test";
    cache.insert(key_of(name), a_records(name, "10.0.0.1"));
  }
  stop = true;
  for (auto& r : readers) r.join();
  CHECK(cache.size() == 500);
  CHECK(cache.validate() == RbCache::Check::Ok);
}

TEST_CASE("preload file format") {
  std::string dir = pdot::testutil::tmp_dir("preload");
  pdot::testutil::write_text(dir + "/seed.csv",
                             "# seeded records\n"
                             "a.test,A,10.0.0.1,300\n"
                             "b.test,NS,ns1.b.test,600\n"
                             "c.test,1,10.0.0.3,60\n");
  RbCache cache;
  CHECK(preload_from_file(cache, dir + "/seed.csv") == 3);
  CHECK(cache.lookup(key_of("a.test"))->at(0).a_address() == "10.0.0.1");
  auto ns = cache.lookup(key_of("b.test", kTypeNs));
  REQUIRE(ns.has_value());
  CHECK(ns->at(0).ns_target() == DomainName::parse("ns1.b.test"));
  CHECK(cache.lookup(key_of("c.test"))->at(0).a_address() == "10.0.0.3");

  pdot::testutil::write_text(dir + "/bad.csv", "a.test,A,10.0.0.1\n");
  RbCache other;
  CHECK_THROWS_AS(preload_from_file(other, dir + "/bad.csv"), std::runtime_error);
  pdot::testutil::write_text(dir + "/badtype.csv", "a.test,TXT,hello,60\n");
  CHECK_THROWS_AS(preload_from_file(other, dir + "/badtype.csv"), std::runtime_error);
  CHECK_THROWS_AS(preload_from_file(other, dir + "/missing.csv"), std::runtime_error);
}
