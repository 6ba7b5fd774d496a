// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <atomic>
#include <chrono>
#include <compare>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "pdot/wire/message.hpp"

namespace pdot::cache {

struct CacheKey {
  std::string name;  // lowercase dotted form
  std::uint16_t qtype = wire::kTypeA;

  static CacheKey of(const wire::DomainName& n, std::uint16_t qtype) {
    return CacheKey{n.key(), qtype};
  }
  auto operator<=>(const CacheKey&) const = default;
};

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t expired_misses = 0;  // also counted in misses
  std::uint64_t inserts = 0;
  std::uint64_t overwrites = 0;
  std::uint64_t rejected_full = 0;
};

/// Record cache backed by a hand-rolled red-black tree.
///
/// Entries never leave the tree: expiry is lazy (an entry older than the
/// smallest TTL among its records answers as a miss) and a later insert of
/// the same key overwrites in place, so no delete rebalancing is needed.
/// Inserts of new keys beyond max_entries are silently dropped.
/// Many readers or one writer may operate concurrently.
class RbCache {
 public:
  explicit RbCache(size_t max_entries = 1'000'000);
  ~RbCache();
  RbCache(const RbCache&) = delete;

  /// `records` must be non-empty.
  void insert(const CacheKey& key, std::vector<wire::ResourceRecord> records);

  /// Read-only; `comparisons` (when given) receives the number of key
  /// comparisons this lookup performed.
  std::optional<std::vector<wire::ResourceRecord>> lookup(
      const CacheKey& key, size_t* comparisons = nullptr) const;

  size_t size() const;
  size_t height() const;
  CacheStats stats() const;

  enum class Check { Ok, RootNotBlack, RedRedViolation, BlackHeightMismatch, OrderViolation };
  Check validate() const;

  /// Test hook: flips the color of the node holding `key`, breaking the tree
  /// on purpose. Returns false when the key is absent.
  bool debug_flip_color(const CacheKey& key);

 private:
  struct Node;

  void rotate_left(Node* x);
  void rotate_right(Node* x);
  void insert_fixup(Node* z);
  static void destroy(Node* n);

  mutable std::shared_mutex mu_;
  Node* root_ = nullptr;
  size_t size_ = 0;
  size_t max_entries_;

  mutable std::atomic<std::uint64_t> hits_{0};
  mutable std::atomic<std::uint64_t> misses_{0};
  mutable std::atomic<std::uint64_t> expired_{0};
  std::atomic<std::uint64_t> inserts_{0};
  std::atomic<std::uint64_t> overwrites_{0};
  std::atomic<std::uint64_t> rejected_{0};
};

const char* to_string(RbCache::Check check);

/// Loads `domain,qtype,address,ttl` lines (qtype A or NS; '#' comments).
/// Returns the number of entries inserted.
size_t preload_from_file(RbCache& cache, const std::string& path);

}  // namespace pdot::cache
