// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/cache/rb_cache.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>

namespace pdot::cache {

using Clock = std::chrono::steady_clock;

struct RbCache::Node {
  CacheKey key;
  std::vector<wire::ResourceRecord> records;
  Clock::time_point insert_time;
  std::uint32_t min_ttl = 0;

  Node* parent = nullptr;
  Node* left = nullptr;
  Node* right = nullptr;
  bool red = true;  // new nodes start red
};

RbCache::RbCache(size_t max_entries) : max_entries_(max_entries) {}

RbCache::~RbCache() { destroy(root_); }

void RbCache::destroy(Node* n) {
  if (!n) return;
  destroy(n->left);
  destroy(n->right);
  delete n;
}

void RbCache::rotate_left(Node* x) {
  Node* y = x->right;
  x->right = y->left;
  if (y->left) y->left->parent = x;
  y->parent = x->parent;
  if (!x->parent) {
    root_ = y;
  } else if (x == x->parent->left) {
    x->parent->left = y;
  } else {
    x->parent->right = y;
  }
  y->left = x;
  x->parent = y;
}

void RbCache::rotate_right(Node* x) {
  Node* y = x->left;
  x->left = y->right;
  if (y->right) y->right->parent = x;
  y->parent = x->parent;
  if (!x->parent) {
    root_ = y;
  } else if (x == x->parent->right) {
    x->parent->right = y;
  } else {
    x->parent->left = y;
  }
  y->right = x;
  x->parent = y;
}

void RbCache::insert_fixup(Node* z) {
  while (z->parent && z->parent->red) {
    Node* grand = z->parent->parent;
    if (z->parent == grand->left) {
      Node* uncle = grand->right;
      if (uncle && uncle->red) {
        z->parent->red = false;
        uncle->red = false;
        grand->red = true;
        z = grand;
      } else {
        if (z == z->parent->right) {
          z = z->parent;
          rotate_left(z);
        }
        z->parent->red = false;
        grand->red = true;
        rotate_right(grand);
      }
    } else {
      Node* uncle = grand->left;
      if (uncle && uncle->red) {
        z->parent->red = false;
        uncle->red = false;
        grand->red = true;
        z = grand;
      } else {
        if (z == z->parent->left) {
          z = z->parent;
          rotate_right(z);
        }
        z->parent->red = false;
        grand->red = true;
        rotate_left(grand);
      }
    }
  }
  root_->red = false;
}

void RbCache::insert(const CacheKey& key, std::vector<wire::ResourceRecord> records) {
  if (records.empty()) {
    throw std::invalid_argument("cache entry needs at least one record");
  }
  std::uint32_t min_ttl = records[0].ttl;
  for (const auto& rr : records) min_ttl = std::min(min_ttl, rr.ttl);

  std::unique_lock lock(mu_);
  Node* parent = nullptr;
  Node** link = &root_;
  while (*link) {
    parent = *link;
    if (key < parent->key) {
      link = &parent->left;
    } else if (parent->key < key) {
      link = &parent->right;
    } else {
      parent->records = std::move(records);
      parent->insert_time = Clock::now();
      parent->min_ttl = min_ttl;
      overwrites_.fetch_add(1, std::memory_order_relaxed);
      return;
    }
  }
  if (size_ >= max_entries_) {
    rejected_.fetch_add(1, std::memory_order_relaxed);
    return;
  }
  Node* z = new Node{key, std::move(records), Clock::now(), min_ttl,
                     parent,  nullptr,           nullptr,     true};
  *link = z;
  ++size_;
  inserts_.fetch_add(1, std::memory_order_relaxed);
  insert_fixup(z);
}

std::optional<std::vector<wire::ResourceRecord>> RbCache::lookup(
    const CacheKey& key, size_t* comparisons) const {
  std::shared_lock lock(mu_);
  size_t cmp = 0;
  const Node* n = root_;
  while (n) {
    ++cmp;
    if (key < n->key) {
      n = n->left;
    } else if (n->key < key) {
      n = n->right;
    } else {
      if (comparisons) *comparisons = cmp;
      auto age = std::chrono::duration_cast<std::chrono::seconds>(
          Clock::now() - n->insert_time);
      if (age.count() > n->min_ttl) {
        expired_.fetch_add(1, std::memory_order_relaxed);
        misses_.fetch_add(1, std::memory_order_relaxed);
        return std::nullopt;
      }
      hits_.fetch_add(1, std::memory_order_relaxed);
      return n->records;
    }
  }
  if (comparisons) *comparisons = cmp;
  misses_.fetch_add(1, std::memory_order_relaxed);
  return std::nullopt;
}

size_t RbCache::size() const {
  std::shared_lock lock(mu_);
  return size_;
}

size_t RbCache::height() const {
  std::shared_lock lock(mu_);
  struct Rec {
    static size_t depth(const Node* n) {
      if (!n) return 0;
      return 1 + std::max(depth(n->left), depth(n->right));
    }
  };
  return Rec::depth(root_);
}

CacheStats RbCache::stats() const {
  CacheStats s;
  s.hits = hits_.load(std::memory_order_relaxed);
  s.misses = misses_.load(std::memory_order_relaxed);
  s.expired_misses = expired_.load(std::memory_order_relaxed);
  s.inserts = inserts_.load(std::memory_order_relaxed);
  s.overwrites = overwrites_.load(std::memory_order_relaxed);
  s.rejected_full = rejected_.load(std::memory_order_relaxed);
  return s;
}

RbCache::Check RbCache::validate() const {
  std::shared_lock lock(mu_);
  if (!root_) return Check::Ok;
  if (root_->red) return Check::RootNotBlack;

  // Walks the tree once; returns black height or -1 on a violation.
  struct Walk {
    Check failure = Check::Ok;
    const CacheKey* prev = nullptr;

    int visit(const RbCache::Node* n) {
      if (!n) return 1;  // nil leaves are black
      if (n->red && ((n->left && n->left->red) || (n->right && n->right->red))) {
        failure = Check::RedRedViolation;
        return -1;
      }
      int lh = visit(n->left);
      if (lh < 0) return -1;
      if (prev && !(*prev < n->key)) {
        failure = Check::OrderViolation;
        return -1;
      }
      prev = &n->key;
      int rh = visit(n->right);
      if (rh < 0) return -1;
      if (lh != rh) {
        failure = Check::BlackHeightMismatch;
        return -1;
      }
      return lh + (n->red ? 0 : 1);
    }
  } walk;

  if (walk.visit(root_) < 0) return walk.failure;
  return Check::Ok;
}

bool RbCache::debug_flip_color(const CacheKey& key) {
  std::unique_lock lock(mu_);
  Node* n = root_;
  while (n) {
    if (key < n->key) {
      n = n->left;
    } else if (n->key < key) {
      n = n->right;
    } else {
      n->red = !n->red;
      return true;
    }
  }
  return false;
}

const char* to_string(RbCache::Check check) {
  switch (check) {
    case RbCache::Check::Ok: return "ok";
    case RbCache::Check::RootNotBlack: return "root-not-black";
    case RbCache::Check::RedRedViolation: return "red-red-violation";
    case RbCache::Check::BlackHeightMismatch: return "black-height-mismatch";
    case RbCache::Check::OrderViolation: return "order-violation";
  }
  return "unknown";
}

size_t preload_from_file(RbCache& cache, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  size_t count = 0;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string domain, qtype, address, ttl_text;
    if (!std::getline(ls, domain, ',') || !std::getline(ls, qtype, ',') ||
        !std::getline(ls, address, ',') || !std::getline(ls, ttl_text)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected domain,qtype,address,ttl");
    }
    std::uint32_t ttl = static_cast<std::uint32_t>(std::stoul(ttl_text));
    wire::DomainName name = wire::DomainName::parse(domain);
    wire::ResourceRecord rr;
    if (qtype == "A" || qtype == "1") {
      rr = wire::ResourceRecord::a(name, address, ttl);
    } else if (qtype == "NS" || qtype == "2") {
      rr = wire::ResourceRecord::ns(name, wire::DomainName::parse(address), ttl);
    } else {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": unsupported qtype " + qtype);
    }
    cache.insert(CacheKey::of(name, rr.rtype), {rr});
    ++count;
  }
  return count;
}

}  // namespace pdot::cache
