// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>

namespace pdot::util {

/// Bounded multi-producer/multi-consumer FIFO.
///
/// push() blocks while the queue is full (backpressure). pop() blocks until an
/// element is available and returns nullopt once the queue is closed and
/// drained. close() wakes every blocked producer and consumer.
///
/// Consumers only ever see the head element; the inspected/popped counters
/// exist so tests can assert that dequeueing is O(1) head selection and never
/// a scan.
template <typename T>
class BlockingQueue {
 public:
  explicit BlockingQueue(size_t capacity = SIZE_MAX) : capacity_(capacity) {}

  /// Returns false if the queue was closed before space became available.
  bool push(T item) {
    std::unique_lock lock(mx_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    ++pushes_;
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mx_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    ++pops_;
    ++inspected_;  // only the head is ever examined
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mx_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mx_);
    return closed_;
  }

  size_t size() const {
    std::lock_guard lock(mx_);
    return items_.size();
  }

  std::uint64_t pushes() const {
    std::lock_guard lock(mx_);
    return pushes_;
  }
  std::uint64_t pops() const {
    std::lock_guard lock(mx_);
    return pops_;
  }
  std::uint64_t elements_inspected() const {
    std::lock_guard lock(mx_);
    return inspected_;
  }

 private:
  mutable std::mutex mx_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<T> items_;
  size_t capacity_;
  bool closed_ = false;
  std::uint64_t pushes_ = 0;
  std::uint64_t pops_ = 0;
  std::uint64_t inspected_ = 0;
};

}  // namespace pdot::util
