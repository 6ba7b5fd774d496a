// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <chrono>
#include <mutex>

namespace pdot::util {

/// Token bucket with a capacity of one token: callers are spaced at least
/// 1/rate apart, so the configured rate is never exceeded even in bursts.
class TokenBucket {
 public:
  explicit TokenBucket(double tokens_per_second);

  /// Blocks until the next token is available, then consumes it.
  void acquire();

  /// Time the next token becomes available (for tests).
  std::chrono::steady_clock::time_point next_ready() const;

 private:
  std::chrono::steady_clock::duration interval_;
  mutable std::mutex mx_;
  std::chrono::steady_clock::time_point next_;
};

}  // namespace pdot::util
