// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/util/token_bucket.hpp"

#include <stdexcept>
#include <thread>

namespace pdot::util {

TokenBucket::TokenBucket(double tokens_per_second) {
  if (tokens_per_second <= 0) throw std::invalid_argument("rate must be positive");
  interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / tokens_per_second));
  next_ = std::chrono::steady_clock::now();
}

void TokenBucket::acquire() {
  std::chrono::steady_clock::time_point wake;
  {
    std::lock_guard lock(mx_);
    auto now = std::chrono::steady_clock::now();
    if (next_ < now) next_ = now;
    wake = next_;
    next_ += interval_;
  }
  std::this_thread::sleep_until(wake);
}

std::chrono::steady_clock::time_point TokenBucket::next_ready() const {
  std::lock_guard lock(mx_);
  return next_;
}

}  // namespace pdot::util
