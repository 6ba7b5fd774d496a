// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <string>
#include <vector>

#include "pdot/stub/stub.hpp"

namespace pdot::bench {

class BenchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Five-number summary for a box plot. Quartiles use linear interpolation at
/// rank q*(n-1) on the sorted samples; whiskers are the outermost data points
/// within 1.5*IQR of the box.
struct BoxStats {
  double whisker_lo = 0;
  double q1 = 0;
  double median = 0;
  double q3 = 0;
  double whisker_hi = 0;
  size_t n = 0;

  static BoxStats compute(std::vector<double> samples);  // throws on empty
  std::string to_json() const;
};

/// Interpolated quantile (0 <= q <= 1) of an ascending-sorted sample vector.
double quantile_sorted(const std::vector<double>& sorted, double q);

// ---------------------------------------------------------------- latency --

enum class LatencyMode { Cold, Warm };

struct LatencyOptions {
  LatencyMode mode = LatencyMode::Warm;
  std::vector<std::string> domains;
  int repeats = 100;
  std::string warmup_domain;  // warm mode: untimed first query, out of set
};

struct LatencyRow {
  std::string domain;
  std::vector<double> samples_ms;  // in issue order
  BoxStats stats;
};

/// Sequential cold/warm latency measurement. Any SERVFAIL (or cold-path
/// connection failure) aborts with a BenchError naming the domain.
std::vector<LatencyRow> run_latency(stub::Stub& stub, const LatencyOptions& opt);

// ------------------------------------------------------------- throughput --

struct Sample {
  double offset_ms = 0;   // send time relative to run start
  double latency_ms = 0;
};

struct ThroughputOptions {
  int clients = 1;
  double rate_qps = 5;    // aggregate; divided uniformly among clients
  int duration_s = 60;
  std::string domain;     // every query targets this one name
};

struct ThroughputRun {
  int clients = 0;
  double rate_qps = 0;
  int duration_s = 0;
  std::vector<Sample> samples;  // answered queries only, send order not guaranteed
  size_t sent = 0;
  size_t unanswered = 0;
  bool failed = false;          // a client could not establish its session
  std::string error;
  bool sustainable = false;

  std::string to_json() const;
};

/// Mean latency must stay under 1 s and the final quarter of the run must
/// average no more than 1.25x the first quarter. Throws std::invalid_argument
/// when either quarter holds no samples.
bool detect_sustainable(const std::vector<Sample>& samples, double duration_s);

ThroughputRun run_throughput(stub::Stub& stub, const ThroughputOptions& opt);

// ------------------------------------------------------------------ cache --

struct CacheEvalOptions {
  std::vector<std::string> probe_domains;
  std::vector<std::string> prepopulated;  // domains known to be in cache
  int repeats = 10;
};

/// Warm-session latency over cache-resident probe domains. Refuses probes
/// outside the pre-population set.
BoxStats run_cache_eval(stub::Stub& stub, const CacheEvalOptions& opt);

// ------------------------------------------------------------------ files --

void write_latency_csv(const std::string& path, const std::vector<LatencyRow>& rows);
void write_latency_json(const std::string& path, const std::vector<LatencyRow>& rows);
void write_throughput_csv(const std::string& path, const ThroughputRun& run);
void write_file(const std::string& path, const std::string& content);

}  // namespace pdot::bench
