// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/bench/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <thread>

#include <json.hpp>

namespace pdot::bench {

using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  double pos = q * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<size_t>(pos);
  double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted[lo];
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

BoxStats BoxStats::compute(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("BoxStats of empty sample");
  std::sort(samples.begin(), samples.end());
  BoxStats b;
  b.n = samples.size();
  b.q1 = quantile_sorted(samples, 0.25);
  b.median = quantile_sorted(samples, 0.5);
  b.q3 = quantile_sorted(samples, 0.75);
  double iqr = b.q3 - b.q1;
  double fence_lo = b.q1 - 1.5 * iqr;
  double fence_hi = b.q3 + 1.5 * iqr;
  // Whiskers snap to the outermost actual data inside the fences. The box
  // itself always lies inside them, so both bounds exist.
  b.whisker_lo = *std::find_if(samples.begin(), samples.end(),
                               [&](double v) { return v >= fence_lo; });
  for (double v : samples) {
    if (v <= fence_hi) b.whisker_hi = v;
  }
  return b;
}

std::string BoxStats::to_json() const {
  nlohmann::json j;
  j["whisker_lo"] = whisker_lo;
  j["q1"] = q1;
  j["median"] = median;
  j["q3"] = q3;
  j["whisker_hi"] = whisker_hi;
  j["n"] = n;
  return j.dump();
}

std::vector<LatencyRow> run_latency(stub::Stub& stub, const LatencyOptions& opt) {
  if (opt.domains.empty()) throw BenchError("no domains to measure");
  if (opt.repeats < 1) throw BenchError("repeats must be at least 1");

  static thread_local std::mt19937 rng{std::random_device{}()};

  if (opt.mode == LatencyMode::Warm) {
    // One untimed query establishes the pooled session.
    std::string warmup = opt.warmup_domain.empty() ? "warmup.invalid" : opt.warmup_domain;
    auto reply = stub.resolve(warmup, wire::kTypeA);
    if (reply.rcode() == wire::kRcodeServFail) {
      throw BenchError("warm-up query for " + warmup + " failed: " + stub.last_failure());
    }
  }

  std::vector<LatencyRow> rows;
  for (const auto& domain : opt.domains) {
    LatencyRow row;
    row.domain = domain;
    row.samples_ms.reserve(static_cast<size_t>(opt.repeats));
    for (int i = 0; i < opt.repeats; ++i) {
      auto query = wire::make_query(static_cast<std::uint16_t>(rng()),
                                    wire::DomainName::parse(domain), wire::kTypeA);
      Clock::time_point t0 = Clock::now();
      wire::Message reply;
      if (opt.mode == LatencyMode::Cold) {
        // The clock covers connect + handshake + verification + the query.
        try {
          auto session = stub.fresh_session();
          reply = session->ask(query, stub.config().query_timeout_ms);
        } catch (const std::exception& e) {
          throw BenchError("cold query for " + domain + " failed: " + e.what());
        }
      } else {
        reply = stub.resolve(query);
      }
      double elapsed = ms_since(t0);
      if (reply.rcode() == wire::kRcodeServFail) {
        throw BenchError("query " + std::to_string(i) + " for " + domain +
                         " returned SERVFAIL: " + stub.last_failure());
      }
      row.samples_ms.push_back(elapsed);
    }
    row.stats = BoxStats::compute(row.samples_ms);
    rows.push_back(std::move(row));
  }
  return rows;
}

bool detect_sustainable(const std::vector<Sample>& samples, double duration_s) {
  if (samples.size() < 2) throw std::invalid_argument("need at least 2 samples");
  double total = 0;
  double first_sum = 0, final_sum = 0;
  size_t first_n = 0, final_n = 0;
  double quarter_ms = duration_s * 1000.0 / 4.0;
  double final_from = 3.0 * quarter_ms;
  for (const auto& s : samples) {
    total += s.latency_ms;
    if (s.offset_ms < quarter_ms) {
      first_sum += s.latency_ms;
      ++first_n;
    } else if (s.offset_ms >= final_from) {
      final_sum += s.latency_ms;
      ++final_n;
    }
  }
  if (first_n == 0 || final_n == 0) {
    throw std::invalid_argument("a quarter of the run holds no samples");
  }
  double mean = total / static_cast<double>(samples.size());
  double first_mean = first_sum / static_cast<double>(first_n);
  double final_mean = final_sum / static_cast<double>(final_n);
  return mean < 1000.0 && final_mean <= 1.25 * first_mean;
}

ThroughputRun run_throughput(stub::Stub& stub, const ThroughputOptions& opt) {
  if (opt.clients < 1) throw BenchError("clients must be at least 1");
  if (opt.rate_qps <= 0) throw BenchError("rate must be positive");
  if (opt.domain.empty()) throw BenchError("throughput runs need a target domain");

  ThroughputRun run;
  run.clients = opt.clients;
  run.rate_qps = opt.rate_qps;
  run.duration_s = opt.duration_s;

  double per_client_qps = opt.rate_qps / opt.clients;
  auto interarrival =
      std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / per_client_qps));
  auto n_queries = static_cast<size_t>(per_client_qps * opt.duration_s);
  if (n_queries == 0) throw BenchError("rate too low for the duration");

  std::mutex sink_mu;
  std::vector<Sample> sink;
  std::atomic<size_t> sent{0};
  std::atomic<size_t> unanswered{0};
  std::mutex err_mu;
  std::string error;

  // Sessions are established before the clock starts; the measurement covers
  // steady-state service, not handshakes.
  std::vector<std::shared_ptr<stub::VerifiedSession>> sessions;
  for (int c = 0; c < opt.clients; ++c) {
    try {
      sessions.push_back(stub.fresh_session());
    } catch (const std::exception& e) {
      run.failed = true;
      run.error = std::string("client setup: ") + e.what();
      return run;
    }
  }

  Clock::time_point start = Clock::now();
  std::vector<std::thread> clients;
  for (int c = 0; c < opt.clients; ++c) {
    clients.emplace_back([&, c] {
      auto& session = *sessions[static_cast<size_t>(c)];
      std::mt19937 rng{std::random_device{}()};
      for (size_t i = 0; i < n_queries; ++i) {
        std::this_thread::sleep_until(start + (i + 1) * interarrival);
        auto query = wire::make_query(static_cast<std::uint16_t>(rng()),
                                      wire::DomainName::parse(opt.domain), wire::kTypeA);
        Clock::time_point sent_at = Clock::now();
        double offset = std::chrono::duration<double, std::milli>(sent_at - start).count();
        sent.fetch_add(1);
        // Every issued query ends up either in the sink or in `unanswered`.
        try {
          session.ask_callback(query, [&, offset, sent_at](std::optional<wire::Message> reply) {
            if (!reply || reply->rcode() != wire::kRcodeNoError) {
              unanswered.fetch_add(1);
              return;
            }
            double latency = std::chrono::duration<double, std::milli>(Clock::now() - sent_at).count();
            std::lock_guard lk(sink_mu);
            sink.push_back({offset, latency});
          });
        } catch (const std::exception& e) {
          unanswered.fetch_add(1);
          std::lock_guard lk(err_mu);
          if (error.empty()) error = e.what();
        }
      }
    });
  }
  for (auto& t : clients) t.join();

  // Give late answers one timeout's worth of grace before closing sessions.
  auto grace_end = Clock::now() + std::chrono::milliseconds(stub.config().query_timeout_ms);
  while (Clock::now() < grace_end) {
    size_t answered;
    {
      std::lock_guard lk(sink_mu);
      answered = sink.size();
    }
    if (answered + unanswered.load() >= sent.load()) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  // Teardown joins each session's reader, which fails anything still pending
  // into `unanswered` before the counters are read.
  sessions.clear();

  run.sent = sent.load();
  run.unanswered = unanswered.load();
  {
    std::lock_guard lk(sink_mu);
    run.samples = std::move(sink);
  }
  if (!error.empty()) run.error = error;
  try {
    run.sustainable = !run.samples.empty() &&
                      run.unanswered == 0 &&
                      detect_sustainable(run.samples, opt.duration_s);
  } catch (const std::invalid_argument&) {
    run.sustainable = false;
  }
  return run;
}

std::string ThroughputRun::to_json() const {
  nlohmann::json j;
  j["clients"] = clients;
  j["rate_qps"] = rate_qps;
  j["duration_s"] = duration_s;
  j["sent"] = sent;
  j["answered"] = samples.size();
  j["unanswered"] = unanswered;
  j["failed"] = failed;
  j["sustainable"] = sustainable;
  if (!error.empty()) j["error"] = error;
  if (!samples.empty()) {
    double total = 0;
    for (const auto& s : samples) total += s.latency_ms;
    j["mean_latency_ms"] = total / static_cast<double>(samples.size());
  }
  return j.dump();
}

BoxStats run_cache_eval(stub::Stub& stub, const CacheEvalOptions& opt) {
  if (opt.probe_domains.empty()) throw BenchError("no probe domains");
  std::set<std::string> known(opt.prepopulated.begin(), opt.prepopulated.end());
  for (const auto& p : opt.probe_domains) {
    if (!known.count(p)) {
      throw BenchError("probe domain " + p + " is not in the pre-population set");
    }
  }
  LatencyOptions lat;
  lat.mode = LatencyMode::Warm;
  lat.domains = opt.probe_domains;
  lat.repeats = opt.repeats;
  lat.warmup_domain = opt.probe_domains.front();
  auto rows = run_latency(stub, lat);
  std::vector<double> all;
  for (const auto& r : rows) {
    all.insert(all.end(), r.samples_ms.begin(), r.samples_ms.end());
  }
  return BoxStats::compute(std::move(all));
}

void write_file(const std::string& path, const std::string& content) {
  auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw BenchError("cannot write " + path);
  out << content;
}

void write_latency_csv(const std::string& path, const std::vector<LatencyRow>& rows) {
  std::string csv = "domain,repeat,latency_ms\n";
  for (const auto& r : rows) {
    for (size_t i = 0; i < r.samples_ms.size(); ++i) {
      csv += r.domain + "," + std::to_string(i) + "," + std::to_string(r.samples_ms[i]) + "\n";
    }
  }
  write_file(path, csv);
}

void write_latency_json(const std::string& path, const std::vector<LatencyRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = nlohmann::json::parse(r.stats.to_json());
    j["domain"] = r.domain;
    arr.push_back(std::move(j));
  }
  write_file(path, arr.dump(2) + "\n");
}

void write_throughput_csv(const std::string& path, const ThroughputRun& run) {
  std::string csv = "offset_ms,latency_ms\n";
  for (const auto& s : run.samples) {
    csv += std::to_string(s.offset_ms) + "," + std::to_string(s.latency_ms) + "\n";
  }
  write_file(path, csv);
}

}  // namespace pdot::bench
