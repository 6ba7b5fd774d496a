// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pdot::anon {

/// One row per distinct domain; the first occurrence of a duplicate wins.
struct DomainAnsMap {
  std::vector<std::pair<std::string, std::string>> rows;  // (domain, ans_id)
  size_t duplicates_dropped = 0;

  void add(const std::string& domain, const std::string& ans_id);
  bool contains(const std::string& domain) const;
  std::string to_csv() const;  // header `domain,ans_id`
};

/// CSV with header `domain,ans_id`. Malformed rows report their line number.
DomainAnsMap parse_mapping(const std::string& text);
DomainAnsMap load_mapping(const std::string& path);

/// How well each query hides among the records of the server answering it:
/// a server holding R records gives the observer a 1/R guess.
struct AnonymityDistribution {
  std::map<std::string, size_t> r_of_ans;                  // ans_id -> R
  std::vector<std::pair<std::string, size_t>> domain_r;    // domain -> its server's R

  size_t total_domains() const { return domain_r.size(); }

  /// Fraction of domains whose server holds at least `n` records.
  double fraction_at_least(size_t n) const;

  /// (N, fraction) for every distinct R, ascending in N.
  std::vector<std::pair<size_t, double>> cdf() const;
};

AnonymityDistribution compute_distribution(const DomainAnsMap& map);

std::string cdf_csv(const AnonymityDistribution& dist);
void emit_cdf(const AnonymityDistribution& dist, const std::string& path);

/// Live collection: rate-limited lookups with resume support.
struct CollectOptions {
  double rate_qps = 5;         // hard upper bound on lookup rate
  std::string out_path;        // partial rows land here as they complete
  std::atomic<bool>* stop = nullptr;  // optional early-exit flag
};

struct CollectResult {
  DomainAnsMap map;       // includes rows resumed from out_path
  size_t looked_up = 0;   // lookups actually performed this run
  size_t failures = 0;    // lookups that returned nothing
  bool interrupted = false;
};

/// `lookup` maps a domain to its authoritative-server identifier (for live
/// use, the sorted NS-name set). Failures are recorded and skipped. When
/// out_path already holds rows, those domains are not looked up again.
CollectResult collect_mapping_live(
    const std::vector<std::string>& domains,
    const std::function<std::optional<std::string>(const std::string&)>& lookup,
    const CollectOptions& opt);

}  // namespace pdot::anon
