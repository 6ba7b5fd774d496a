// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/anon/anon.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pdot/util/token_bucket.hpp"

namespace pdot::anon {

void DomainAnsMap::add(const std::string& domain, const std::string& ans_id) {
  if (contains(domain)) {
    ++duplicates_dropped;
    return;
  }
  rows.emplace_back(domain, ans_id);
}

bool DomainAnsMap::contains(const std::string& domain) const {
  return std::any_of(rows.begin(), rows.end(),
                     [&](const auto& r) { return r.first == domain; });
}

std::string DomainAnsMap::to_csv() const {
  std::string out = "domain,ans_id\n";
  for (const auto& [d, a] : rows) out += d + "," + a + "\n";
  return out;
}

DomainAnsMap parse_mapping(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  DomainAnsMap map;
  // Rebuilding the duplicate check per row would be quadratic on large maps.
  std::set<std::string> seen;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "domain,ans_id") {
        throw std::runtime_error("line 1: expected header 'domain,ans_id', got '" + line + "'");
      }
      header_seen = true;
      continue;
    }
    auto comma = line.find(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 >= line.size()) {
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": expected 'domain,ans_id', got '" + line + "'");
    }
    std::string domain = line.substr(0, comma);
    std::string ans = line.substr(comma + 1);
    if (seen.insert(domain).second) {
      map.rows.emplace_back(std::move(domain), std::move(ans));
    } else {
      ++map.duplicates_dropped;
    }
  }
  if (!header_seen) throw std::runtime_error("empty mapping file");
  return map;
}

DomainAnsMap load_mapping(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mapping file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_mapping(ss.str());
}

AnonymityDistribution compute_distribution(const DomainAnsMap& map) {
  if (map.rows.empty()) throw std::invalid_argument("empty mapping");
  AnonymityDistribution dist;
  for (const auto& [domain, ans] : map.rows) ++dist.r_of_ans[ans];
  dist.domain_r.reserve(map.rows.size());
  for (const auto& [domain, ans] : map.rows) {
    dist.domain_r.emplace_back(domain, dist.r_of_ans.at(ans));
  }
  return dist;
}

double AnonymityDistribution::fraction_at_least(size_t n) const {
  if (domain_r.empty()) return 0;
  size_t hit = 0;
  for (const auto& [domain, r] : domain_r) {
    if (r >= n) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(domain_r.size());
}

std::vector<std::pair<size_t, double>> AnonymityDistribution::cdf() const {
  std::set<size_t> values;
  for (const auto& [ans, r] : r_of_ans) values.insert(r);
  std::vector<std::pair<size_t, double>> out;
  out.reserve(values.size());
  for (size_t n : values) out.emplace_back(n, fraction_at_least(n));
  return out;
}

std::string cdf_csv(const AnonymityDistribution& dist) {
  std::ostringstream out;
  out << "n,fraction\n";
  out.precision(10);
  for (const auto& [n, frac] : dist.cdf()) out << n << "," << frac << "\n";
  return out.str();
}

void emit_cdf(const AnonymityDistribution& dist, const std::string& path) {
  auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << cdf_csv(dist);
}

CollectResult collect_mapping_live(
    const std::vector<std::string>& domains,
    const std::function<std::optional<std::string>(const std::string&)>& lookup,
    const CollectOptions& opt) {
  if (opt.rate_qps <= 0) throw std::invalid_argument("rate must be positive");

  CollectResult result;
  std::ofstream out;
  if (!opt.out_path.empty()) {
    if (std::filesystem::exists(opt.out_path)) {
      result.map = load_mapping(opt.out_path);
      out.open(opt.out_path, std::ios::app);
    } else {
      out.open(opt.out_path);
      out << "domain,ans_id\n";
    }
    if (!out) throw std::runtime_error("cannot write " + opt.out_path);
  }

  util::TokenBucket bucket(opt.rate_qps);
  for (const auto& domain : domains) {
    if (opt.stop && opt.stop->load()) {
      result.interrupted = true;
      break;
    }
    if (result.map.contains(domain)) continue;  // resumed from disk
    bucket.acquire();
    ++result.looked_up;
    auto ans = lookup(domain);
    if (!ans) {
      ++result.failures;
      continue;
    }
    result.map.add(domain, *ans);
    if (out.is_open()) {
      out << domain << "," << *ans << "\n";
      out.flush();  // partial results must survive an interrupt
    }
  }
  return result;
}

}  // namespace pdot::anon
