// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
//
// Anonymity-set analysis over domain -> authoritative-server mappings.
// `collect` builds the mapping with live NS lookups; `compute` turns a
// mapping into a cumulative distribution of server record counts.

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pdot/anon/anon.hpp"
#include "pdot/stub/stub.hpp"

namespace {

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] != '#') lines.push_back(line);
  }
  return lines;
}

int run_compute(const std::string& input, const std::string& out,
                const std::vector<size_t>& thresholds) {
  auto map = pdot::anon::load_mapping(input);
  if (map.duplicates_dropped > 0) {
    std::cerr << "warning: dropped " << map.duplicates_dropped << " duplicate rows\n";
  }
  auto dist = pdot::anon::compute_distribution(map);
  pdot::anon::emit_cdf(dist, out);

  std::cout << map.rows.size() << " domains across " << dist.r_of_ans.size()
            << " authoritative servers\n";
  for (size_t n : thresholds) {
    std::cout << "fraction with R >= " << n << ": " << dist.fraction_at_least(n) << "\n";
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

int run_collect(const std::string& domains_path, double rate, const std::string& out,
                const std::string& config_path, bool legacy) {
  auto cfg = pdot::stub::StubConfig::load_file(config_path);
  if (legacy) cfg.policy.require_attestation = false;
  pdot::stub::Stub stub(cfg);

  // A domain's server identity is its full NS set: same set, same observer
  // ambiguity, regardless of which server name answered.
  auto lookup = [&stub](const std::string& domain) -> std::optional<std::string> {
    pdot::wire::Message reply;
    try {
      reply = stub.resolve(domain, pdot::wire::kTypeNs);
    } catch (const pdot::stub::StubError&) {
      return std::nullopt;
    }
    if (reply.rcode() != pdot::wire::kRcodeNoError) return std::nullopt;
    std::vector<std::string> names;
    for (const auto& rr : reply.answers) {
      if (rr.rtype == pdot::wire::kTypeNs) names.push_back(rr.ns_target().str());
    }
    if (names.empty()) return std::nullopt;
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    std::string joined;
    for (const auto& n : names) {
      if (!joined.empty()) joined += "|";
      joined += n;
    }
    return joined;
  };

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  pdot::anon::CollectOptions opt;
  opt.rate_qps = rate;
  opt.out_path = out;
  opt.stop = &g_stop;

  auto result = pdot::anon::collect_mapping_live(read_lines(domains_path), lookup, opt);
  std::cout << (result.interrupted ? "interrupted; " : "")
            << result.map.rows.size() << " rows in " << out << " ("
            << result.looked_up << " new lookups, " << result.failures << " failures)\n";
  return result.interrupted ? 130 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pdot-anon: anonymity-set distribution tooling"};
  app.require_subcommand(1);

  std::string input, out, domains_path, config_path;
  std::vector<size_t> thresholds = {1, 2, 100};
  double rate = 5;
  bool legacy = false;

  auto* compute = app.add_subcommand("compute", "CDF from an existing mapping");
  compute->add_option("--input", input, "mapping CSV (domain,ans_id)")->required();
  compute->add_option("--out", out, "CDF output CSV")->required();
  compute->add_option("--thresholds", thresholds, "record counts to report")->delimiter(',');

  auto* collect = app.add_subcommand("collect", "build a mapping with live NS lookups");
  collect->add_option("--domains", domains_path, "file with one domain per line")->required();
  collect->add_option("--rate", rate, "max lookups per second");
  collect->add_option("--out", out, "mapping CSV, appended to on resume")->required();
  collect->add_option("--config", config_path, "stub config file")->required();
  collect->add_flag("--legacy", legacy, "skip attestation verification");

  CLI11_PARSE(app, argc, argv);

  try {
    if (compute->parsed()) return run_compute(input, out, thresholds);
    return run_collect(domains_path, rate, out, config_path, legacy);
  } catch (const std::exception& e) {
    std::cerr << "pdot-anon: " << e.what() << "\n";
    return 1;
  }
}
