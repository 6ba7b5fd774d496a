// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
//
// Simulated name-server hierarchy: `run` serves a ZoneSpec over DNS-over-TLS,
// `export` writes the domain -> authoritative-server mapping as CSV.

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "pdot/nssim/nssim.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pdot-nssim: simulated authoritative name-server fleet"};
  app.require_subcommand(1);

  std::string zonespec_path;
  int delay_ms = 0;
  std::string log_path;
  std::string ca_out;
  std::string map_out;

  auto* run = app.add_subcommand("run", "serve the hierarchy until interrupted");
  run->add_option("--zonespec", zonespec_path, "hierarchy description file")->required();
  run->add_option("--delay-ms", delay_ms, "fixed response delay for every node");
  run->add_option("--log", log_path, "write the connection log here on exit (JSON lines)");
  run->add_option("--ca-out", ca_out, "write the fleet CA certificate PEM here");

  auto* exp = app.add_subcommand("export", "write the domain,ans_id mapping CSV");
  exp->add_option("--zonespec", zonespec_path, "hierarchy description file")->required();
  exp->add_option("--out", map_out, "output path (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    auto spec = pdot::nssim::ZoneSpec::parse_file(zonespec_path);

    if (exp->parsed()) {
      std::string csv = spec.export_mapping();
      if (map_out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream out(map_out);
        if (!out) throw std::runtime_error("cannot write " + map_out);
        out << csv;
      }
      return 0;
    }

    pdot::nssim::ConnectionLog log;
    pdot::nssim::NsFleet fleet(spec, pdot::nssim::DelaySpec{delay_ms},
                               log_path.empty() ? nullptr : &log);
    fleet.start();

    if (!ca_out.empty()) {
      std::ofstream out(ca_out);
      if (!out) throw std::runtime_error("cannot write " + ca_out);
      out << fleet.ca_pem();
    }

    std::cout << "serving " << spec.nodes.size() << " nodes, "
              << spec.domains.size() << " domains on port " << fleet.port() << "\n";
    std::cout << "root at " << fleet.root_endpoint().str() << std::endl;

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    fleet.stop();
    if (!log_path.empty()) log.write_file(log_path);
  } catch (const std::exception& e) {
    std::cerr << "pdot-nssim: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
