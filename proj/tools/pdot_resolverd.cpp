// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
//
// The resolver daemon: untrusted host boundary + trusted resolver in one
// process, with a simulated attestation flow producing the TLS identity.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "pdot/attest/attest.hpp"
#include "pdot/cache/rb_cache.hpp"
#include "pdot/enclave/resolver.hpp"
#include "pdot/host/boundary.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

pdot::attest::SimAuthority load_or_create_authority(const std::string& dir) {
  if (dir.empty()) return pdot::attest::SimAuthority::generate();
  if (std::filesystem::exists(std::filesystem::path(dir) / "ias_cert.pem")) {
    return pdot::attest::SimAuthority::load(dir);
  }
  auto authority = pdot::attest::SimAuthority::generate();
  std::filesystem::create_directories(dir);
  authority.save(dir);
  return authority;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pdot-resolverd: recursive DNS-over-TLS resolver daemon"};

  std::string config_path;
  std::string listen = "127.0.0.1:0";
  std::string control;
  std::string manifest_path;
  std::string authority_dir;
  std::string adversary = "none";
  std::string cache_preload;
  std::string ca_key_path, ca_cert_path;
  int validity_days = 365;
  bool print_measurement = false;
  bool print_cert = false;

  app.add_option("--config", config_path, "resolver config file (key=value)");
  app.add_option("--listen", listen, "client listener address (host:port)");
  app.add_option("--control", control, "stats endpoint address (host:port)");
  app.add_option("--manifest", manifest_path, "trusted-component build manifest")
      ->required();
  app.add_option("--authority-dir", authority_dir,
                 "attestation authority key directory (created when missing)");
  app.add_option("--adversary", adversary,
                 "host misbehavior: none|drop_inbound|delay:<ms>|redirect:<host:port>");
  app.add_option("--cache-preload", cache_preload, "domain,qtype,address,ttl file");
  app.add_option("--identity-ca-key", ca_key_path,
                 "also sign the identity under this CA key (PEM)");
  app.add_option("--identity-ca-cert", ca_cert_path, "certificate for --identity-ca-key");
  app.add_option("--validity-days", validity_days, "identity certificate lifetime");
  app.add_flag("--print-measurement", print_measurement,
               "print the manifest measurement and exit");
  app.add_flag("--print-cert", print_cert, "print the identity certificate PEM on start");

  CLI11_PARSE(app, argc, argv);

  try {
    auto manifest = pdot::attest::BuildManifest::parse_file(manifest_path);
    auto measurement = pdot::attest::measure_trusted_component(manifest);
    if (print_measurement) {
      std::cout << measurement.hex() << "\n";
      return 0;
    }

    if (ca_key_path.empty() != ca_cert_path.empty()) {
      std::cerr << "--identity-ca-key and --identity-ca-cert go together\n";
      return 2;
    }

    auto authority = load_or_create_authority(authority_dir);

    pdot::enclave::ResolverIdentity identity;
    identity.key = pdot::crypto::generate_ed25519();

    pdot::crypto::KeyPtr ca_key;
    pdot::crypto::CertPtr ca_cert;
    pdot::attest::CertificateOptions cert_opts;
    cert_opts.validity_days = validity_days;
    if (!ca_key_path.empty()) {
      ca_key = pdot::crypto::private_key_from_pem(read_text(ca_key_path));
      ca_cert = pdot::crypto::cert_from_pem(read_text(ca_cert_path));
      cert_opts.ca_key = ca_key.get();
      cert_opts.ca_cert = ca_cert.get();
    }
    identity.cert = pdot::attest::build_attested_certificate(
        identity.key.get(), measurement, authority, cert_opts);
    if (print_cert) std::cout << pdot::crypto::cert_to_pem(identity.cert.get());

    pdot::enclave::ResolverConfig cfg;
    if (!config_path.empty()) cfg = pdot::enclave::ResolverConfig::load_file(config_path);

    auto listen_ep = pdot::util::Endpoint::parse(listen);
    pdot::host::BoundaryConfig bcfg;
    bcfg.bind_host = listen_ep.host;
    bcfg.bind_port = listen_ep.port;
    bcfg.max_clients = cfg.max_clients;

    pdot::gate::CallGate gate;
    pdot::host::HostBoundary boundary(gate, bcfg);
    pdot::enclave::TrustedResolver resolver(cfg, std::move(identity), boundary.services());
    boundary.attach(resolver);
    boundary.set_adversary(pdot::host::AdversaryMode::parse(adversary));

    if (!cache_preload.empty()) {
      size_t n = pdot::cache::preload_from_file(resolver.cache(), cache_preload);
      std::cout << "cache preloaded with " << n << " entries\n";
    }

    boundary.start();

    std::unique_ptr<pdot::host::ControlServer> ctrl;
    if (!control.empty()) {
      auto ctrl_ep = pdot::util::Endpoint::parse(control);
      ctrl = std::make_unique<pdot::host::ControlServer>(ctrl_ep.host, ctrl_ep.port,
                                                         gate, resolver);
      std::cout << "control on " << ctrl_ep.host << ":" << ctrl->port() << "\n";
    }

    std::cout << "measurement " << measurement.hex() << "\n";
    std::cout << "listening on " << boundary.endpoint().str() << std::endl;

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }

    std::cout << "shutting down\n" << resolver.stats().to_json() << "\n";
    if (ctrl) ctrl->stop();
    boundary.stop();
    resolver.shutdown();
  } catch (const std::exception& e) {
    std::cerr << "pdot-resolverd: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
