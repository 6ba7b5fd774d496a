// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
//
// Query tool for the verifying stub: resolves one name and prints the
// response in dig-like text. Exits nonzero when resolution SERVFAILed.

#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "pdot/stub/stub.hpp"
#include "pdot/util/bytes.hpp"

namespace {

std::uint16_t parse_qtype(const std::string& text) {
  if (text == "A" || text == "a") return pdot::wire::kTypeA;
  if (text == "NS" || text == "ns") return pdot::wire::kTypeNs;
  try {
    int v = std::stoi(text);
    if (v > 0 && v <= 65535) return static_cast<std::uint16_t>(v);
  } catch (const std::exception&) {
  }
  throw std::runtime_error("unsupported query type: " + text);
}

std::string type_name(std::uint16_t t) {
  if (t == pdot::wire::kTypeA) return "A";
  if (t == pdot::wire::kTypeNs) return "NS";
  return "TYPE" + std::to_string(t);
}

std::string rcode_name(std::uint8_t rcode) {
  switch (rcode) {
    case pdot::wire::kRcodeNoError: return "NOERROR";
    case pdot::wire::kRcodeFormErr: return "FORMERR";
    case pdot::wire::kRcodeServFail: return "SERVFAIL";
    case pdot::wire::kRcodeNxDomain: return "NXDOMAIN";
    default: return "RCODE" + std::to_string(rcode);
  }
}

void print_record(const pdot::wire::ResourceRecord& rr) {
  std::cout << rr.name.str() << ".\t" << rr.ttl << "\tIN\t" << type_name(rr.rtype)
            << "\t";
  if (rr.rtype == pdot::wire::kTypeA) {
    std::cout << rr.a_address();
  } else if (rr.rtype == pdot::wire::kTypeNs) {
    std::cout << rr.ns_target().str() << ".";
  } else {
    std::cout << "\\# " << rr.rdata.size() << " " << pdot::util::to_hex(rr.rdata);
  }
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pdot-dig: one DNS-over-TLS query through the verifying stub"};

  std::string name;
  std::string type = "A";
  std::string config_path;
  std::vector<std::string> resolvers;
  bool legacy = false;

  app.add_option("name", name, "domain name to resolve")->required();
  app.add_option("--type", type, "query type (A, NS, or numeric)");
  app.add_option("--config", config_path, "stub config file");
  app.add_option("--resolver", resolvers, "resolver endpoint host:port (repeatable)");
  app.add_flag("--legacy", legacy, "skip attestation (plain DNS-over-TLS client)");

  CLI11_PARSE(app, argc, argv);

  try {
    pdot::stub::StubConfig cfg;
    if (!config_path.empty()) {
      cfg = pdot::stub::StubConfig::load_file(config_path);
    }
    for (const auto& r : resolvers) {
      cfg.resolvers.push_back(pdot::util::Endpoint::parse(r));
    }
    if (legacy) cfg.policy.require_attestation = false;
    cfg.validate();

    pdot::stub::Stub stub(cfg);
    auto t0 = std::chrono::steady_clock::now();
    auto reply = stub.resolve(name, parse_qtype(type));
    auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);

    std::cout << "; <<>> pdot-dig <<>> " << name << " " << type << "\n";
    std::cout << ";; status: " << rcode_name(reply.rcode()) << ", id: " << reply.id << "\n";
    std::cout << ";; QUESTION SECTION:\n";
    for (const auto& q : reply.questions) {
      std::cout << ";" << q.name.str() << ".\tIN\t" << type_name(q.qtype) << "\n";
    }
    if (!reply.answers.empty()) {
      std::cout << ";; ANSWER SECTION:\n";
      for (const auto& rr : reply.answers) print_record(rr);
    }
    if (!reply.authorities.empty()) {
      std::cout << ";; AUTHORITY SECTION:\n";
      for (const auto& rr : reply.authorities) print_record(rr);
    }
    if (!reply.additionals.empty()) {
      std::cout << ";; ADDITIONAL SECTION:\n";
      for (const auto& rr : reply.additionals) print_record(rr);
    }
    std::cout << ";; Query time: " << elapsed.count() << " ms\n";

    if (reply.rcode() == pdot::wire::kRcodeServFail) {
      std::cerr << "pdot-dig: resolution failed: " << stub.last_failure() << "\n";
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "pdot-dig: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
