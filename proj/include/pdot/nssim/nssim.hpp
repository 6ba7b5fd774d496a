// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <atomic>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "pdot/crypto/x509.hpp"
#include "pdot/tlsio/tls.hpp"
#include "pdot/util/net.hpp"
#include "pdot/wire/message.hpp"

namespace pdot::nssim {

/// Fixed response latency applied by every node (per-node overrides win).
struct DelaySpec {
  int fixed_delay_ms = 0;
};

/// One simulated name-server process: interior nodes hold delegations,
/// authoritative nodes hold served domains.
struct NodeSpec {
  std::string id;
  std::string ip;
  bool interior = false;
  std::optional<wire::DomainName> apex;  // interior nodes only
  std::string parent;                    // empty only for the root node
  std::optional<int> delay_ms;           // overrides DelaySpec when set
};

struct DomainSpec {
  wire::DomainName name;
  std::string ans_id;
  std::string address;
  std::uint32_t ttl = 300;
};

/// The whole hierarchy. See docs/zonespec.md for the text format.
struct ZoneSpec {
  std::uint16_t port = 0;  // one TCP port shared by all nodes (0 = pick free)
  std::vector<NodeSpec> nodes;
  std::vector<DomainSpec> domains;

  static ZoneSpec parse_text(const std::string& text);
  static ZoneSpec parse_file(const std::string& path);

  /// Enforces: single root, tree shape, unique ids/ips, every domain under
  /// its server's parent apex, each domain served exactly once.
  void validate() const;

  const NodeSpec* find_node(const std::string& id) const;
  std::string root_id() const;

  /// Node ids on the delegation path root -> ANS for `domain`.
  std::vector<std::string> path_to(const wire::DomainName& domain) const;

  /// `domain,ans_id` CSV, one row per served domain, sorted by domain.
  std::string export_mapping() const;
};

struct LogEntry {
  std::int64_t timestamp_ms = 0;  // wall clock, ms since epoch
  std::string node;
  std::string peer;
  std::string qname;  // empty for connection events
  std::string action; // accept | answer | referral | nxdomain | servfail | close

  std::string to_json() const;
};

/// Append-only, safe for concurrent writers.
class ConnectionLog {
 public:
  void append(LogEntry entry);
  std::vector<LogEntry> snapshot() const;
  size_t count(const std::string& node, const std::string& action) const;
  void clear();
  void write_file(const std::string& path) const;  // JSON lines

 private:
  mutable std::mutex mu_;
  std::vector<LogEntry> entries_;
};

/// Issues leaf certificates for the fleet from one self-signed root.
class LocalCa {
 public:
  explicit LocalCa(const std::string& cn = "pdot-ns-fleet-ca");
  std::string ca_pem() const;
  crypto::CertPtr issue(const std::string& cn, EVP_PKEY* subject_key) const;
  X509* cert() const { return cert_.get(); }

 private:
  crypto::KeyPtr key_;
  crypto::CertPtr cert_;
};

/// Runs one DNS-over-TLS listener per node and answers from the spec.
class NsFleet {
 public:
  NsFleet(ZoneSpec spec, DelaySpec delays, ConnectionLog* log = nullptr);
  ~NsFleet();
  NsFleet(const NsFleet&) = delete;

  void start();  // binds all listeners; throws on conflicts
  void stop();

  std::uint16_t port() const { return port_; }
  const std::string& ca_pem() const { return ca_pem_; }
  util::Endpoint node_endpoint(const std::string& id) const;
  util::Endpoint root_endpoint() const;
  const ZoneSpec& spec() const { return spec_; }

  void set_global_delay(int ms);

 private:
  struct Node;

  void accept_loop(Node& node);
  void stop_nodes();
  void serve_connection(Node& node, std::shared_ptr<util::TcpSocket> sock);
  wire::Message answer_query(const Node& node, const wire::Message& query,
                             std::string* action) const;

  ZoneSpec spec_;
  std::atomic<int> global_delay_ms_;
  ConnectionLog* log_;
  LocalCa ca_;
  std::string ca_pem_;
  std::uint16_t port_ = 0;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::atomic<bool> running_{false};

  std::mutex worker_mu_;
  std::condition_variable worker_cv_;
  int workers_ = 0;
};

}  // namespace pdot::nssim
