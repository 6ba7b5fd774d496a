// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/nssim/nssim.hpp"

#include <algorithm>
#include <arpa/inet.h>
#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pdot::nssim {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

[[noreturn]] void bad_line(size_t lineno, const std::string& why) {
  throw std::runtime_error("zonespec line " + std::to_string(lineno) + ": " + why);
}

bool valid_ipv4(const std::string& s) {
  in_addr addr{};
  return inet_pton(AF_INET, s.c_str(), &addr) == 1;
}

// Optional `key=value` suffix tokens shared by node and domain lines.
struct KvArgs {
  std::map<std::string, std::string> kv;

  static KvArgs parse(const std::vector<std::string>& toks, size_t from,
                      size_t lineno) {
    KvArgs a;
    for (size_t i = from; i < toks.size(); ++i) {
      auto eq = toks[i].find('=');
      if (eq == std::string::npos || eq == 0) {
        bad_line(lineno, "expected key=value, got '" + toks[i] + "'");
      }
      auto [it, fresh] =
          a.kv.emplace(toks[i].substr(0, eq), toks[i].substr(eq + 1));
      if (!fresh) bad_line(lineno, "duplicate option '" + it->first + "'");
    }
    return a;
  }

  std::optional<std::string> take(const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  }

  void expect_empty(size_t lineno) const {
    if (!kv.empty()) bad_line(lineno, "unknown option '" + kv.begin()->first + "'");
  }
};

int parse_int(const std::string& s, size_t lineno, const std::string& what) {
  try {
    size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    bad_line(lineno, "bad " + what + " '" + s + "'");
  }
}

/// The NS hostname a node advertises in referrals.
std::string ns_host(const std::string& node_id) { return node_id + ".ns.sim"; }

}  // namespace

ZoneSpec ZoneSpec::parse_text(const std::string& text) {
  ZoneSpec spec;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto toks = split_ws(line);
    if (toks.empty()) continue;

    if (toks[0] == "port") {
      if (toks.size() != 2) bad_line(lineno, "usage: port <n>");
      int p = parse_int(toks[1], lineno, "port");
      if (p < 0 || p > 65535) bad_line(lineno, "port out of range");
      spec.port = static_cast<std::uint16_t>(p);
    } else if (toks[0] == "node") {
      if (toks.size() < 3) bad_line(lineno, "usage: node <id> interior|auth ...");
      NodeSpec n;
      n.id = toks[1];
      size_t arg_from;
      if (toks[2] == "interior") {
        if (toks.size() < 4) bad_line(lineno, "interior node needs an apex");
        n.interior = true;
        try {
          n.apex = wire::DomainName::parse(toks[3]);
        } catch (const std::exception& e) {
          bad_line(lineno, std::string("bad apex: ") + e.what());
        }
        arg_from = 4;
      } else if (toks[2] == "auth") {
        n.interior = false;
        arg_from = 3;
      } else {
        bad_line(lineno, "node kind must be interior or auth");
      }
      KvArgs args = KvArgs::parse(toks, arg_from, lineno);
      auto ip = args.take("ip");
      if (!ip) bad_line(lineno, "node needs ip=<addr>");
      n.ip = *ip;
      if (auto p = args.take("parent")) n.parent = *p;
      if (auto d = args.take("delay_ms")) {
        int v = parse_int(*d, lineno, "delay_ms");
        if (v < 0) bad_line(lineno, "delay_ms must be >= 0");
        n.delay_ms = v;
      }
      args.expect_empty(lineno);
      spec.nodes.push_back(std::move(n));
    } else if (toks[0] == "domain") {
      if (toks.size() < 4) bad_line(lineno, "usage: domain <name> <ans-id> <ipv4> [ttl=<n>]");
      DomainSpec d;
      try {
        d.name = wire::DomainName::parse(toks[1]);
      } catch (const std::exception& e) {
        bad_line(lineno, std::string("bad domain: ") + e.what());
      }
      d.ans_id = toks[2];
      d.address = toks[3];
      KvArgs args = KvArgs::parse(toks, 4, lineno);
      if (auto t = args.take("ttl")) {
        int v = parse_int(*t, lineno, "ttl");
        if (v <= 0) bad_line(lineno, "ttl must be positive");
        d.ttl = static_cast<std::uint32_t>(v);
      }
      args.expect_empty(lineno);
      spec.domains.push_back(std::move(d));
    } else {
      bad_line(lineno, "unknown directive '" + toks[0] + "'");
    }
  }
  spec.validate();
  return spec;
}

ZoneSpec ZoneSpec::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open zonespec file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

void ZoneSpec::validate() const {
  std::map<std::string, const NodeSpec*> by_id;
  std::set<std::string> ips;
  const NodeSpec* root = nullptr;
  for (const auto& n : nodes) {
    if (n.id.empty()) throw std::runtime_error("node id must be non-empty");
    if (!by_id.emplace(n.id, &n).second) {
      throw std::runtime_error("duplicate node id: " + n.id);
    }
    if (!valid_ipv4(n.ip)) throw std::runtime_error("bad node ip: " + n.ip);
    if (!ips.insert(n.ip).second) {
      throw std::runtime_error("duplicate node ip: " + n.ip);
    }
    if (n.parent.empty()) {
      if (!n.interior) {
        throw std::runtime_error("authoritative node " + n.id + " needs a parent");
      }
      if (root) {
        throw std::runtime_error("multiple root nodes: " + root->id + " and " + n.id);
      }
      root = &n;
    }
  }
  if (!root) throw std::runtime_error("no root node (one interior node must lack a parent)");

  for (const auto& n : nodes) {
    if (n.parent.empty()) continue;
    auto it = by_id.find(n.parent);
    if (it == by_id.end()) {
      throw std::runtime_error("node " + n.id + " has unknown parent " + n.parent);
    }
    const NodeSpec* p = it->second;
    if (!p->interior) {
      throw std::runtime_error("node " + n.id + " has non-interior parent " + p->id);
    }
    if (n.interior) {
      // Child zones nest strictly inside the parent zone.
      if (!n.apex->is_subdomain_of(*p->apex) || *n.apex == *p->apex) {
        throw std::runtime_error("apex of " + n.id +
                                 " must be a strict subdomain of apex of " + p->id);
      }
    }
    // Tree shape: the parent chain must reach the root without repeating.
    std::set<std::string> seen{n.id};
    const NodeSpec* cur = p;
    while (!cur->parent.empty()) {
      if (!seen.insert(cur->id).second) {
        throw std::runtime_error("parent cycle involving node " + cur->id);
      }
      cur = by_id.at(cur->parent);
    }
    if (cur != root) throw std::runtime_error("node " + n.id + " is not under the root");
  }

  std::set<std::string> domain_keys;
  for (const auto& d : domains) {
    if (!domain_keys.insert(d.name.key()).second) {
      throw std::runtime_error("duplicate domain: " + d.name.str());
    }
    auto it = by_id.find(d.ans_id);
    if (it == by_id.end() || it->second->interior) {
      throw std::runtime_error("domain " + d.name.str() +
                               " needs an authoritative node, got '" + d.ans_id + "'");
    }
    const NodeSpec* parent = by_id.at(it->second->parent);
    if (!d.name.is_subdomain_of(*parent->apex) || d.name == *parent->apex) {
      throw std::runtime_error("domain " + d.name.str() + " is outside zone " +
                               parent->apex->str() + " delegating to " + d.ans_id);
    }
  }
}

const NodeSpec* ZoneSpec::find_node(const std::string& id) const {
  for (const auto& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

std::string ZoneSpec::root_id() const {
  for (const auto& n : nodes) {
    if (n.interior && n.parent.empty()) return n.id;
  }
  throw std::runtime_error("no root node");
}

std::vector<std::string> ZoneSpec::path_to(const wire::DomainName& domain) const {
  const DomainSpec* d = nullptr;
  for (const auto& cand : domains) {
    if (cand.name == domain) {
      d = &cand;
      break;
    }
  }
  if (!d) throw std::runtime_error("domain not in spec: " + domain.str());
  std::vector<std::string> path;
  const NodeSpec* cur = find_node(d->ans_id);
  while (cur) {
    path.push_back(cur->id);
    cur = cur->parent.empty() ? nullptr : find_node(cur->parent);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::string ZoneSpec::export_mapping() const {
  std::vector<std::pair<std::string, std::string>> rows;
  rows.reserve(domains.size());
  for (const auto& d : domains) rows.emplace_back(d.name.key(), d.ans_id);
  std::sort(rows.begin(), rows.end());
  std::string out = "domain,ans_id\n";
  for (const auto& [dom, ans] : rows) out += dom + "," + ans + "\n";
  return out;
}

std::string LogEntry::to_json() const {
  nlohmann::json j;
  j["timestamp"] = timestamp_ms;
  j["node"] = node;
  j["peer"] = peer;
  j["qname"] = qname;
  j["action"] = action;
  return j.dump();
}

void ConnectionLog::append(LogEntry entry) {
  std::lock_guard lk(mu_);
  entries_.push_back(std::move(entry));
}

std::vector<LogEntry> ConnectionLog::snapshot() const {
  std::lock_guard lk(mu_);
  return entries_;
}

size_t ConnectionLog::count(const std::string& node, const std::string& action) const {
  std::lock_guard lk(mu_);
  size_t n = 0;
  for (const auto& e : entries_) {
    if (e.node == node && e.action == action) ++n;
  }
  return n;
}

void ConnectionLog::clear() {
  std::lock_guard lk(mu_);
  entries_.clear();
}

void ConnectionLog::write_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write log file: " + path);
  std::lock_guard lk(mu_);
  for (const auto& e : entries_) out << e.to_json() << "\n";
}

LocalCa::LocalCa(const std::string& cn) : key_(crypto::generate_ed25519()) {
  crypto::CertSpec spec;
  spec.subject_cn = cn;
  spec.subject_key = key_.get();
  spec.validity_days = 3650;
  spec.is_ca = true;
  cert_ = crypto::make_certificate(spec);
}

std::string LocalCa::ca_pem() const { return crypto::cert_to_pem(cert_.get()); }

crypto::CertPtr LocalCa::issue(const std::string& cn, EVP_PKEY* subject_key) const {
  crypto::CertSpec spec;
  spec.subject_cn = cn;
  spec.subject_key = subject_key;
  spec.validity_days = 365;
  spec.issuer_key = key_.get();
  spec.issuer_cert = cert_.get();
  return crypto::make_certificate(spec);
}

/// Precomputed serving tables plus the live listener for one node.
struct NsFleet::Node {
  const NodeSpec* spec = nullptr;

  // Interior: delegated zones ordered for longest-suffix matching.
  struct Delegation {
    wire::DomainName zone;
    std::string child_id;
    std::string child_ip;
  };
  std::vector<Delegation> delegations;

  // Authoritative: served domains by lookup key, plus the parent zone.
  std::map<std::string, DomainSpec> served;
  wire::DomainName parent_apex;

  crypto::KeyPtr key;
  crypto::CertPtr cert;
  std::optional<tlsio::TlsContext> tls;
  std::optional<util::TcpListener> listener;
  std::thread acceptor;
};

NsFleet::NsFleet(ZoneSpec spec, DelaySpec delays, ConnectionLog* log)
    : spec_(std::move(spec)),
      global_delay_ms_(delays.fixed_delay_ms),
      log_(log),
      ca_("pdot-ns-fleet-ca"),
      ca_pem_(ca_.ca_pem()) {
  spec_.validate();
}

NsFleet::~NsFleet() { stop(); }

void NsFleet::start() {
  if (running_.exchange(true)) return;
  port_ = spec_.port ? spec_.port : util::pick_free_port();

  for (const auto& ns : spec_.nodes) {
    auto node = std::make_unique<Node>();
    node->spec = &ns;
    if (ns.interior) {
      for (const auto& child : spec_.nodes) {
        if (child.parent != ns.id) continue;
        if (child.interior) {
          node->delegations.push_back({*child.apex, child.id, child.ip});
        } else {
          // Each domain served by an authoritative child is its own zone cut.
          for (const auto& d : spec_.domains) {
            if (d.ans_id == child.id) {
              node->delegations.push_back({d.name, child.id, child.ip});
            }
          }
        }
      }
      // Longest match first.
      std::sort(node->delegations.begin(), node->delegations.end(),
                [](const auto& a, const auto& b) {
                  return a.zone.label_count() > b.zone.label_count();
                });
    } else {
      for (const auto& d : spec_.domains) {
        if (d.ans_id == ns.id) node->served.emplace(d.name.key(), d);
      }
      node->parent_apex = *spec_.find_node(ns.parent)->apex;
    }

    node->key = crypto::generate_ed25519();
    node->cert = ca_.issue(ns.id, node->key.get());
    node->tls = tlsio::TlsContext::server(node->key.get(), node->cert.get());

    try {
      node->listener.emplace(ns.ip, port_);
    } catch (const std::exception& e) {
      running_ = false;
      stop_nodes();
      throw std::runtime_error("node " + ns.id + " cannot listen on " + ns.ip +
                               ":" + std::to_string(port_) + ": " + e.what());
    }
    nodes_.push_back(std::move(node));
  }

  for (auto& node : nodes_) {
    node->acceptor = std::thread([this, n = node.get()] { accept_loop(*n); });
  }
}

void NsFleet::stop_nodes() {
  for (auto& node : nodes_) {
    if (node->listener) node->listener->stop();
  }
  for (auto& node : nodes_) {
    if (node->acceptor.joinable()) node->acceptor.join();
  }
  std::unique_lock lk(worker_mu_);
  worker_cv_.wait(lk, [this] { return workers_ == 0; });
  nodes_.clear();
}

void NsFleet::stop() {
  if (!running_.exchange(false)) return;
  stop_nodes();
}

util::Endpoint NsFleet::node_endpoint(const std::string& id) const {
  const NodeSpec* n = spec_.find_node(id);
  if (!n) throw std::runtime_error("unknown node: " + id);
  return {n->ip, port_};
}

util::Endpoint NsFleet::root_endpoint() const { return node_endpoint(spec_.root_id()); }

void NsFleet::set_global_delay(int ms) { global_delay_ms_ = ms; }

void NsFleet::accept_loop(Node& node) {
  while (running_) {
    auto accepted = node.listener->accept();
    if (!accepted) break;
    auto sock = std::make_shared<util::TcpSocket>(std::move(*accepted));
    {
      std::lock_guard lk(worker_mu_);
      ++workers_;
    }
    std::thread([this, &node, sock] {
      serve_connection(node, sock);
      std::lock_guard lk(worker_mu_);
      --workers_;
      worker_cv_.notify_all();
    }).detach();
  }
}

void NsFleet::serve_connection(Node& node, std::shared_ptr<util::TcpSocket> sock) {
  auto now_ms = [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
  std::string peer = sock->peer().str();
  if (log_) log_->append({now_ms(), node.spec->id, peer, "", "accept"});

  try {
    tlsio::TlsEngine engine(*node.tls, true);
    auto flush = [&] {
      auto out = engine.take_ciphertext();
      if (!out.empty()) sock->send_all(out);
    };
    while (running_) {
      util::Bytes data;
      try {
        data = sock->recv_some(16384, 200);
      } catch (const util::NetTimeout&) {
        continue;
      }
      if (data.empty()) break;
      engine.feed_ciphertext(data);
      flush();
      if (engine.state() == tlsio::TlsState::Failed) break;

      while (auto frame = engine.next_frame()) {
        wire::Message query;
        std::string action = "servfail";
        wire::Message reply;
        try {
          query = wire::decode_message(*frame);
          reply = answer_query(node, query, &action);
        } catch (const wire::WireError&) {
          reply.id = frame->size() >= 2
                         ? static_cast<std::uint16_t>(((*frame)[0] << 8) | (*frame)[1])
                         : 0;
          reply.set_qr(true);
          reply.set_rcode(wire::kRcodeFormErr);
          action = "servfail";
        }
        int delay = node.spec->delay_ms.value_or(global_delay_ms_.load());
        if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        if (log_) {
          std::string qname =
              query.questions.empty() ? "" : query.questions[0].name.str();
          log_->append({now_ms(), node.spec->id, peer, qname, action});
        }
        engine.write_frame(wire::encode_message(reply));
        flush();
      }
      if (engine.state() == tlsio::TlsState::Closed) break;
    }
  } catch (const std::exception&) {
    // Peer vanished or spoke garbage; the connection just ends.
  }
  if (log_) log_->append({now_ms(), node.spec->id, peer, "", "close"});
}

wire::Message NsFleet::answer_query(const Node& node, const wire::Message& query,
                                    std::string* action) const {
  wire::Message reply = wire::make_response(query, wire::kRcodeNoError);
  if (query.questions.size() != 1) {
    reply.set_rcode(wire::kRcodeFormErr);
    *action = "servfail";
    return reply;
  }
  const wire::Question& q = query.questions[0];

  if (!node.spec->interior) {
    auto it = node.served.find(q.name.key());
    if (it != node.served.end()) {
      reply.set_aa(true);
      if (q.qtype == wire::kTypeA) {
        reply.answers.push_back(
            wire::ResourceRecord::a(q.name, it->second.address, it->second.ttl));
      } else if (q.qtype == wire::kTypeNs) {
        reply.answers.push_back(
            wire::ResourceRecord::ns(q.name,
                                      wire::DomainName::parse(ns_host(node.spec->id)),
                                      it->second.ttl));
      }
      // Other types: empty authoritative answer for a name that exists.
      *action = "answer";
      return reply;
    }
    if (q.name.is_subdomain_of(node.parent_apex)) {
      reply.set_aa(true);
      reply.set_rcode(wire::kRcodeNxDomain);
      *action = "nxdomain";
    } else {
      reply.set_rcode(wire::kRcodeServFail);
      *action = "servfail";
    }
    return reply;
  }

  for (const auto& d : node.delegations) {
    if (!q.name.is_subdomain_of(d.zone)) continue;
    auto ns_name = wire::DomainName::parse(ns_host(d.child_id));
    reply.authorities.push_back(wire::ResourceRecord::ns(d.zone, ns_name, 300));
    reply.additionals.push_back(wire::ResourceRecord::a(ns_name, d.child_ip, 300));
    *action = "referral";
    return reply;
  }
  if (q.name.is_subdomain_of(*node.spec->apex)) {
    reply.set_aa(true);
    reply.set_rcode(wire::kRcodeNxDomain);
    *action = "nxdomain";
  } else {
    reply.set_rcode(wire::kRcodeServFail);
    *action = "servfail";
  }
  return reply;
}

}  // namespace pdot::nssim
