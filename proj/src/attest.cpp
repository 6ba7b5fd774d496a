// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/attest/attest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pdot/util/kv_config.hpp"

namespace pdot::attest {

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

bool is_hex_digest(const std::string& s) {
  if (s.size() != 64) return false;
  for (char c : s) {
    if (!(c >= '0' && c <= '9') && !(c >= 'a' && c <= 'f')) return false;
  }
  return true;
}

json report_to_json(const AttestationReport& r) {
  json attrs = json::object();
  for (const auto& [k, v] : r.platform_attrs) attrs[k] = v;
  return json{{"measurement", r.measurement.hex()},
              {"platform_attrs", attrs},
              {"pubkey_hash", util::to_hex(r.pubkey_hash)}};
}

AttestationReport report_from_json(const json& j) {
  AttestationReport r;
  r.measurement = EnclaveMeasurement::from_hex(j.at("measurement").get<std::string>());
  r.pubkey_hash = util::from_hex(j.at("pubkey_hash").get<std::string>());
  if (r.pubkey_hash.size() != 32) {
    throw AttestError(AttestErrc::MalformedExtension, "pubkey_hash is not 32 bytes");
  }
  for (const auto& [k, v] : j.at("platform_attrs").items()) {
    r.platform_attrs[k] = v.get<std::string>();
  }
  return r;
}

json quote_to_json(const Quote& q) {
  return json{{"quoting_signature", util::to_hex(q.quoting_signature)},
              {"report", report_to_json(q.report)}};
}

Quote quote_from_json(const json& j) {
  Quote q;
  q.report = report_from_json(j.at("report"));
  q.quoting_signature = util::from_hex(j.at("quoting_signature").get<std::string>());
  return q;
}

}  // namespace

const char* to_string(AttestErrc code) {
  switch (code) {
    case AttestErrc::MalformedManifest: return "MalformedManifest";
    case AttestErrc::MissingAttestation: return "MissingAttestation";
    case AttestErrc::UntrustedAttestationRoot: return "UntrustedAttestationRoot";
    case AttestErrc::BadReportSignature: return "BadReportSignature";
    case AttestErrc::PubkeyMismatch: return "PubkeyMismatch";
    case AttestErrc::CertificateExpired: return "CertificateExpired";
    case AttestErrc::MalformedExtension: return "MalformedExtension";
  }
  return "unknown";
}

EnclaveMeasurement EnclaveMeasurement::from_hex(const std::string& hex) {
  EnclaveMeasurement m;
  m.digest = util::from_hex(hex);
  if (m.digest.size() != 32) {
    throw AttestError(AttestErrc::MalformedExtension, "measurement is not 32 bytes");
  }
  return m;
}

BuildManifest BuildManifest::parse_text(const std::string& text) {
  BuildManifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) -> AttestError {
      return AttestError(AttestErrc::MalformedManifest,
                         "manifest line " + std::to_string(lineno) + ": " + why);
    };
    if (line.starts_with("version=")) {
      if (!m.version.empty()) throw fail("duplicate version");
      m.version = line.substr(8);
      if (m.version.empty()) throw fail("empty version");
    } else if (line.starts_with("unit=")) {
      size_t colon = line.rfind(':');
      if (colon == std::string::npos || colon <= 5) throw fail("expected unit=<path>:<hex>");
      std::string path = line.substr(5, colon - 5);
      std::string digest = line.substr(colon + 1);
      if (!is_hex_digest(digest)) throw fail("digest is not 64 lowercase hex chars");
      if (m.units.count(path)) throw fail("duplicate unit " + path);
      m.units[path] = digest;
    } else {
      throw fail("unrecognized line");
    }
  }
  if (m.version.empty()) {
    throw AttestError(AttestErrc::MalformedManifest, "manifest has no version line");
  }
  if (m.units.empty()) {
    throw AttestError(AttestErrc::MalformedManifest, "manifest lists no units");
  }
  return m;
}

BuildManifest BuildManifest::parse_file(const std::string& path) {
  return parse_text(read_file(path));
}

std::string BuildManifest::canonical() const {
  std::string out = "version=" + version + "\n";
  for (const auto& [path, digest] : units) {
    out += "unit=" + path + ":" + digest + "\n";
  }
  return out;
}

EnclaveMeasurement measure_trusted_component(const BuildManifest& manifest) {
  return EnclaveMeasurement{crypto::sha256(util::to_bytes(manifest.canonical()))};
}

Bytes AttestationReport::serialize() const {
  return util::to_bytes(report_to_json(*this).dump());
}

AttestationReport AttestationReport::deserialize(ByteView data) {
  try {
    return report_from_json(json::parse(util::to_string(data)));
  } catch (const json::exception& e) {
    throw AttestError(AttestErrc::MalformedExtension, e.what());
  }
}

Bytes Quote::serialize() const { return util::to_bytes(quote_to_json(*this).dump()); }

Quote Quote::deserialize(ByteView data) {
  try {
    return quote_from_json(json::parse(util::to_string(data)));
  } catch (const json::exception& e) {
    throw AttestError(AttestErrc::MalformedExtension, e.what());
  }
}

Quote VerificationReport::quote() const {
  try {
    return quote_from_json(json::parse(util::to_string(body)).at("quote"));
  } catch (const json::exception& e) {
    throw AttestError(AttestErrc::MalformedExtension, e.what());
  }
}

std::string VerificationReport::verdict() const {
  try {
    return json::parse(util::to_string(body)).at("verdict").get<std::string>();
  } catch (const json::exception& e) {
    throw AttestError(AttestErrc::MalformedExtension, e.what());
  }
}

AttestationReport make_report(const EnclaveMeasurement& measurement,
                              EVP_PKEY* enclave_key,
                              std::map<std::string, std::string> platform_attrs) {
  AttestationReport r;
  r.measurement = measurement;
  r.pubkey_hash = crypto::sha256(crypto::public_key_raw(enclave_key));
  r.platform_attrs = std::move(platform_attrs);
  return r;
}

Quote make_quote(const AttestationReport& report, EVP_PKEY* quoting_key) {
  Quote q;
  q.report = report;
  q.quoting_signature = crypto::ed25519_sign(quoting_key, report.serialize());
  return q;
}

bool verify_quote(const Quote& quote, EVP_PKEY* quoting_pubkey) {
  return crypto::ed25519_verify(quoting_pubkey, quote.report.serialize(),
                                quote.quoting_signature);
}

VerificationReport make_verification_report(const Quote& quote, EVP_PKEY* ias_key,
                                            X509* ias_cert) {
  VerificationReport vr;
  vr.body = util::to_bytes(
      json{{"quote", quote_to_json(quote)}, {"verdict", "OK"}}.dump());
  vr.ias_signature = crypto::ed25519_sign(ias_key, vr.body);
  vr.signing_cert = crypto::cert_to_der(ias_cert);
  return vr;
}

SimAuthority SimAuthority::generate() {
  SimAuthority a;
  a.quoting_key = crypto::generate_ed25519();
  a.ias_key = crypto::generate_ed25519();
  crypto::CertSpec spec;
  spec.subject_cn = "pdot-attestation-service";
  spec.subject_key = a.ias_key.get();
  spec.validity_days = 3650;
  a.ias_cert = crypto::make_certificate(spec);
  return a;
}

void SimAuthority::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_file((fs::path(dir) / "quoting_key.pem").string(),
             crypto::private_key_to_pem(quoting_key.get()));
  write_file((fs::path(dir) / "ias_key.pem").string(),
             crypto::private_key_to_pem(ias_key.get()));
  write_file((fs::path(dir) / "ias_cert.pem").string(),
             crypto::cert_to_pem(ias_cert.get()));
}

SimAuthority SimAuthority::load(const std::string& dir) {
  namespace fs = std::filesystem;
  SimAuthority a;
  a.quoting_key =
      crypto::private_key_from_pem(read_file((fs::path(dir) / "quoting_key.pem").string()));
  a.ias_key =
      crypto::private_key_from_pem(read_file((fs::path(dir) / "ias_key.pem").string()));
  a.ias_cert = crypto::cert_from_pem(read_file((fs::path(dir) / "ias_cert.pem").string()));
  return a;
}

CertPtr build_attested_certificate(EVP_PKEY* enclave_key,
                                   const EnclaveMeasurement& measurement,
                                   const SimAuthority& authority,
                                   const CertificateOptions& opts) {
  AttestationReport report =
      make_report(measurement, enclave_key, {{"platform", "simulated"}});
  Quote quote = make_quote(report, authority.quoting_key.get());
  VerificationReport vr =
      make_verification_report(quote, authority.ias_key.get(), authority.ias_cert.get());

  crypto::CertSpec spec;
  spec.subject_cn = "pdot-resolver";
  spec.subject_key = enclave_key;
  spec.validity_days = opts.validity_days;
  spec.extensions = {{kOidVerificationReport, vr.body},
                     {kOidReportSignature, vr.ias_signature},
                     {kOidSigningCert, vr.signing_cert}};
  if (opts.ca_key) {
    spec.issuer_key = opts.ca_key;
    spec.issuer_cert = opts.ca_cert;
  }
  return crypto::make_certificate(spec);
}

VerifiedIdentity verify_attested_certificate(X509* cert,
                                             const std::vector<Bytes>& roots_der) {
  // (a) all three extensions must be present.
  auto body = crypto::cert_extension(cert, kOidVerificationReport);
  auto sig = crypto::cert_extension(cert, kOidReportSignature);
  auto signing = crypto::cert_extension(cert, kOidSigningCert);
  if (!body || !sig || !signing) {
    throw AttestError(AttestErrc::MissingAttestation,
                      "certificate carries no attestation extensions");
  }

  // (b) the signing certificate must be a configured root.
  bool trusted = false;
  for (const auto& root : roots_der) {
    if (root == *signing) {
      trusted = true;
      break;
    }
  }
  if (!trusted) {
    throw AttestError(AttestErrc::UntrustedAttestationRoot,
                      "attestation signing certificate is not trusted");
  }

  // (c) the report signature must verify under the signing certificate's key.
  CertPtr signing_cert = crypto::cert_from_der(*signing);
  KeyPtr signing_key = crypto::cert_public_key(signing_cert.get());
  if (!crypto::ed25519_verify(signing_key.get(), *body, *sig)) {
    throw AttestError(AttestErrc::BadReportSignature,
                      "verification report signature is invalid");
  }

  VerificationReport vr{*body, *sig, *signing};
  if (vr.verdict() != "OK") {
    throw AttestError(AttestErrc::BadReportSignature,
                      "verification report verdict is " + vr.verdict());
  }
  Quote quote = vr.quote();

  // (d) the attested key must be the key actually presented in the handshake.
  KeyPtr subject = crypto::cert_public_key(cert);
  Bytes subject_raw = crypto::public_key_raw(subject.get());
  if (crypto::sha256(subject_raw) != quote.report.pubkey_hash) {
    throw AttestError(AttestErrc::PubkeyMismatch,
                      "report key hash does not match certificate subject key");
  }

  if (!crypto::cert_in_validity_window(cert)) {
    throw AttestError(AttestErrc::CertificateExpired,
                      "certificate outside its validity window");
  }

  return VerifiedIdentity{quote.report.measurement, std::move(subject_raw)};
}

TrustPolicy TrustPolicy::load_file(const std::string& path) {
  namespace fs = std::filesystem;
  util::KvConfig cfg = util::KvConfig::parse_file(path);
  TrustPolicy p;
  for (const auto& hex : cfg.get_all("measurement")) {
    p.allowed_measurements.insert(EnclaveMeasurement::from_hex(hex).hex());
  }
  fs::path base = fs::path(path).parent_path();
  for (const auto& rel : cfg.get_all("attestation_root")) {
    fs::path root_path = fs::path(rel).is_absolute() ? fs::path(rel) : base / rel;
    CertPtr cert = crypto::cert_from_pem(read_file(root_path.string()));
    p.attestation_roots.push_back(crypto::cert_to_der(cert.get()));
  }
  p.require_attestation = cfg.get_bool("require_attestation", true);
  return p;
}

TrustDecision decide_trust(const VerifiedIdentity& identity, const TrustPolicy& policy) {
  if (policy.allowed_measurements.count(identity.measurement.hex())) {
    return TrustDecision{true, ""};
  }
  return TrustDecision{false, "measurement-not-allowed"};
}

}  // namespace pdot::attest
