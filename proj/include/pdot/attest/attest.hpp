// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdot/crypto/crypto.hpp"
#include "pdot/crypto/x509.hpp"

namespace pdot::attest {

using crypto::Bytes;
using crypto::ByteView;
using crypto::CertPtr;
using crypto::KeyPtr;

// Extension identifiers carried by attested certificates (see docs/attestation.md):
// .1 = verification report body, .2 = its signature, .3 = signing certificate DER.
inline constexpr const char* kOidVerificationReport = "1.3.6.1.4.1.55555.1.1";
inline constexpr const char* kOidReportSignature = "1.3.6.1.4.1.55555.1.2";
inline constexpr const char* kOidSigningCert = "1.3.6.1.4.1.55555.1.3";

enum class AttestErrc {
  MalformedManifest,
  MissingAttestation,
  UntrustedAttestationRoot,
  BadReportSignature,
  PubkeyMismatch,
  CertificateExpired,
  MalformedExtension,
};

class AttestError : public std::runtime_error {
 public:
  AttestError(AttestErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  AttestErrc code() const { return code_; }

 private:
  AttestErrc code_;
};

const char* to_string(AttestErrc code);

/// SHA-256 over the canonical build manifest of the trusted component.
struct EnclaveMeasurement {
  Bytes digest;  // 32 bytes

  std::string hex() const { return util::to_hex(digest); }
  static EnclaveMeasurement from_hex(const std::string& hex);
  bool operator==(const EnclaveMeasurement&) const = default;
};

/// Code identity of the trusted component: version plus per-unit content hashes.
struct BuildManifest {
  std::string version;
  std::map<std::string, std::string> units;  // path -> lowercase hex digest

  static BuildManifest parse_text(const std::string& text);
  static BuildManifest parse_file(const std::string& path);

  /// Byte-exact canonical form: version line, then unit lines sorted by path.
  std::string canonical() const;
};

EnclaveMeasurement measure_trusted_component(const BuildManifest& manifest);

struct AttestationReport {
  EnclaveMeasurement measurement;
  Bytes pubkey_hash;  // SHA-256 of the raw enclave public key
  std::map<std::string, std::string> platform_attrs;

  Bytes serialize() const;
  static AttestationReport deserialize(ByteView data);
};

struct Quote {
  AttestationReport report;
  Bytes quoting_signature;

  Bytes serialize() const;
  static Quote deserialize(ByteView data);
};

struct VerificationReport {
  Bytes body;           // serialized quote contents + verdict
  Bytes ias_signature;  // by the simulated attestation service
  Bytes signing_cert;   // DER certificate of the attestation service

  /// Quote reconstructed from the body.
  Quote quote() const;
  std::string verdict() const;
};

AttestationReport make_report(const EnclaveMeasurement& measurement,
                              EVP_PKEY* enclave_key,
                              std::map<std::string, std::string> platform_attrs = {});
Quote make_quote(const AttestationReport& report, EVP_PKEY* quoting_key);
bool verify_quote(const Quote& quote, EVP_PKEY* quoting_pubkey);
VerificationReport make_verification_report(const Quote& quote, EVP_PKEY* ias_key,
                                            X509* ias_cert);

/// Simulated quoting + attestation-service authority, generated per deployment.
struct SimAuthority {
  KeyPtr quoting_key;
  KeyPtr ias_key;
  CertPtr ias_cert;

  static SimAuthority generate();
  void save(const std::string& dir) const;
  static SimAuthority load(const std::string& dir);
};

struct CertificateOptions {
  int validity_days = 365;
  // When set, the certificate is issued under this conventional CA as well,
  // so legacy clients can chain it while attesting clients check extensions.
  EVP_PKEY* ca_key = nullptr;
  X509* ca_cert = nullptr;
};

/// Runs report -> quote -> verification report and embeds the results as
/// certificate extensions over the enclave public key.
CertPtr build_attested_certificate(EVP_PKEY* enclave_key,
                                   const EnclaveMeasurement& measurement,
                                   const SimAuthority& authority,
                                   const CertificateOptions& opts = {});

struct VerifiedIdentity {
  EnclaveMeasurement measurement;
  Bytes pubkey;  // raw public key bytes from the certificate subject
};

/// Checks, in order: extensions present, signing cert among `roots`,
/// report signature valid, report key hash matches the subject key.
/// Throws AttestError naming the first failed step.
VerifiedIdentity verify_attested_certificate(X509* cert,
                                             const std::vector<Bytes>& roots_der);

struct TrustPolicy {
  std::set<std::string> allowed_measurements;  // lowercase hex
  std::vector<Bytes> attestation_roots;        // DER signing certificates
  bool require_attestation = true;

  static TrustPolicy load_file(const std::string& path);
};

struct TrustDecision {
  bool accepted = false;
  std::string reason;  // empty on accept
};

TrustDecision decide_trust(const VerifiedIdentity& identity, const TrustPolicy& policy);

}  // namespace pdot::attest
