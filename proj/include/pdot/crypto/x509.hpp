// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pdot/crypto/crypto.hpp"

using X509 = struct x509_st;

namespace pdot::crypto {

struct X509Deleter {
  void operator()(X509* c) const;
};
using CertPtr = std::unique_ptr<X509, X509Deleter>;

/// One custom extension payload keyed by dotted OID.
struct CertExtension {
  std::string oid;
  Bytes value;
};

struct CertSpec {
  std::string subject_cn;
  EVP_PKEY* subject_key = nullptr;  // public half goes into the cert
  int validity_days = 365;
  bool is_ca = false;  // adds critical basicConstraints CA:TRUE
  std::vector<CertExtension> extensions;

  // Self-signed when issuer_key is null; otherwise signed by the issuer.
  EVP_PKEY* issuer_key = nullptr;
  X509* issuer_cert = nullptr;
};

CertPtr make_certificate(const CertSpec& spec);

Bytes cert_to_der(X509* cert);
CertPtr cert_from_der(ByteView der);
std::string cert_to_pem(X509* cert);
CertPtr cert_from_pem(const std::string& pem);

KeyPtr cert_public_key(X509* cert);
std::string cert_subject_cn(X509* cert);

/// Extension payload for `oid`, or nullopt when absent.
std::optional<Bytes> cert_extension(X509* cert, const std::string& oid);

/// True when `now` falls within the certificate validity window.
bool cert_in_validity_window(X509* cert);

}  // namespace pdot::crypto
