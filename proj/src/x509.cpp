// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/crypto/x509.hpp"

#include <openssl/asn1.h>
#include <openssl/bio.h>
#include <openssl/bn.h>
#include <openssl/err.h>
#include <openssl/objects.h>
#include <openssl/pem.h>
#include <openssl/rand.h>
#include <openssl/x509.h>
#include <openssl/x509v3.h>

namespace pdot::crypto {

namespace {

[[noreturn]] void throw_ssl(const std::string& what) {
  unsigned long code = ERR_get_error();
  char buf[256] = {};
  if (code) ERR_error_string_n(code, buf, sizeof(buf));
  throw CryptoError(what + (code ? std::string(": ") + buf : ""));
}

struct BioDeleter {
  void operator()(BIO* b) const { BIO_free(b); }
};
using BioPtr = std::unique_ptr<BIO, BioDeleter>;

void set_cn(X509_NAME* name, const std::string& cn) {
  if (X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC,
                                 reinterpret_cast<const unsigned char*>(cn.data()),
                                 static_cast<int>(cn.size()), -1, 0) != 1) {
    throw_ssl("set subject CN");
  }
}

void add_extension(X509* cert, const CertExtension& ext) {
  std::unique_ptr<ASN1_OBJECT, decltype(&ASN1_OBJECT_free)> obj(
      OBJ_txt2obj(ext.oid.c_str(), 1), ASN1_OBJECT_free);
  if (!obj) throw_ssl("parse extension OID " + ext.oid);

  std::unique_ptr<ASN1_OCTET_STRING, decltype(&ASN1_OCTET_STRING_free)> data(
      ASN1_OCTET_STRING_new(), ASN1_OCTET_STRING_free);
  if (!data || ASN1_OCTET_STRING_set(data.get(), ext.value.data(),
                                     static_cast<int>(ext.value.size())) != 1) {
    throw_ssl("build extension payload");
  }

  std::unique_ptr<X509_EXTENSION, decltype(&X509_EXTENSION_free)> x(
      X509_EXTENSION_create_by_OBJ(nullptr, obj.get(), 0, data.get()),
      X509_EXTENSION_free);
  if (!x || X509_add_ext(cert, x.get(), -1) != 1) {
    throw_ssl("attach extension " + ext.oid);
  }
}

}  // namespace

void X509Deleter::operator()(X509* c) const { X509_free(c); }

CertPtr make_certificate(const CertSpec& spec) {
  CertPtr cert(X509_new());
  if (!cert) throw_ssl("X509_new");

  X509_set_version(cert.get(), 2);

  // Random serial so repeated issues from one CA stay distinct.
  unsigned char serial_bytes[8];
  RAND_bytes(serial_bytes, sizeof(serial_bytes));
  serial_bytes[0] &= 0x7F;
  std::unique_ptr<BIGNUM, decltype(&BN_free)> bn(
      BN_bin2bn(serial_bytes, sizeof(serial_bytes), nullptr), BN_free);
  BN_to_ASN1_INTEGER(bn.get(), X509_get_serialNumber(cert.get()));

  X509_gmtime_adj(X509_getm_notBefore(cert.get()), -60);
  X509_gmtime_adj(X509_getm_notAfter(cert.get()),
                  static_cast<long>(spec.validity_days) * 24 * 3600);

  set_cn(X509_get_subject_name(cert.get()), spec.subject_cn);
  if (X509_set_pubkey(cert.get(), spec.subject_key) != 1) {
    throw_ssl("set subject key");
  }

  if (spec.is_ca) {
    std::unique_ptr<X509_EXTENSION, decltype(&X509_EXTENSION_free)> bc(
        X509V3_EXT_conf_nid(nullptr, nullptr, NID_basic_constraints,
                            "critical,CA:TRUE"),
        X509_EXTENSION_free);
    if (!bc || X509_add_ext(cert.get(), bc.get(), -1) != 1) {
      throw_ssl("attach basicConstraints");
    }
  }

  for (const auto& ext : spec.extensions) add_extension(cert.get(), ext);

  EVP_PKEY* sign_key = spec.issuer_key ? spec.issuer_key : spec.subject_key;
  if (spec.issuer_cert) {
    X509_set_issuer_name(cert.get(), X509_get_subject_name(spec.issuer_cert));
  } else {
    X509_set_issuer_name(cert.get(), X509_get_subject_name(cert.get()));
  }

  // Ed25519 signing requires a null digest.
  if (X509_sign(cert.get(), sign_key, nullptr) == 0) {
    throw_ssl("sign certificate");
  }
  return cert;
}

Bytes cert_to_der(X509* cert) {
  unsigned char* buf = nullptr;
  int len = i2d_X509(cert, &buf);
  if (len < 0) throw_ssl("certificate to DER");
  Bytes out(buf, buf + len);
  OPENSSL_free(buf);
  return out;
}

CertPtr cert_from_der(ByteView der) {
  const unsigned char* p = der.data();
  X509* cert = d2i_X509(nullptr, &p, static_cast<long>(der.size()));
  if (!cert) throw_ssl("certificate from DER");
  return CertPtr(cert);
}

std::string cert_to_pem(X509* cert) {
  BioPtr bio(BIO_new(BIO_s_mem()));
  if (!bio || PEM_write_bio_X509(bio.get(), cert) != 1) {
    throw_ssl("certificate to PEM");
  }
  char* data = nullptr;
  long len = BIO_get_mem_data(bio.get(), &data);
  return std::string(data, static_cast<size_t>(len));
}

CertPtr cert_from_pem(const std::string& pem) {
  BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
  X509* cert = bio ? PEM_read_bio_X509(bio.get(), nullptr, nullptr, nullptr) : nullptr;
  if (!cert) throw_ssl("certificate from PEM");
  return CertPtr(cert);
}

KeyPtr cert_public_key(X509* cert) {
  EVP_PKEY* key = X509_get_pubkey(cert);
  if (!key) throw_ssl("extract certificate key");
  return KeyPtr(key);
}

std::string cert_subject_cn(X509* cert) {
  char buf[256] = {};
  X509_NAME_get_text_by_NID(X509_get_subject_name(cert), NID_commonName, buf,
                            sizeof(buf));
  return buf;
}

std::optional<Bytes> cert_extension(X509* cert, const std::string& oid) {
  std::unique_ptr<ASN1_OBJECT, decltype(&ASN1_OBJECT_free)> obj(
      OBJ_txt2obj(oid.c_str(), 1), ASN1_OBJECT_free);
  if (!obj) throw_ssl("parse extension OID " + oid);

  int idx = X509_get_ext_by_OBJ(cert, obj.get(), -1);
  if (idx < 0) return std::nullopt;
  X509_EXTENSION* ext = X509_get_ext(cert, idx);
  ASN1_OCTET_STRING* data = X509_EXTENSION_get_data(ext);
  const unsigned char* p = ASN1_STRING_get0_data(data);
  return Bytes(p, p + ASN1_STRING_length(data));
}

bool cert_in_validity_window(X509* cert) {
  return X509_cmp_current_time(X509_get0_notBefore(cert)) < 0 &&
         X509_cmp_current_time(X509_get0_notAfter(cert)) > 0;
}

}  // namespace pdot::crypto
