// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/crypto/crypto.hpp"

#include <openssl/bio.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>

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

struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

std::string bio_to_string(BIO* bio) {
  char* data = nullptr;
  long len = BIO_get_mem_data(bio, &data);
  return std::string(data, static_cast<size_t>(len));
}

}  // namespace

void EvpKeyDeleter::operator()(EVP_PKEY* k) const { EVP_PKEY_free(k); }

Bytes sha256(ByteView data) {
  Bytes out(32);
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != 32) {
    throw_ssl("sha256");
  }
  return out;
}

std::string sha256_hex(ByteView data) { return util::to_hex(sha256(data)); }

KeyPtr generate_ed25519() {
  EVP_PKEY* key = nullptr;
  std::unique_ptr<EVP_PKEY_CTX, decltype(&EVP_PKEY_CTX_free)> ctx(
      EVP_PKEY_CTX_new_id(EVP_PKEY_ED25519, nullptr), EVP_PKEY_CTX_free);
  if (!ctx || EVP_PKEY_keygen_init(ctx.get()) != 1 ||
      EVP_PKEY_keygen(ctx.get(), &key) != 1) {
    throw_ssl("ed25519 keygen");
  }
  return KeyPtr(key);
}

Bytes ed25519_sign(EVP_PKEY* key, ByteView msg) {
  MdCtxPtr ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr, key) != 1) {
    throw_ssl("sign init");
  }
  size_t siglen = 0;
  if (EVP_DigestSign(ctx.get(), nullptr, &siglen, msg.data(), msg.size()) != 1) {
    throw_ssl("sign size");
  }
  Bytes sig(siglen);
  if (EVP_DigestSign(ctx.get(), sig.data(), &siglen, msg.data(), msg.size()) != 1) {
    throw_ssl("sign");
  }
  sig.resize(siglen);
  return sig;
}

bool ed25519_verify(EVP_PKEY* pubkey, ByteView msg, ByteView sig) {
  MdCtxPtr ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, pubkey) != 1) {
    throw_ssl("verify init");
  }
  int rc = EVP_DigestVerify(ctx.get(), sig.data(), sig.size(), msg.data(), msg.size());
  ERR_clear_error();
  return rc == 1;
}

Bytes public_key_raw(EVP_PKEY* key) {
  size_t len = 0;
  if (EVP_PKEY_get_raw_public_key(key, nullptr, &len) != 1) {
    throw_ssl("raw public key size");
  }
  Bytes raw(len);
  if (EVP_PKEY_get_raw_public_key(key, raw.data(), &len) != 1) {
    throw_ssl("raw public key");
  }
  raw.resize(len);
  return raw;
}

KeyPtr public_key_from_raw(ByteView raw) {
  EVP_PKEY* key =
      EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, raw.data(), raw.size());
  if (!key) throw_ssl("raw public key import");
  return KeyPtr(key);
}

std::string private_key_to_pem(EVP_PKEY* key) {
  BioPtr bio(BIO_new(BIO_s_mem()));
  if (!bio ||
      PEM_write_bio_PrivateKey(bio.get(), key, nullptr, nullptr, 0, nullptr, nullptr) != 1) {
    throw_ssl("private key to PEM");
  }
  return bio_to_string(bio.get());
}

KeyPtr private_key_from_pem(const std::string& pem) {
  BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
  EVP_PKEY* key = bio ? PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr) : nullptr;
  if (!key) throw_ssl("private key from PEM");
  return KeyPtr(key);
}

std::string public_key_to_pem(EVP_PKEY* key) {
  BioPtr bio(BIO_new(BIO_s_mem()));
  if (!bio || PEM_write_bio_PUBKEY(bio.get(), key) != 1) {
    throw_ssl("public key to PEM");
  }
  return bio_to_string(bio.get());
}

KeyPtr public_key_from_pem(const std::string& pem) {
  BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
  EVP_PKEY* key = bio ? PEM_read_bio_PUBKEY(bio.get(), nullptr, nullptr, nullptr) : nullptr;
  if (!key) throw_ssl("public key from PEM");
  return KeyPtr(key);
}

}  // namespace pdot::crypto
