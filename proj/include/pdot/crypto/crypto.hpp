// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "pdot/util/bytes.hpp"

using EVP_PKEY = struct evp_pkey_st;

namespace pdot::crypto {

using util::Bytes;
using util::ByteView;

class CryptoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvpKeyDeleter {
  void operator()(EVP_PKEY* k) const;
};
using KeyPtr = std::unique_ptr<EVP_PKEY, EvpKeyDeleter>;

Bytes sha256(ByteView data);
std::string sha256_hex(ByteView data);

KeyPtr generate_ed25519();

/// Detached Ed25519 signature (64 bytes).
Bytes ed25519_sign(EVP_PKEY* key, ByteView msg);
bool ed25519_verify(EVP_PKEY* pubkey, ByteView msg, ByteView sig);

/// Raw 32-byte public key, and its inverse.
Bytes public_key_raw(EVP_PKEY* key);
KeyPtr public_key_from_raw(ByteView raw);

std::string private_key_to_pem(EVP_PKEY* key);
KeyPtr private_key_from_pem(const std::string& pem);
std::string public_key_to_pem(EVP_PKEY* key);
KeyPtr public_key_from_pem(const std::string& pem);

}  // namespace pdot::crypto
