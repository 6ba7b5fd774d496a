// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

#include "pdot/attest/attest.hpp"
#include "pdot/wire/framing.hpp"

using SSL_CTX = struct ssl_ctx_st;
using SSL = struct ssl_st;

namespace pdot::tlsio {

using util::Bytes;
using util::ByteView;

class TlsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Result of the client-side certificate check, written by the verify
/// callback during the handshake.
struct VerifyOutcome {
  bool attempted = false;
  bool ok = false;
  std::string error;   // AttestErrc name or "MeasurementNotAllowed"
  std::string detail;
  std::optional<attest::VerifiedIdentity> identity;
};

/// Shared, immutable TLS configuration. Copies share one SSL_CTX.
class TlsContext {
 public:
  /// Server presenting `cert` for `key`; `chain` certs are sent as extras.
  static TlsContext server(EVP_PKEY* key, X509* cert,
                           const std::vector<X509*>& chain = {});

  /// Client that verifies attestation extensions against `policy` instead of
  /// a conventional chain. Handshake aborts before any application byte when
  /// verification fails.
  static TlsContext client_attesting(attest::TrustPolicy policy);

  /// Client performing standard chain verification against one CA.
  static TlsContext client_ca(const std::string& ca_pem);

  /// Client that accepts any server certificate.
  static TlsContext client_insecure();

  SSL_CTX* get() const { return ctx_.get(); }

 private:
  TlsContext() = default;
  std::shared_ptr<SSL_CTX> ctx_;
  std::shared_ptr<attest::TrustPolicy> policy_;  // keeps callback arg alive
};

enum class TlsState { Handshaking, Established, Closed, Failed };

/// One TLS session driven entirely through memory BIOs. Socket bytes go in
/// via feed_ciphertext and come out via take_ciphertext; plaintext messages
/// use the 2-byte length framing. Safe for concurrent use.
class TlsEngine {
 public:
  TlsEngine(const TlsContext& ctx, bool is_server);
  ~TlsEngine();
  TlsEngine(const TlsEngine&) = delete;

  /// Ciphertext arriving from the peer. Advances the handshake and decrypts
  /// application data internally.
  void feed_ciphertext(ByteView data);

  /// Drains ciphertext produced for the peer (handshake records, app data,
  /// alerts). Empty when nothing is pending.
  Bytes take_ciphertext();

  /// Next complete plaintext message, if one has been decrypted.
  std::optional<Bytes> next_frame();

  /// Encrypts one framed message. Only valid once established.
  void write_frame(ByteView payload);

  /// Starts a close_notify exchange.
  void shutdown();

  TlsState state() const;
  bool established() const { return state() == TlsState::Established; }
  std::string last_error() const;

  /// Client side only: outcome of the attestation verify callback.
  const VerifyOutcome& verify_outcome() const { return outcome_; }

 private:
  void pump_locked();

  mutable std::mutex mu_;
  TlsContext ctx_;       // keeps the verify-callback state alive
  SSL* ssl_ = nullptr;   // owns rbio/wbio
  void* rbio_ = nullptr;
  void* wbio_ = nullptr;
  wire::FrameBuffer frames_;
  TlsState state_ = TlsState::Handshaking;
  std::string error_;
  VerifyOutcome outcome_;
};

}  // namespace pdot::tlsio
