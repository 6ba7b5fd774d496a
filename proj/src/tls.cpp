// Copyright the pdot authors. Licensed under the terms of the Apache 2.0 license. See LICENSE in the project root.
#include "pdot/tlsio/tls.hpp"

#include <openssl/bio.h>
#include <openssl/err.h>
#include <openssl/ssl.h>
#include <openssl/x509.h>

namespace pdot::tlsio {

namespace {

[[noreturn]] void throw_ssl(const std::string& what) {
  unsigned long code = ERR_get_error();
  char buf[256] = {};
  if (code) ERR_error_string_n(code, buf, sizeof(buf));
  throw TlsError(what + (code ? std::string(": ") + buf : ""));
}

std::string drain_ssl_errors() {
  std::string out;
  unsigned long code;
  char buf[256];
  while ((code = ERR_get_error()) != 0) {
    ERR_error_string_n(code, buf, sizeof(buf));
    if (!out.empty()) out += "; ";
    out += buf;
  }
  return out;
}

int outcome_index() {
  static int idx = SSL_get_ex_new_index(0, nullptr, nullptr, nullptr, nullptr);
  return idx;
}

std::shared_ptr<SSL_CTX> new_ctx(const SSL_METHOD* method) {
  SSL_CTX* raw = SSL_CTX_new(method);
  if (!raw) throw_ssl("SSL_CTX_new");
  SSL_CTX_set_min_proto_version(raw, TLS1_2_VERSION);
  return std::shared_ptr<SSL_CTX>(raw, SSL_CTX_free);
}

/// Replaces chain verification: checks attestation extensions and the
/// measurement allowlist. Returning 0 aborts the handshake.
int attesting_verify_cb(X509_STORE_CTX* store, void* arg) {
  auto* policy = static_cast<attest::TrustPolicy*>(arg);
  SSL* ssl = static_cast<SSL*>(
      X509_STORE_CTX_get_ex_data(store, SSL_get_ex_data_X509_STORE_CTX_idx()));
  auto* outcome = static_cast<VerifyOutcome*>(SSL_get_ex_data(ssl, outcome_index()));
  X509* leaf = X509_STORE_CTX_get0_cert(store);

  VerifyOutcome scratch;
  if (!outcome) outcome = &scratch;
  outcome->attempted = true;
  try {
    attest::VerifiedIdentity id =
        attest::verify_attested_certificate(leaf, policy->attestation_roots);
    attest::TrustDecision decision = attest::decide_trust(id, *policy);
    if (!decision.accepted) {
      outcome->ok = false;
      outcome->error = "MeasurementNotAllowed";
      outcome->detail = decision.reason;
      return 0;
    }
    outcome->ok = true;
    outcome->identity = std::move(id);
    return 1;
  } catch (const attest::AttestError& e) {
    outcome->ok = false;
    outcome->error = attest::to_string(e.code());
    outcome->detail = e.what();
    return 0;
  } catch (const std::exception& e) {
    outcome->ok = false;
    outcome->error = "VerificationFailure";
    outcome->detail = e.what();
    return 0;
  }
}

}  // namespace

TlsContext TlsContext::server(EVP_PKEY* key, X509* cert,
                              const std::vector<X509*>& chain) {
  TlsContext t;
  t.ctx_ = new_ctx(TLS_server_method());
  if (SSL_CTX_use_certificate(t.ctx_.get(), cert) != 1 ||
      SSL_CTX_use_PrivateKey(t.ctx_.get(), key) != 1 ||
      SSL_CTX_check_private_key(t.ctx_.get()) != 1) {
    throw_ssl("server certificate/key");
  }
  for (X509* extra : chain) {
    X509_up_ref(extra);
    if (SSL_CTX_add_extra_chain_cert(t.ctx_.get(), extra) != 1) {
      X509_free(extra);
      throw_ssl("add chain certificate");
    }
  }
  // Session tickets would add extra records after the handshake; keep the
  // byte flow per query deterministic instead.
  SSL_CTX_set_num_tickets(t.ctx_.get(), 0);
  return t;
}

TlsContext TlsContext::client_attesting(attest::TrustPolicy policy) {
  TlsContext t;
  t.ctx_ = new_ctx(TLS_client_method());
  t.policy_ = std::make_shared<attest::TrustPolicy>(std::move(policy));
  SSL_CTX_set_cert_verify_callback(t.ctx_.get(), attesting_verify_cb, t.policy_.get());
  SSL_CTX_set_verify(t.ctx_.get(), SSL_VERIFY_PEER, nullptr);
  return t;
}

TlsContext TlsContext::client_ca(const std::string& ca_pem) {
  TlsContext t;
  t.ctx_ = new_ctx(TLS_client_method());
  crypto::CertPtr ca = crypto::cert_from_pem(ca_pem);
  X509_STORE* store = SSL_CTX_get_cert_store(t.ctx_.get());
  if (X509_STORE_add_cert(store, ca.get()) != 1) {
    throw_ssl("add CA to store");
  }
  SSL_CTX_set_verify(t.ctx_.get(), SSL_VERIFY_PEER, nullptr);
  return t;
}

TlsContext TlsContext::client_insecure() {
  TlsContext t;
  t.ctx_ = new_ctx(TLS_client_method());
  SSL_CTX_set_verify(t.ctx_.get(), SSL_VERIFY_NONE, nullptr);
  return t;
}

TlsEngine::TlsEngine(const TlsContext& ctx, bool is_server) : ctx_(ctx) {
  ssl_ = SSL_new(ctx.get());
  if (!ssl_) throw_ssl("SSL_new");
  BIO* rbio = BIO_new(BIO_s_mem());
  BIO* wbio = BIO_new(BIO_s_mem());
  if (!rbio || !wbio) {
    BIO_free(rbio);
    BIO_free(wbio);
    SSL_free(ssl_);
    throw_ssl("BIO_new");
  }
  BIO_set_mem_eof_return(rbio, -1);
  BIO_set_mem_eof_return(wbio, -1);
  SSL_set_bio(ssl_, rbio, wbio);  // SSL owns both BIOs now
  rbio_ = rbio;
  wbio_ = wbio;
  SSL_set_ex_data(ssl_, outcome_index(), &outcome_);
  if (is_server) {
    SSL_set_accept_state(ssl_);
  } else {
    SSL_set_connect_state(ssl_);
    std::lock_guard lock(mu_);
    pump_locked();  // emit ClientHello
  }
}

TlsEngine::~TlsEngine() { SSL_free(ssl_); }

void TlsEngine::feed_ciphertext(ByteView data) {
  std::lock_guard lock(mu_);
  size_t off = 0;
  while (off < data.size()) {
    int n = BIO_write(static_cast<BIO*>(rbio_), data.data() + off,
                      static_cast<int>(data.size() - off));
    if (n <= 0) throw TlsError("BIO_write failed");
    off += static_cast<size_t>(n);
  }
  pump_locked();
}

Bytes TlsEngine::take_ciphertext() {
  std::lock_guard lock(mu_);
  BIO* wbio = static_cast<BIO*>(wbio_);
  Bytes out;
  size_t pending;
  while ((pending = BIO_ctrl_pending(wbio)) > 0) {
    size_t prev = out.size();
    out.resize(prev + pending);
    int n = BIO_read(wbio, out.data() + prev, static_cast<int>(pending));
    if (n <= 0) {
      out.resize(prev);
      break;
    }
    out.resize(prev + static_cast<size_t>(n));
  }
  return out;
}

std::optional<Bytes> TlsEngine::next_frame() {
  std::lock_guard lock(mu_);
  return frames_.next();
}

void TlsEngine::write_frame(ByteView payload) {
  std::lock_guard lock(mu_);
  if (state_ != TlsState::Established) {
    throw TlsError("write_frame before session established");
  }
  Bytes framed = wire::frame(payload);
  size_t off = 0;
  while (off < framed.size()) {
    int n = SSL_write(ssl_, framed.data() + off, static_cast<int>(framed.size() - off));
    if (n <= 0) {
      int err = SSL_get_error(ssl_, n);
      state_ = TlsState::Failed;
      error_ = "SSL_write error " + std::to_string(err) + ": " + drain_ssl_errors();
      throw TlsError(error_);
    }
    off += static_cast<size_t>(n);
  }
}

void TlsEngine::shutdown() {
  std::lock_guard lock(mu_);
  if (state_ == TlsState::Established || state_ == TlsState::Closed) {
    SSL_shutdown(ssl_);
    if (state_ == TlsState::Established) state_ = TlsState::Closed;
  }
  ERR_clear_error();
}

TlsState TlsEngine::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

std::string TlsEngine::last_error() const {
  std::lock_guard lock(mu_);
  return error_;
}

void TlsEngine::pump_locked() {
  if (state_ == TlsState::Failed) return;

  if (state_ == TlsState::Handshaking) {
    int rc = SSL_do_handshake(ssl_);
    if (rc == 1) {
      state_ = TlsState::Established;
    } else {
      int err = SSL_get_error(ssl_, rc);
      if (err != SSL_ERROR_WANT_READ && err != SSL_ERROR_WANT_WRITE) {
        state_ = TlsState::Failed;
        error_ = "handshake error " + std::to_string(err) + ": " + drain_ssl_errors();
        if (outcome_.attempted && !outcome_.ok) {
          error_ = outcome_.error + " (" + outcome_.detail + ")";
        }
        return;
      }
    }
  }

  if (state_ != TlsState::Established) return;

  unsigned char buf[4096];
  for (;;) {
    int n = SSL_read(ssl_, buf, sizeof(buf));
    if (n > 0) {
      frames_.feed(ByteView(buf, static_cast<size_t>(n)));
      continue;
    }
    int err = SSL_get_error(ssl_, n);
    if (err == SSL_ERROR_WANT_READ || err == SSL_ERROR_WANT_WRITE) break;
    if (err == SSL_ERROR_ZERO_RETURN) {
      state_ = TlsState::Closed;
      break;
    }
    state_ = TlsState::Failed;
    error_ = "SSL_read error " + std::to_string(err) + ": " + drain_ssl_errors();
    break;
  }
}

}  // namespace pdot::tlsio
