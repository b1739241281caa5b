// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <gmpxx.h>

#include <string>
#include <vector>

#include "fedboost/error.hpp"
#include "fedboost/paillier.hpp"
#include "fedboost/quantize.hpp"

namespace fedboost {

/// Per-entry Paillier ciphertexts of a quantized gradient, tagged with the
/// public modulus they were produced under.
struct EncryptedGradient {
  mpz_class modulus;
  std::vector<paillier::Ciphertext> values;
  int scale_exponent = 32;
  int pieces = 100;

  std::size_t size() const noexcept { return values.size(); }

  friend bool operator==(const EncryptedGradient&, const EncryptedGradient&) = default;
};

inline void require_same_key(const paillier::PublicKey& pk, const EncryptedGradient& g) {
  if (g.modulus != pk.n) fail(Errc::KeyMismatch, "gradient was encrypted under a different key");
}

inline EncryptedGradient encrypt_gradient(const paillier::PublicKey& pk, const QuantizedGradient& q,
                                          paillier::NonceSource& nonces) {
  EncryptedGradient out{pk.n, {}, q.scale_exponent, q.pieces};
  out.values.reserve(q.size());
  for (const auto& g : q.values)
    out.values.push_back(paillier::encrypt(pk, paillier::encode_signed(g, pk.n), nonces));
  return out;
}

inline QuantizedGradient decrypt_gradient(const paillier::KeyPair& kp, const EncryptedGradient& e) {
  require_same_key(kp.pub, e);
  QuantizedGradient out;
  out.scale_exponent = e.scale_exponent;
  out.pieces = e.pieces;
  out.values.reserve(e.size());
  for (const auto& c : e.values)
    out.values.push_back(paillier::decode_signed(paillier::decrypt(kp, c), kp.pub.n));
  return out;
}

}  // namespace fedboost
