// SPDX-License-Identifier: Apache-2.0
#pragma once

// Paillier cryptosystem, g = n + 1 variant.
//
//   Enc(m) = g^m r^n mod n^2 = (1 + m n) r^n mod n^2
//   Dec(c) = L(c^lambda mod n^2) mu mod n,   L(x) = (x - 1) / n
//
// Ciphertext multiplication adds plaintexts mod n; exponentiation by a
// plaintext scalar multiplies. Key sizes are configurable; the 128-bit
// keys used by the default experiments are far too small for real secrecy.

#include <gmpxx.h>

#include <cstdint>
#include <string>

#include "fedboost/bigint.hpp"
#include "fedboost/error.hpp"

namespace fedboost::paillier {

inline constexpr int kMillerRabinRounds = 40;

struct PublicKey {
  mpz_class n;
  mpz_class n_squared;
  mpz_class g;
  unsigned key_bits = 0;

  static PublicKey from_modulus(const mpz_class& n) {
    PublicKey pk;
    pk.n = n;
    pk.n_squared = n * n;
    pk.g = n + 1;
    pk.key_bits = static_cast<unsigned>(mpz_sizeinbase(n.get_mpz_t(), 2));
    return pk;
  }

  friend bool operator==(const PublicKey&, const PublicKey&) = default;
};

struct SecretKey {
  mpz_class lambda;
  mpz_class mu;

  friend bool operator==(const SecretKey&, const SecretKey&) = default;
};

struct KeyPair {
  PublicKey pub;
  SecretKey sec;

  friend bool operator==(const KeyPair&, const KeyPair&) = default;
};

struct Ciphertext {
  mpz_class value;

  friend bool operator==(const Ciphertext&, const Ciphertext&) = default;
};

/// Nonce stream for encryption; seeded for reproducible experiment runs.
using NonceSource = WordSource;

namespace detail {

inline mpz_class L(const mpz_class& x, const mpz_class& n) { return (x - 1) / n; }

inline mpz_class powm(const mpz_class& base, const mpz_class& exp, const mpz_class& mod) {
  mpz_class out;
  mpz_powm(out.get_mpz_t(), base.get_mpz_t(), exp.get_mpz_t(), mod.get_mpz_t());
  return out;
}

inline void check_ciphertext(const PublicKey& pk, const Ciphertext& c) {
  if (c.value <= 0 || c.value >= pk.n_squared)
    fail(Errc::KeyMismatch, "ciphertext is not an element of Z*_{n^2} for this key");
}

}  // namespace detail

/// Keys derived from the secret primes. Exposed for tests that build toy keys.
inline KeyPair key_from_primes(const mpz_class& p, const mpz_class& q) {
  if (p == q) fail(Errc::WeakKey, "p and q must be distinct");
  KeyPair kp;
  kp.pub = PublicKey::from_modulus(p * q);
  const mpz_class p1 = p - 1;
  const mpz_class q1 = q - 1;
  mpz_lcm(kp.sec.lambda.get_mpz_t(), p1.get_mpz_t(), q1.get_mpz_t());
  const mpz_class u = detail::L(detail::powm(kp.pub.g, kp.sec.lambda, kp.pub.n_squared), kp.pub.n);
  if (mpz_invert(kp.sec.mu.get_mpz_t(), u.get_mpz_t(), kp.pub.n.get_mpz_t()) == 0)
    fail(Errc::WeakKey, "L(g^lambda) is not invertible mod n");
  return kp;
}

/// Deterministic for a fixed seed.
inline KeyPair keygen(unsigned key_bits, std::uint64_t seed) {
  if (key_bits < 64 || key_bits % 2 != 0)
    fail(Errc::WeakKey, "key_bits must be even and >= 64, got " + std::to_string(key_bits));
  auto src = WordSource::seeded(seed);
  const unsigned half = key_bits / 2;
  for (;;) {
    const mpz_class p = random_prime(half, kMillerRabinRounds, src);
    const mpz_class q = random_prime(half, kMillerRabinRounds, src);
    if (p == q) continue;
    const mpz_class n = p * q;
    const mpz_class phi = (p - 1) * (q - 1);
    mpz_class g;
    mpz_gcd(g.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
    if (g != 1 || mpz_sizeinbase(n.get_mpz_t(), 2) != key_bits) continue;
    return key_from_primes(p, q);
  }
}

inline Ciphertext encrypt(const PublicKey& pk, const mpz_class& m, NonceSource& nonces) {
  if (m < 0 || m >= pk.n) fail(Errc::PlaintextOutOfRange, "plaintext must lie in [0, n)");
  mpz_class r, gcd;
  do {
    r = random_below(nonces, pk.n);
    mpz_gcd(gcd.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t());
  } while (r == 0 || gcd != 1);
  const mpz_class gm = (1 + m * pk.n) % pk.n_squared;
  return {(gm * detail::powm(r, pk.n, pk.n_squared)) % pk.n_squared};
}

inline mpz_class decrypt(const KeyPair& kp, const Ciphertext& c) {
  detail::check_ciphertext(kp.pub, c);
  const mpz_class u = detail::L(detail::powm(c.value, kp.sec.lambda, kp.pub.n_squared), kp.pub.n);
  return (u * kp.sec.mu) % kp.pub.n;
}

/// Dec(he_add(a, b)) = Dec(a) + Dec(b) mod n
inline Ciphertext he_add(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
  detail::check_ciphertext(pk, a);
  detail::check_ciphertext(pk, b);
  return {(a.value * b.value) % pk.n_squared};
}

/// Dec(he_scalar_mul(k, a)) = k Dec(a) mod n
inline Ciphertext he_scalar_mul(const PublicKey& pk, const mpz_class& k, const Ciphertext& a) {
  if (k < 0) fail(Errc::InvalidArgument, "scalar must be non-negative");
  detail::check_ciphertext(pk, a);
  return {detail::powm(a.value, k, pk.n_squared)};
}

/// Signed values map onto Z_n by wraparound: negatives occupy the upper half.
inline mpz_class encode_signed(const mpz_class& v, const mpz_class& n) {
  if (2 * abs(v) >= n) fail(Errc::CapacityExceeded, "|v| must be below n/2");
  mpz_class out = v % n;
  if (out < 0) out += n;
  return out;
}

inline mpz_class decode_signed(const mpz_class& m, const mpz_class& n) {
  if (m < 0 || m >= n) fail(Errc::PlaintextOutOfRange, "encoded value must lie in [0, n)");
  return 2 * m < n ? m : mpz_class(m - n);
}

}  // namespace fedboost::paillier
