// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small helpers over GMP integers: seeded random draws, Miller-Rabin, and
// the hex text forms used on the wire.

#include <gmpxx.h>

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fedboost/error.hpp"
#include "fedboost/rng.hpp"

namespace fedboost {

/// 64-bit word stream used for key generation and Paillier nonces. Seeded
/// streams reproduce experiment runs; the system stream draws from the OS.
class WordSource {
 public:
  static WordSource seeded(std::uint64_t seed) { return WordSource(seed); }
  static WordSource system() { return WordSource(); }

  bool is_seeded() const noexcept { return rng_.has_value(); }

  std::uint64_t next() {
    if (rng_) return rng_->next();
    return (static_cast<std::uint64_t>((*device_)()) << 32) ^ (*device_)();
  }

 private:
  explicit WordSource(std::uint64_t seed) : rng_(Rng(seed)) {}
  WordSource() : device_(std::make_unique<std::random_device>()) {}

  std::optional<Rng> rng_;
  std::unique_ptr<std::random_device> device_;
};

/// Uniform integer with exactly `bits` random bits (value < 2^bits).
inline mpz_class random_bits(WordSource& src, unsigned bits) {
  const std::size_t words = (bits + 63) / 64;
  std::vector<std::uint64_t> buf(words);
  for (auto& w : buf) w = src.next();
  mpz_class out;
  mpz_import(out.get_mpz_t(), words, -1, sizeof(std::uint64_t), 0, 0, buf.data());
  const mpz_class mask = (mpz_class(1) << bits) - 1;
  out &= mask;
  return out;
}

/// Uniform integer in [0, bound), bound > 0.
inline mpz_class random_below(WordSource& src, const mpz_class& bound) {
  const auto bits = static_cast<unsigned>(mpz_sizeinbase(bound.get_mpz_t(), 2));
  for (;;) {
    mpz_class x = random_bits(src, bits);
    if (x < bound) return x;
  }
}

inline bool is_probable_prime(const mpz_class& n, int rounds, WordSource& src) {
  if (n < 2) return false;
  static constexpr unsigned kSmall[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,
                                        43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97};
  for (unsigned p : kSmall) {
    if (n == p) return true;
    if (mpz_divisible_ui_p(n.get_mpz_t(), p)) return false;
  }
  // n - 1 = d * 2^s with d odd
  const mpz_class n_minus_1 = n - 1;
  mpz_class d = n_minus_1;
  unsigned s = 0;
  while (mpz_even_p(d.get_mpz_t())) {
    d >>= 1;
    ++s;
  }
  const mpz_class span = n - 3;  // bases drawn from [2, n-2]
  mpz_class x;
  for (int round = 0; round < rounds; ++round) {
    const mpz_class a = random_below(src, span) + 2;
    mpz_powm(x.get_mpz_t(), a.get_mpz_t(), d.get_mpz_t(), n.get_mpz_t());
    if (x == 1 || x == n_minus_1) continue;
    bool composite = true;
    for (unsigned r = 1; r < s; ++r) {
      x = (x * x) % n;
      if (x == n_minus_1) {
        composite = false;
        break;
      }
    }
    if (composite) return false;
  }
  return true;
}

/// Random prime with exactly `bits` bits and its two top bits set, so the
/// product of two such primes has exactly 2 * bits bits.
inline mpz_class random_prime(unsigned bits, int rounds, WordSource& src) {
  for (;;) {
    mpz_class candidate = random_bits(src, bits);
    mpz_setbit(candidate.get_mpz_t(), bits - 1);
    mpz_setbit(candidate.get_mpz_t(), bits - 2);
    mpz_setbit(candidate.get_mpz_t(), 0);
    if (is_probable_prime(candidate, rounds, src)) return candidate;
  }
}

/// Lowercase hex, no prefix. Non-negative values only.
inline std::string to_hex(const mpz_class& v) {
  if (v < 0) fail(Errc::InvalidArgument, "to_hex on a negative integer");
  return v.get_str(16);
}

inline mpz_class from_hex(std::string_view text) {
  if (text.empty()) fail(Errc::ProtocolViolation, "empty hex string");
  for (char ch : text) {
    const bool ok = (ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'f');
    if (!ok) fail(Errc::ProtocolViolation, "invalid hex digit in '" + std::string(text) + "'");
  }
  return mpz_class(std::string(text), 16);
}

/// '+' or '-' followed by lowercase hex magnitude.
inline std::string to_signed_hex(const mpz_class& v) {
  if (v < 0) return "-" + mpz_class(-v).get_str(16);
  return "+" + v.get_str(16);
}

inline mpz_class from_signed_hex(std::string_view text) {
  if (text.size() < 2 || (text[0] != '+' && text[0] != '-'))
    fail(Errc::ProtocolViolation, "signed hex must start with '+' or '-'");
  mpz_class magnitude = from_hex(text.substr(1));
  return text[0] == '-' ? mpz_class(-magnitude) : magnitude;
}

}  // namespace fedboost
