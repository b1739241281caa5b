// SPDX-License-Identifier: Apache-2.0
#pragma once

// Fixed-point codec between real gradients and the integer "pieces" that
// Paillier aggregation operates on:
//
//   g_k = round_half_even(G_k * S / P),   S = 10^scale_exponent
//
// G_k * S is formed exactly from the binary value of G_k, so the only loss
// is the final rounding (at most P / (2S) per entry after dequantization).

#include <gmpxx.h>
#include <mpfr.h>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedboost/error.hpp"

namespace fedboost {

struct QuantConfig {
  int scale_exponent = 32;
  int pieces = 100;

  void validate() const {
    if (scale_exponent < 1) fail(Errc::InvalidArgument, "scale_exponent must be >= 1");
    if (pieces < 1) fail(Errc::InvalidArgument, "pieces must be >= 1");
  }

  mpz_class scale() const {
    mpz_class s;
    mpz_ui_pow_ui(s.get_mpz_t(), 10, static_cast<unsigned long>(scale_exponent));
    return s;
  }

  friend bool operator==(const QuantConfig&, const QuantConfig&) = default;
};

/// Integers plus the factor needed to get back to reals: entry = g * pieces / S.
/// Freshly quantized gradients carry pieces = P. Weighted homomorphic sums
/// whose integer weights already total ~P carry pieces = 1.
struct QuantizedGradient {
  std::vector<mpz_class> values;
  int scale_exponent = 32;
  int pieces = 100;

  std::size_t size() const noexcept { return values.size(); }

  friend bool operator==(const QuantizedGradient&, const QuantizedGradient&) = default;
};

/// Nearest integer to an exact rational, ties to even.
inline mpz_class round_half_even(const mpq_class& x) {
  const mpz_class& num = x.get_num();
  const mpz_class& den = x.get_den();  // canonical form keeps den > 0
  mpz_class floor_q, rem;
  mpz_fdiv_qr(floor_q.get_mpz_t(), rem.get_mpz_t(), num.get_mpz_t(), den.get_mpz_t());
  const int cmp_half = cmp(mpz_class(2 * rem), den);
  if (cmp_half > 0 || (cmp_half == 0 && mpz_odd_p(floor_q.get_mpz_t()))) floor_q += 1;
  return floor_q;
}

/// Correctly rounded (nearest, ties-to-even) double of an exact rational.
inline double to_nearest_double(const mpq_class& x) {
  mpfr_t tmp;
  mpfr_init2(tmp, 53);
  mpfr_set_q(tmp, x.get_mpq_t(), MPFR_RNDN);
  const double out = mpfr_get_d(tmp, MPFR_RNDN);
  mpfr_clear(tmp);
  return out;
}

inline QuantizedGradient quantize(std::span<const double> gradient, const QuantConfig& cfg) {
  cfg.validate();
  mpq_class factor(cfg.scale(), mpz_class(cfg.pieces));
  factor.canonicalize();
  QuantizedGradient out;
  out.scale_exponent = cfg.scale_exponent;
  out.pieces = cfg.pieces;
  out.values.reserve(gradient.size());
  for (std::size_t k = 0; k < gradient.size(); ++k) {
    if (!std::isfinite(gradient[k]))
      fail(Errc::NonFiniteGradient, "entry " + std::to_string(k) + " is not finite");
    const mpq_class exact(gradient[k]);  // exact binary value
    out.values.push_back(round_half_even(exact * factor));
  }
  return out;
}

inline std::vector<double> dequantize(const QuantizedGradient& q) {
  const QuantConfig cfg{q.scale_exponent, q.pieces};
  cfg.validate();
  mpq_class factor(mpz_class(q.pieces), cfg.scale());
  factor.canonicalize();
  std::vector<double> out;
  out.reserve(q.values.size());
  for (const auto& g : q.values) out.push_back(to_nearest_double(mpq_class(g) * factor));
  return out;
}

/// round_half_even(p * P) for an aggregation weight p in [0, 1].
inline std::int64_t quantize_weight(double p, int pieces) {
  if (!(p >= 0.0 && p <= 1.0)) fail(Errc::InvalidWeight, "weight " + std::to_string(p) + " outside [0, 1]");
  if (pieces < 1) fail(Errc::InvalidArgument, "pieces must be >= 1");
  // nearbyint under the default FE_TONEAREST mode rounds ties to even
  return static_cast<std::int64_t>(std::nearbyint(p * static_cast<double>(pieces)));
}

/// Guards the homomorphic sums against wrapping: requires
/// N * P * |g_k| < n / 2 for every entry.
inline void check_capacity(const QuantizedGradient& q, const mpz_class& n, std::size_t clients, int pieces) {
  const mpz_class factor = mpz_class(static_cast<unsigned long>(clients)) * pieces;
  for (std::size_t k = 0; k < q.values.size(); ++k) {
    if (2 * factor * abs(q.values[k]) >= n)
      fail(Errc::GradientOverflow,
           "entry " + std::to_string(k) + " would overflow the plaintext modulus");
  }
}

}  // namespace fedboost
