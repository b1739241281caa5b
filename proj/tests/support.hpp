// SPDX-License-Identifier: Apache-2.0
#pragma once

// Hand-rolled generators and independently written reference computations
// shared by the unit tests and the acceptance binary. Nothing here calls the
// code under test for the quantity it is checking.

#include <mpfr.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "fedboost/fedboost.hpp"

namespace fbtest {

using namespace fedboost;

/// The error code `f` throws, or nothing if it returns normally.
template <typename F>
std::optional<Errc> error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// Value generators for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  Rng& rng() { return rng_; }
  double uniform(double lo, double hi) { return rng_.uniform(lo, hi); }
  std::uint64_t below(std::uint64_t bound) { return rng_.below(bound); }

  /// Magnitudes spread over many decades, either sign, sometimes exactly zero.
  double gradient_entry(double max_abs = 1.0) {
    const auto pick = rng_.below(16);
    if (pick == 0) return 0.0;
    const double mag = max_abs * std::pow(10.0, -rng_.uniform(0.0, 12.0));
    return rng_.below(2) ? mag : -mag;
  }

  std::vector<double> gradient(std::size_t len, double max_abs = 1.0) {
    std::vector<double> g(len);
    for (auto& v : g) v = gradient_entry(max_abs);
    return g;
  }

  std::vector<double> reals(std::size_t len, double lo, double hi) {
    std::vector<double> out(len);
    for (auto& v : out) v = rng_.uniform(lo, hi);
    return out;
  }

  ModelParams params(const Layout& layout, double scale) {
    ModelParams p{layout, reals(layout.param_count(), -scale, scale)};
    return p;
  }

  Sample sample(double spread = 3.0) {
    return {{rng_.uniform(-spread, spread), rng_.uniform(-spread, spread)}, static_cast<int>(rng_.below(2))};
  }

  LabeledSet samples(std::size_t n, double spread = 3.0) {
    LabeledSet out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample(spread));
    return out;
  }

  /// Random interior point of the probability simplex.
  std::vector<double> weights(std::size_t n) {
    std::vector<double> raw(n);
    double total = 0.0;
    for (auto& v : raw) total += (v = rng_.uniform(0.01, 1.0));
    for (auto& v : raw) v /= total;
    return raw;
  }

 private:
  Rng rng_;
};

// ---- MPFR helpers -----------------------------------------------------------

class Big {
 public:
  static constexpr mpfr_prec_t kPrec = 256;
  Big() { mpfr_init2(v_, kPrec); mpfr_set_zero(v_, 1); }
  explicit Big(double d) { mpfr_init2(v_, kPrec); mpfr_set_d(v_, d, MPFR_RNDN); }
  Big(const Big& o) { mpfr_init2(v_, kPrec); mpfr_set(v_, o.v_, MPFR_RNDN); }
  Big& operator=(const Big& o) { mpfr_set(v_, o.v_, MPFR_RNDN); return *this; }
  ~Big() { mpfr_clear(v_); }

  mpfr_ptr get() { return v_; }
  mpfr_srcptr get() const { return v_; }
  double to_double() const { return mpfr_get_d(v_, MPFR_RNDN); }

  friend Big operator+(const Big& a, const Big& b) { Big r; mpfr_add(r.v_, a.v_, b.v_, MPFR_RNDN); return r; }
  friend Big operator-(const Big& a, const Big& b) { Big r; mpfr_sub(r.v_, a.v_, b.v_, MPFR_RNDN); return r; }
  friend Big operator*(const Big& a, const Big& b) { Big r; mpfr_mul(r.v_, a.v_, b.v_, MPFR_RNDN); return r; }
  friend Big operator/(const Big& a, const Big& b) { Big r; mpfr_div(r.v_, a.v_, b.v_, MPFR_RNDN); return r; }
  friend Big exp(const Big& a) { Big r; mpfr_exp(r.v_, a.v_, MPFR_RNDN); return r; }
  friend Big log(const Big& a) { Big r; mpfr_log(r.v_, a.v_, MPFR_RNDN); return r; }

 private:
  mpfr_t v_;
};

/// softmax(softmax(T) * s(V)) at 256-bit precision, with s the row sums
/// (negated in score mode). Plain exponentials, no max shift.
inline std::vector<double> weights_oracle(std::span<const double> t, std::span<const double> v_row_major,
                                          bool score) {
  const std::size_t n = t.size();
  std::vector<Big> et(n);
  Big zt;
  for (std::size_t i = 0; i < n; ++i) {
    et[i] = exp(Big(t[i]));
    zt = zt + et[i];
  }
  std::vector<Big> e(n);
  Big z;
  for (std::size_t i = 0; i < n; ++i) {
    Big row;
    for (std::size_t j = 0; j < n; ++j) row = row + Big(v_row_major[i * n + j]);
    if (score) row = Big(0.0) - row;
    e[i] = exp(et[i] / zt * row);
    z = z + e[i];
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (e[i] / z).to_double();
  return out;
}

// ---- network oracles -------------------------------------------------------

/// Scalar, loop-by-loop recomputation of the 2 -> H -> 2 network in long double.
inline std::array<long double, 2> forward_oracle(const std::vector<double>& w, std::size_t hidden,
                                                 const std::array<double, 2>& x) {
  // layer 1: W1 (hidden x 2) then b1 (hidden); layer 2: W2 (2 x hidden) then b2 (2)
  const std::size_t w1 = 0, b1 = 2 * hidden, w2 = 3 * hidden, b2 = 5 * hidden;
  std::vector<long double> h(hidden);
  for (std::size_t r = 0; r < hidden; ++r) {
    long double z = w[b1 + r];
    z += static_cast<long double>(w[w1 + r * 2 + 0]) * x[0];
    z += static_cast<long double>(w[w1 + r * 2 + 1]) * x[1];
    h[r] = 1.0L / (1.0L + std::exp(-z));
  }
  long double o0 = w[b2 + 0], o1 = w[b2 + 1];
  for (std::size_t c = 0; c < hidden; ++c) {
    o0 += static_cast<long double>(w[w2 + 0 * hidden + c]) * h[c];
    o1 += static_cast<long double>(w[w2 + 1 * hidden + c]) * h[c];
  }
  const long double m = std::max(o0, o1);
  const long double e0 = std::exp(o0 - m), e1 = std::exp(o1 - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

inline long double loss_oracle(const std::vector<double>& w, std::size_t hidden, std::span<const Sample> data) {
  long double total = 0.0L;
  for (const auto& s : data) total += -std::log(forward_oracle(w, hidden, s.x)[static_cast<std::size_t>(s.label)]);
  return total / static_cast<long double>(data.size());
}

/// Parameter delta of one bias-corrected Adam step from zero moments.
inline std::vector<double> adam_first_step(std::span<const double> grad, double lr, double beta1, double beta2,
                                           double eps) {
  std::vector<double> delta(grad.size());
  for (std::size_t k = 0; k < grad.size(); ++k) {
    const double m = (1.0 - beta1) * grad[k];
    const double v = (1.0 - beta2) * grad[k] * grad[k];
    const double mhat = m / (1.0 - beta1);
    const double vhat = v / (1.0 - beta2);
    delta[k] = -lr * mhat / (std::sqrt(vhat) + eps);
  }
  return delta;
}

// ---- merge tolerance -------------------------------------------------------

/// Per-entry bound for |decode(merge_encrypted) - merge_plain|:
/// sum_i |G_i| / (2P) from weight rounding plus (sum_i k_i) / (2S) from
/// gradient rounding (each k_i <= P).
inline double merge_tolerance(std::span<const GradientVector> grads, std::size_t entry,
                              std::span<const std::int64_t> k, const QuantConfig& cfg) {
  double abs_sum = 0.0;
  for (const auto& g : grads) abs_sum += std::abs(g[entry]);
  double ksum = 0.0;
  for (auto v : k) ksum += static_cast<double>(v);
  const double weight_part = abs_sum / (2.0 * cfg.pieces);
  const double piece_part = ksum / (2.0 * std::pow(10.0, cfg.scale_exponent));
  // Both sides are doubles: merge_plain accumulates N rounded products and the
  // decoded value is itself rounded once.
  const double fp = 2.0 * static_cast<double>(grads.size() + 1) * std::numeric_limits<double>::epsilon() * abs_sum;
  return weight_part + piece_part + fp;
}

}  // namespace fbtest
