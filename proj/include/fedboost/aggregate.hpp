// SPDX-License-Identifier: Apache-2.0
#pragma once

// Fusion math shared by the server: FedAvg and FedBoosting weights, the
// plaintext and homomorphic weighted merges, and the DP fusion that
// perturbs each client model before it is cross-validated by its peers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedboost/encrypted_gradient.hpp"
#include "fedboost/error.hpp"
#include "fedboost/model.hpp"
#include "fedboost/paillier.hpp"
#include "fedboost/quantize.hpp"

namespace fedboost {

/// `literal` feeds the summed validation losses into the outer softmax as
/// they are; `score` negates them so lower validation loss earns more weight.
enum class WeightingMode { literal, score };

/// Entry (i, j) is the loss of client i's model on client j's validation set.
class ValidationMatrix {
 public:
  ValidationMatrix() = default;

  explicit ValidationMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {}

  ValidationMatrix(std::size_t n, std::vector<double> row_major) : n_(n), values_(std::move(row_major)) {
    if (values_.size() != n_ * n_) fail(Errc::ShapeMismatch, "validation matrix is not square");
  }

  std::size_t size() const noexcept { return n_; }
  double& at(std::size_t i, std::size_t j) { return values_.at(i * n_ + j); }
  double at(std::size_t i, std::size_t j) const { return values_.at(i * n_ + j); }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Summed loss of model i over every client's validation set.
  double row_sum(std::size_t i) const {
    double s = 0.0;
    for (std::size_t j = 0; j < n_; ++j) s += at(i, j);
    return s;
  }

  void validate() const {
    if (n_ < 2) fail(Errc::DegenerateCohort, "cross-validation needs at least two clients");
    for (double v : values_)
      if (!std::isfinite(v) || v < 0.0) fail(Errc::InvalidArgument, "validation losses must be finite and >= 0");
  }

  friend bool operator==(const ValidationMatrix&, const ValidationMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

struct AggregationWeights {
  std::vector<double> values;
  std::optional<WeightingMode> mode;  // empty for uniform FedAvg weights

  std::size_t size() const noexcept { return values.size(); }

  void validate() const {
    if (values.empty()) fail(Errc::EmptyCohort, "no aggregation weights");
    double total = 0.0;
    for (double p : values) {
      if (!(p >= 0.0 && p <= 1.0)) fail(Errc::InvalidWeight, "weight outside [0, 1]");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) fail(Errc::InvalidWeight, "weights do not sum to 1");
  }
};

struct DpFusionConfig {
  double p_hat = 0.9;
  int pieces = 100;

  /// Integer (diagonal, off-diagonal) fusing weights for a cohort of N.
  std::pair<std::int64_t, std::int64_t> integer_weights(std::size_t clients) const {
    if (clients < 2) fail(Errc::DegenerateCohort, "DP fusion needs at least two clients");
    const double n = static_cast<double>(clients);
    if (!(p_hat > 1.0 / n && p_hat <= 1.0))
      fail(Errc::InvalidArgument, "p_hat must lie in (1/N, 1]");
    if (pieces < 1) fail(Errc::InvalidArgument, "pieces must be >= 1");
    const auto diag = quantize_weight(p_hat, pieces);
    const auto off = static_cast<std::int64_t>(std::nearbyint((1.0 - p_hat) * pieces / (n - 1.0)));
    if (diag <= off)
      fail(Errc::InvalidArgument, "p_hat too close to 1/N: rounded diagonal weight does not dominate");
    return {diag, off};
  }
};

inline std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) return {};
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (out[i] = std::exp(x[i] - mx));
  for (auto& v : out) v /= total;
  return out;
}

inline AggregationWeights fedavg_weights(std::size_t clients) {
  if (clients == 0) fail(Errc::EmptyCohort, "no clients");
  return {std::vector<double>(clients, 1.0 / static_cast<double>(clients)), std::nullopt};
}

/// p = softmax(softmax(T) * v), v_i = sum_j V(i, j) (negated in score mode).
inline AggregationWeights fedboost_weights(std::span<const double> train_losses, const ValidationMatrix& v,
                                           WeightingMode mode) {
  if (train_losses.size() != v.size())
    fail(Errc::ShapeMismatch, std::to_string(train_losses.size()) + " training losses for a " +
                                  std::to_string(v.size()) + "x" + std::to_string(v.size()) +
                                  " validation matrix");
  v.validate();
  for (double t : train_losses)
    if (!std::isfinite(t)) fail(Errc::InvalidArgument, "training loss is not finite");
  const auto t_soft = softmax(train_losses);
  std::vector<double> scores(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double sum = v.row_sum(i);
    scores[i] = t_soft[i] * (mode == WeightingMode::score ? -sum : sum);
  }
  return {softmax(scores), mode};
}

inline GradientVector merge_plain(std::span<const GradientVector> grads, const AggregationWeights& w) {
  if (grads.empty()) fail(Errc::EmptyCohort, "nothing to merge");
  if (grads.size() != w.size()) fail(Errc::ShapeMismatch, "one weight per gradient required");
  w.validate();
  const std::size_t len = grads.front().size();
  GradientVector out(len, 0.0);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != len) fail(Errc::ShapeMismatch, "gradient lengths differ");
    for (std::size_t k = 0; k < len; ++k) out[k] += w.values[i] * grads[i][k];
  }
  return out;
}

namespace detail {

inline void check_cohort(const paillier::PublicKey& pk, std::span<const EncryptedGradient> grads) {
  if (grads.empty()) fail(Errc::EmptyCohort, "nothing to merge");
  const auto& first = grads.front();
  for (const auto& g : grads) {
    require_same_key(pk, g);
    if (g.size() != first.size()) fail(Errc::ShapeMismatch, "gradient lengths differ");
    if (g.scale_exponent != first.scale_exponent || g.pieces != first.pieces)
      fail(Errc::InvalidArgument, "gradients were quantized with different settings");
  }
}

// sum_i k_i (x) g_i, entry by entry.
inline EncryptedGradient weighted_sum(const paillier::PublicKey& pk, std::span<const EncryptedGradient> grads,
                                      std::span<const std::int64_t> k) {
  EncryptedGradient out{pk.n, {}, grads.front().scale_exponent, 1};
  const std::size_t len = grads.front().size();
  out.values.reserve(len);
  for (std::size_t e = 0; e < len; ++e) {
    paillier::Ciphertext acc{1};  // trivial encryption of 0
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (k[i] == 0) continue;
      acc = paillier::he_add(pk, acc,
                             paillier::he_scalar_mul(pk, mpz_class(static_cast<long>(k[i])), grads[i].values[e]));
    }
    out.values.push_back(acc);
  }
  return out;
}

}  // namespace detail

/// Homomorphic sum_i round(p_i P) (x) g*_i. The result decodes as M / S
/// (pieces = 1): the integer weights already carry the factor P.
inline EncryptedGradient merge_encrypted(const paillier::PublicKey& pk, std::span<const EncryptedGradient> grads,
                                         const AggregationWeights& w, int pieces) {
  detail::check_cohort(pk, grads);
  if (grads.size() != w.size()) fail(Errc::ShapeMismatch, "one weight per gradient required");
  if (grads.front().pieces != pieces)
    fail(Errc::InvalidArgument, "gradients were quantized with " + std::to_string(grads.front().pieces) +
                                    " pieces, merge uses " + std::to_string(pieces));
  w.validate();
  std::vector<std::int64_t> k;
  for (double p : w.values) k.push_back(quantize_weight(p, pieces));
  return detail::weighted_sum(pk, grads, k);
}

/// For each client i: round(p_hat P) (x) g*_i + sum_{j != i} round((1 - p_hat) P / (N - 1)) (x) g*_j.
inline std::vector<EncryptedGradient> dp_fuse(const paillier::PublicKey& pk, std::span<const EncryptedGradient> grads,
                                              const DpFusionConfig& cfg) {
  if (grads.size() < 2) fail(Errc::DegenerateCohort, "DP fusion needs at least two clients; disable it for N = 1");
  detail::check_cohort(pk, grads);
  if (grads.front().pieces != cfg.pieces)
    fail(Errc::InvalidArgument, "gradients were quantized with a different piece count");
  const auto [diag, off] = cfg.integer_weights(grads.size());
  std::vector<EncryptedGradient> out;
  out.reserve(grads.size());
  std::vector<std::int64_t> k(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    std::fill(k.begin(), k.end(), off);
    k[i] = diag;
    out.push_back(detail::weighted_sum(pk, grads, k));
  }
  return out;
}

}  // namespace fedboost
