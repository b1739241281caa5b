// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedboost/error.hpp"
#include "fedboost/rng.hpp"
#include "fedboost/sample.hpp"

namespace fedboost {

using Vec2 = std::array<double, 2>;
using Mat2 = std::array<std::array<double, 2>, 2>;

struct GaussianSpec {
  Vec2 mean{};
  Mat2 covariance{{{1.0, 0.0}, {0.0, 1.0}}};
  int label = 0;
  std::size_t count = 0;
};

struct DatasetSplit {
  LabeledSet train;
  LabeledSet validation;
  LabeledSet test;
};

/// Lower-triangular Cholesky factor of a symmetric positive-definite 2x2.
inline Mat2 cholesky(const Mat2& cov) {
  if (cov[0][1] != cov[1][0]) fail(Errc::InvalidCovariance, "covariance is not symmetric");
  const double a = cov[0][0];
  const double b = cov[0][1];
  const double c = cov[1][1];
  const double det = a * c - b * b;
  if (!(a > 0.0) || !(det > 0.0) || !std::isfinite(det))
    fail(Errc::InvalidCovariance, "covariance is not positive-definite");
  const double l00 = std::sqrt(a);
  const double l10 = b / l00;
  const double l11 = std::sqrt(c - l10 * l10);
  return {{{l00, 0.0}, {l10, l11}}};
}

inline LabeledSet generate_client_dataset(std::span<const GaussianSpec> specs, std::uint64_t seed) {
  std::size_t total = 0;
  std::vector<Mat2> factors;
  for (const auto& spec : specs) {
    if (spec.label != 0 && spec.label != 1)
      fail(Errc::InvalidArgument, "label must be 0 or 1, got " + std::to_string(spec.label));
    factors.push_back(cholesky(spec.covariance));
    total += spec.count;
  }
  if (total == 0) fail(Errc::EmptyDataset, "gaussian specs produce no samples");

  Rng rng(seed);
  LabeledSet out;
  out.reserve(total);
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& spec = specs[s];
    const auto& l = factors[s];
    for (std::size_t i = 0; i < spec.count; ++i) {
      const double z0 = rng.normal();
      const double z1 = rng.normal();
      out.push_back({{spec.mean[0] + l[0][0] * z0, spec.mean[1] + l[1][0] * z0 + l[1][1] * z1},
                     spec.label});
    }
  }
  return out;
}

/// Shuffles, holds out round((1 - train_frac) n) samples for testing, then
/// carves round(val_frac_of_train * rest) of the remainder for validation.
inline DatasetSplit split(const LabeledSet& data, double train_frac, double val_frac_of_train,
                          std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    fail(Errc::InvalidArgument, "train_frac must lie in (0, 1)");
  if (!(val_frac_of_train > 0.0 && val_frac_of_train < 1.0))
    fail(Errc::InvalidArgument, "val_frac_of_train must lie in (0, 1)");
  const std::size_t n = data.size();
  const auto n_test = static_cast<std::size_t>(std::llround((1.0 - train_frac) * static_cast<double>(n)));
  const std::size_t n_train_part = n - std::min(n, n_test);
  const auto n_val =
      static_cast<std::size_t>(std::llround(val_frac_of_train * static_cast<double>(n_train_part)));
  if (n_test == 0 || n_val == 0 || n_test >= n || n_val >= n_train_part)
    fail(Errc::DegenerateSplit, "split of " + std::to_string(n) + " samples leaves an empty part");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  DatasetSplit out;
  out.test.reserve(n_test);
  out.validation.reserve(n_val);
  out.train.reserve(n_train_part - n_val);
  for (std::size_t k = 0; k < n; ++k) {
    const Sample& s = data[order[k]];
    if (k < n_test)
      out.test.push_back(s);
    else if (k < n_test + n_val)
      out.validation.push_back(s);
    else
      out.train.push_back(s);
  }
  return out;
}

/// Flips exactly round(flip_frac n) labels chosen uniformly without
/// replacement. Features are untouched.
inline LabeledSet poison_labels(LabeledSet data, double flip_frac, std::uint64_t seed) {
  if (!(flip_frac >= 0.0 && flip_frac <= 1.0))
    fail(Errc::InvalidArgument, "flip_frac must lie in [0, 1]");
  const auto flips =
      static_cast<std::size_t>(std::llround(flip_frac * static_cast<double>(data.size())));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  // partial Fisher-Yates: the first `flips` slots are a uniform subset
  for (std::size_t i = 0; i < flips; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
    data[order[i]].label = 1 - data[order[i]].label;
  }
  return data;
}

/// Non-IID two-client setup: client 0 separates along x, client 1 along y
/// with an anisotropic covariance. `per_label` samples per cluster.
inline std::vector<GaussianSpec> default_client_specs(std::size_t client_index, std::size_t per_label) {
  if (client_index % 2 == 0) {
    return {{{-2.0, 0.0}, {{{1.0, 0.0}, {0.0, 1.0}}}, 0, per_label},
            {{2.0, 0.0}, {{{1.0, 0.0}, {0.0, 1.0}}}, 1, per_label}};
  }
  return {{{0.0, -2.0}, {{{1.5, 0.0}, {0.0, 0.5}}}, 0, per_label},
          {{0.0, 2.0}, {{{1.5, 0.0}, {0.0, 0.5}}}, 1, per_label}};
}

inline LabeledSet concat(std::span<const LabeledSet> parts) {
  LabeledSet out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// CSV rows `x1,x2,label` after a header line.
inline LabeledSet read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  LabeledSet out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 || line.empty()) continue;
    std::istringstream row(line);
    std::string a, b, c;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c))
      fail(Errc::IoError, path.string() + ":" + std::to_string(line_no) + ": expected x1,x2,label");
    try {
      Sample s{{std::stod(a), std::stod(b)}, std::stoi(c)};
      if (s.label != 0 && s.label != 1) throw std::invalid_argument("label");
      out.push_back(s);
    } catch (const std::logic_error&) {
      fail(Errc::IoError, path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
  }
  return out;
}

}  // namespace fedboost
