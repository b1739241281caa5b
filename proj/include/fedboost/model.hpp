// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense classifier: sigmoid hidden layers, softmax output, mean cross-entropy
// loss, analytic backprop and an Adam / SGD trainer. Parameters live in one
// flat vector so they can be shipped, quantized and encrypted as a unit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedboost/error.hpp"
#include "fedboost/rng.hpp"
#include "fedboost/sample.hpp"

namespace fedboost {

/// One fully-connected layer: `rows` outputs, `cols` inputs, plus a bias of
/// length `rows`.
struct DenseShape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  friend bool operator==(const DenseShape&, const DenseShape&) = default;
};

class Layout {
 public:
  Layout() = default;

  explicit Layout(std::vector<DenseShape> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) fail(Errc::InvalidLayout, "layout has no layers");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      if (layers_[k].rows == 0 || layers_[k].cols == 0)
        fail(Errc::InvalidLayout, "layer " + std::to_string(k) + " has a zero dimension");
      if (k > 0 && layers_[k].cols != layers_[k - 1].rows)
        fail(Errc::InvalidLayout, "layer " + std::to_string(k) + " input width " +
                                      std::to_string(layers_[k].cols) +
                                      " does not match previous output width " +
                                      std::to_string(layers_[k - 1].rows));
    }
  }

  /// widths = {inputs, hidden..., outputs}
  static Layout mlp(std::span<const std::size_t> widths) {
    if (widths.size() < 2) fail(Errc::InvalidLayout, "an MLP needs at least input and output widths");
    std::vector<DenseShape> layers;
    for (std::size_t k = 1; k < widths.size(); ++k) layers.push_back({widths[k], widths[k - 1]});
    return Layout(std::move(layers));
  }

  /// 2 inputs -> `hidden` sigmoid units -> 2-way softmax.
  static Layout two_layer(std::size_t hidden = 8) {
    const std::size_t widths[] = {2, hidden, 2};
    return mlp(widths);
  }

  const std::vector<DenseShape>& layers() const noexcept { return layers_; }
  bool empty() const noexcept { return layers_.empty(); }
  std::size_t input_dim() const noexcept { return layers_.empty() ? 0 : layers_.front().cols; }
  std::size_t output_dim() const noexcept { return layers_.empty() ? 0 : layers_.back().rows; }

  std::size_t param_count() const noexcept {
    std::size_t total = 0;
    for (const auto& l : layers_) total += l.rows * l.cols + l.rows;
    return total;
  }

  friend bool operator==(const Layout&, const Layout&) = default;

 private:
  std::vector<DenseShape> layers_;
};

using GradientVector = std::vector<double>;

/// Flat parameters: for each layer, the row-major weight matrix followed by
/// its bias.
struct ModelParams {
  Layout layout;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }

  void validate() const {
    if (layout.empty()) fail(Errc::InvalidLayout, "empty layout");
    if (values.size() != layout.param_count())
      fail(Errc::ShapeMismatch, "parameter count " + std::to_string(values.size()) +
                                    " does not match layout (" +
                                    std::to_string(layout.param_count()) + ")");
    for (double v : values)
      if (!std::isfinite(v)) fail(Errc::NonFiniteInput, "non-finite parameter");
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct OptimizerConfig {
  enum class Kind { adam, sgd };

  Kind kind = Kind::adam;
  double learning_rate = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;  // bias-correction offset for Adam

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      fail(Errc::InvalidArgument, "learning_rate must be finite and non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail(Errc::InvalidArgument, "beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail(Errc::InvalidArgument, "beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) fail(Errc::InvalidArgument, "epsilon must be positive");
  }
};

struct TrainReport {
  GradientVector gradient;  // params_after - params_before
  double training_loss = 0.0;  // full-pass mean cross-entropy at `params`
  ModelParams params;  // post-training weights, exactly before + gradient
  std::uint64_t steps = 0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline ModelParams init_params(std::uint64_t seed, const Layout& layout) {
  if (layout.empty()) fail(Errc::InvalidLayout, "empty layout");
  Rng rng(seed);
  ModelParams params{layout, {}};
  params.values.reserve(layout.param_count());
  for (const auto& layer : layout.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.cols));
    for (std::size_t i = 0; i < layer.rows * layer.cols; ++i)
      params.values.push_back(rng.uniform(-bound, bound));
    params.values.insert(params.values.end(), layer.rows, 0.0);
  }
  return params;
}

inline ModelParams apply_gradient(const ModelParams& params, std::span<const double> gradient) {
  if (gradient.size() != params.values.size())
    fail(Errc::ShapeMismatch, "gradient length " + std::to_string(gradient.size()) +
                                  " vs parameter length " + std::to_string(params.values.size()));
  ModelParams out = params;
  for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] += gradient[k];
  return out;
}

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Reusable buffers for one forward/backward pass.
class Network {
 public:
  explicit Network(const Layout& layout) : layout_(layout) {
    acts_.resize(layout.layers().size() + 1);
    deltas_.resize(layout.layers().size());
    acts_[0].resize(layout.input_dim());
    std::size_t offset = 0;
    for (std::size_t k = 0; k < layout.layers().size(); ++k) {
      const auto& l = layout.layers()[k];
      acts_[k + 1].resize(l.rows);
      deltas_[k].resize(l.rows);
      weight_offset_.push_back(offset);
      offset += l.rows * l.cols;
      bias_offset_.push_back(offset);
      offset += l.rows;
    }
    logits_.resize(layout.output_dim());
  }

  // Fills the activations; returns the per-sample cross-entropy for `label`.
  double forward(std::span<const double> w, std::span<const double> x, int label) {
    std::copy(x.begin(), x.end(), acts_[0].begin());
    const auto& layers = layout_.layers();
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      const double* wk = w.data() + weight_offset_[k];
      const double* bk = w.data() + bias_offset_[k];
      const auto& in = acts_[k];
      auto& out = (k + 1 == layers.size()) ? logits_ : acts_[k + 1];
      for (std::size_t r = 0; r < l.rows; ++r) {
        double z = bk[r];
        for (std::size_t c = 0; c < l.cols; ++c) z += wk[r * l.cols + c] * in[c];
        out[r] = z;
      }
      if (k + 1 < layers.size())
        for (auto& v : out) v = sigmoid(v);
    }
    // log-sum-exp softmax
    const double zmax = *std::max_element(logits_.begin(), logits_.end());
    double denom = 0.0;
    for (double z : logits_) denom += std::exp(z - zmax);
    auto& probs = acts_.back();
    for (std::size_t r = 0; r < logits_.size(); ++r) probs[r] = std::exp(logits_[r] - zmax) / denom;
    return zmax + std::log(denom) - logits_[static_cast<std::size_t>(label)];
  }

  // Adds d(loss)/dw * scale into grad. Requires a preceding forward().
  void backward(std::span<const double> w, int label, double scale, std::span<double> grad) {
    const auto& layers = layout_.layers();
    const std::size_t last = layers.size() - 1;
    deltas_[last] = acts_.back();
    deltas_[last][static_cast<std::size_t>(label)] -= 1.0;
    for (std::size_t k = layers.size(); k-- > 0;) {
      const auto& l = layers[k];
      const auto& in = acts_[k];
      const auto& delta = deltas_[k];
      double* gw = grad.data() + weight_offset_[k];
      double* gb = grad.data() + bias_offset_[k];
      for (std::size_t r = 0; r < l.rows; ++r) {
        const double d = delta[r] * scale;
        gb[r] += d;
        for (std::size_t c = 0; c < l.cols; ++c) gw[r * l.cols + c] += d * in[c];
      }
      if (k == 0) break;
      const double* wk = w.data() + weight_offset_[k];
      auto& prev = deltas_[k - 1];
      for (std::size_t c = 0; c < l.cols; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < l.rows; ++r) s += wk[r * l.cols + c] * delta[r];
        const double a = acts_[k][c];
        prev[c] = s * a * (1.0 - a);
      }
    }
  }

  const std::vector<double>& probabilities() const noexcept { return acts_.back(); }

 private:
  Layout layout_;
  std::vector<std::vector<double>> acts_;  // acts_[0] input, acts_.back() softmax output
  std::vector<std::vector<double>> deltas_;
  std::vector<double> logits_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
};

inline void check_sample(const Layout& layout, const Sample& s) {
  if (!std::isfinite(s.x[0]) || !std::isfinite(s.x[1])) fail(Errc::NonFiniteInput, "non-finite feature");
  if (s.label < 0 || static_cast<std::size_t>(s.label) >= layout.output_dim())
    fail(Errc::InvalidArgument, "label " + std::to_string(s.label) + " outside class range");
}

}  // namespace detail

/// Class probabilities softmax(W_L ... sigmoid(W_1 x + b_1) ... + b_L).
inline std::vector<double> forward(const ModelParams& params, std::span<const double> x) {
  if (x.size() != params.layout.input_dim())
    fail(Errc::ShapeMismatch, "input has " + std::to_string(x.size()) + " features");
  for (double v : x)
    if (!std::isfinite(v)) fail(Errc::NonFiniteInput, "non-finite input");
  if (params.values.size() != params.layout.param_count())
    fail(Errc::ShapeMismatch, "parameter vector does not match layout");
  detail::Network net(params.layout);
  net.forward(params.values, x, 0);
  return net.probabilities();
}

/// Mean cross-entropy over `batch` and its gradient with respect to the flat
/// parameters.
inline double loss_and_gradient(const ModelParams& params, std::span<const Sample> batch,
                                GradientVector& grad) {
  if (batch.empty()) fail(Errc::EmptyDataset, "empty batch");
  grad.assign(params.values.size(), 0.0);
  detail::Network net(params.layout);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& s : batch) {
    detail::check_sample(params.layout, s);
    loss += net.forward(params.values, s.x, s.label);
    net.backward(params.values, s.label, scale, grad);
  }
  return loss * scale;
}

inline EvalResult evaluate(const ModelParams& params, std::span<const Sample> data) {
  if (data.empty()) fail(Errc::EmptyDataset, "cannot evaluate on an empty set");
  if (params.values.size() != params.layout.param_count())
    fail(Errc::ShapeMismatch, "parameter vector does not match layout");
  detail::Network net(params.layout);
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& s : data) {
    detail::check_sample(params.layout, s);
    loss += net.forward(params.values, s.x, s.label);
    const auto& p = net.probabilities();
    const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    if (best == s.label) ++correct;
  }
  const auto n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

/// Runs `epochs` passes of shuffled mini-batch training from `params`.
/// Optimizer state starts fresh on every call.
inline TrainReport train_local(const ModelParams& params, std::span<const Sample> data,
                               std::size_t batch_size, std::size_t epochs,
                               const OptimizerConfig& opt, std::uint64_t seed) {
  if (data.empty()) fail(Errc::EmptyDataset, "empty training set");
  if (batch_size == 0) fail(Errc::InvalidArgument, "batch_size must be >= 1");
  if (epochs == 0) fail(Errc::InvalidArgument, "epochs must be >= 1");
  opt.validate();
  params.validate();

  const std::size_t dim = params.values.size();
  std::vector<double> w = params.values;
  std::vector<double> m(dim, 0.0), v(dim, 0.0), grad(dim, 0.0);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  detail::Network net(params.layout);
  Rng rng(seed);
  std::uint64_t t = opt.step_count;
  std::uint64_t steps = 0;

  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const Sample& s = data[order[b]];
        detail::check_sample(params.layout, s);
        net.forward(w, s.x, s.label);
        net.backward(w, s.label, scale, grad);
      }
      ++steps;
      if (opt.kind == OptimizerConfig::Kind::sgd) {
        for (std::size_t k = 0; k < dim; ++k) w[k] -= opt.learning_rate * grad[k];
        continue;
      }
      ++t;
      const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
      for (std::size_t k = 0; k < dim; ++k) {
        m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * grad[k];
        v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * grad[k] * grad[k];
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        w[k] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.epsilon);
      }
    }
  }

  TrainReport report;
  report.gradient.resize(dim);
  for (std::size_t k = 0; k < dim; ++k) report.gradient[k] = w[k] - params.values[k];
  // Snap to before + gradient so the two always reconstruct each other exactly.
  report.params = apply_gradient(params, report.gradient);
  report.training_loss = evaluate(report.params, data).loss;
  report.steps = steps;
  return report;
}

}  // namespace fedboost
