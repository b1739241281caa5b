// SPDX-License-Identifier: Apache-2.0
#pragma once

// Round protocol between one server and N clients.
//
//   setup     client 1 -> KeyOffer (public key) ; KeyDeliver x (N-1), relayed
//   round r   server -> GlobalGradient (w_0 when r = 1, else G*_{r-1})
//             client -> TrainResult (g*_i, T_i)
//             server -> FusedGradient (every client gets all N fused models)   [fedboosting]
//             client -> EvalResult (V(i, j) for i = 1..N)                      [fedboosting]
//             server merges into G*_r
//   finish    server -> FinalModelRequest (G*_R) to client 1 -> FinalModel (w_R)
//             server -> MergedGradient (G*_R) to the other clients
//
// ServerMachine and ClientMachine are pure reducers over messages; the
// run_server / run_client loops bind them to transport endpoints. The server
// side only ever sees the public key: KeyDeliver bodies are forwarded as
// opaque strings.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "fedboost/aggregate.hpp"
#include "fedboost/dataset.hpp"
#include "fedboost/encrypted_gradient.hpp"
#include "fedboost/error.hpp"
#include "fedboost/message.hpp"
#include "fedboost/model.hpp"
#include "fedboost/paillier.hpp"
#include "fedboost/quantize.hpp"
#include "fedboost/rng.hpp"
#include "fedboost/transport.hpp"

namespace fedboost {

enum class Aggregator { fedavg, fedboosting };
enum class Encryption { none, he, he_dp };

struct ProtocolConfig {
  Aggregator aggregator = Aggregator::fedboosting;
  Encryption encryption = Encryption::none;
  WeightingMode weighting = WeightingMode::score;
  bool force_uniform_weights = false;  // run cross-validation but merge uniformly
  std::size_t clients = 2;
  std::size_t rounds = 50;
  QuantConfig quant;
  unsigned key_bits = 128;
  double p_hat = 0.9;
  double p_hat_jitter = 0.0;  // p_hat + U(-jitter, jitter) per round, clamped
  std::uint64_t seed = 1;
  std::chrono::milliseconds phase_timeout{60000};

  bool encrypted() const noexcept { return encryption != Encryption::none; }

  void validate() const {
    if (clients == 0) fail(Errc::EmptyCohort, "no clients");
    if (rounds == 0) fail(Errc::ConfigError, "rounds must be >= 1");
    if (encryption == Encryption::he_dp && aggregator != Aggregator::fedboosting)
      fail(Errc::ConfigError, "DP fusion only exists for fedboosting cross-validation");
    if (aggregator == Aggregator::fedboosting && clients < 2)
      fail(Errc::DegenerateCohort, "fedboosting cross-validation needs at least two clients");
    quant.validate();
    if (encryption == Encryption::he_dp) DpFusionConfig{p_hat, quant.pieces}.integer_weights(clients);
    if (p_hat_jitter < 0.0 || p_hat_jitter > 0.05) fail(Errc::ConfigError, "p_hat_jitter must lie in [0, 0.05]");
  }
};

struct PhaseDurations {
  double train_s = 0.0;
  double evaluate_s = 0.0;
  double merge_s = 0.0;
};

struct RoundRecord {
  std::uint32_t round = 0;
  std::vector<double> train_losses;
  std::optional<ValidationMatrix> validation;  // fedboosting only
  std::optional<AggregationWeights> weights;  // fedboosting only
  std::optional<double> p_hat;  // DP fusion weight used this round
  std::optional<double> global_test_loss;
  std::optional<double> global_test_accuracy;
  PhaseDurations durations;
};

struct Outgoing {
  std::uint32_t to = 0;  // client id, 1..N
  Message message;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

[[noreturn]] inline void violation(const std::string& what) { fail(Errc::ProtocolViolation, what); }

inline Message make_message(MessageKind kind, std::uint32_t round, std::uint32_t sender, json payload) {
  return {kind, round, sender, std::move(payload)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

class ServerMachine {
 public:
  ServerMachine(ProtocolConfig cfg, ModelParams initial) : cfg_(std::move(cfg)), initial_(std::move(initial)) {
    cfg_.validate();
    initial_.validate();
  }

  std::vector<Outgoing> start() {
    if (phase_ != Phase::Idle) detail::violation("server already started");
    if (cfg_.encrypted()) {
      phase_ = Phase::AwaitKeys;
      return {};
    }
    return begin_round(1);
  }

  std::vector<Outgoing> on_message(const Message& m) {
    if (m.sender < 1 || m.sender > cfg_.clients) detail::violation("message from unknown client " + std::to_string(m.sender));
    if (m.kind == MessageKind::Abort) {
      const auto reason = m.payload.value("reason", std::string("unspecified"));
      phase_ = Phase::Failed;
      fail(Errc::RoundAborted, "client " + std::to_string(m.sender) + " aborted: " + reason);
    }
    switch (phase_) {
      case Phase::AwaitKeys: return on_key_message(m);
      case Phase::Training: return on_train_result(m);
      case Phase::Evaluating: return on_eval_result(m);
      case Phase::AwaitFinal: return on_final_model(m);
      default: detail::violation(std::string(to_string(m.kind)) + " received while the server is not expecting messages");
    }
  }

  bool finished() const noexcept { return phase_ == Phase::Done; }
  std::uint32_t round() const noexcept { return round_; }
  const ProtocolConfig& config() const noexcept { return cfg_; }
  const std::vector<RoundRecord>& records() const noexcept { return records_; }
  const std::optional<ModelParams>& final_params() const noexcept { return final_; }
  /// The only key material the server ever holds.
  const std::optional<paillier::PublicKey>& public_key() const noexcept { return public_key_; }
  const std::optional<WireGradient>& global_gradient() const noexcept { return global_; }

 private:
  enum class Phase { Idle, AwaitKeys, Training, Evaluating, AwaitFinal, Done, Failed };

  std::vector<Outgoing> broadcast(MessageKind kind, const json& payload) const {
    std::vector<Outgoing> out;
    for (std::uint32_t c = 1; c <= cfg_.clients; ++c)
      out.push_back({c, detail::make_message(kind, round_, kServerId, payload)});
    return out;
  }

  void expect_round(const Message& m) const {
    if (m.round != round_)
      detail::violation(std::string(to_string(m.kind)) + " for round " + std::to_string(m.round) + " during round " +
                        std::to_string(round_));
  }

  std::vector<Outgoing> on_key_message(const Message& m) {
    if (m.sender != 1) detail::violation("only client 1 distributes keys");
    if (m.kind == MessageKind::KeyOffer) {
      if (public_key_) detail::violation("duplicate key offer");
      public_key_ = parse_payload(m, [](const json& p) { return public_key_from_json(p.at("public_key")); });
      delivered_.assign(cfg_.clients + 1, false);
      return keys_complete() ? begin_round(1) : std::vector<Outgoing>{};
    }
    if (m.kind != MessageKind::KeyDeliver) detail::violation("expected key distribution, got " + std::string(to_string(m.kind)));
    if (!public_key_) detail::violation("key delivery before key offer");
    const auto recipient = parse_payload(m, [](const json& p) {
      if (!p.at("blob").is_string()) throw json::type_error::create(302, "blob must be a string", nullptr);
      return p.at("recipient").get<std::uint32_t>();
    });
    if (recipient < 2 || recipient > cfg_.clients) detail::violation("key delivery to invalid recipient");
    if (delivered_[recipient]) detail::violation("duplicate key delivery to client " + std::to_string(recipient));
    delivered_[recipient] = true;
    std::vector<Outgoing> out{{recipient, m}};  // forwarded verbatim; blob never parsed
    if (keys_complete()) {
      auto start = begin_round(1);
      out.insert(out.end(), start.begin(), start.end());
    }
    return out;
  }

  bool keys_complete() const {
    return public_key_ && std::count(delivered_.begin() + 2, delivered_.end(), true) ==
                              static_cast<std::ptrdiff_t>(cfg_.clients - 1);
  }

  std::vector<Outgoing> begin_round(std::uint32_t r) {
    round_ = r;
    phase_ = Phase::Training;
    grads_.assign(cfg_.clients, std::nullopt);
    train_losses_.assign(cfg_.clients, 0.0);
    received_ = 0;
    record_ = RoundRecord{};
    record_.round = r;
    phase_start_ = detail::Clock::now();
    json payload;
    if (r == 1)
      payload = {{"params", params_to_json(initial_)}};
    else
      payload = {{"gradient", gradient_to_json(*global_)}};
    return broadcast(MessageKind::GlobalGradient, payload);
  }

  std::vector<Outgoing> on_train_result(const Message& m) {
    if (m.kind != MessageKind::TrainResult) detail::violation("expected TrainResult, got " + std::string(to_string(m.kind)));
    expect_round(m);
    const std::size_t i = m.sender - 1;
    if (grads_[i]) detail::violation("duplicate TrainResult from client " + std::to_string(m.sender));
    auto [grad, loss] = parse_payload(m, [](const json& p) {
      return std::pair{gradient_from_json(p.at("gradient")), p.at("train_loss").get<double>()};
    });
    check_wire_gradient(grad);
    if (!std::isfinite(loss) || loss < 0.0) detail::violation("training loss must be finite and >= 0");
    grads_[i] = std::move(grad);
    train_losses_[i] = loss;
    if (++received_ < cfg_.clients) return {};

    record_.train_losses = train_losses_;
    record_.durations.train_s = detail::seconds_since(phase_start_);
    if (cfg_.aggregator == Aggregator::fedavg) return finish_round(fedavg_weights(cfg_.clients));
    return begin_evaluation();
  }

  void check_wire_gradient(const WireGradient& g) const {
    const std::size_t len = initial_.size();
    if (const auto* plain = std::get_if<GradientVector>(&g)) {
      if (cfg_.encrypted()) detail::violation("plaintext gradient in an encrypted session");
      if (plain->size() != len) fail(Errc::ShapeMismatch, "gradient length does not match the model");
      return;
    }
    const auto& enc = std::get<EncryptedGradient>(g);
    if (!cfg_.encrypted()) detail::violation("encrypted gradient in a plaintext session");
    require_same_key(*public_key_, enc);
    if (enc.size() != len) fail(Errc::ShapeMismatch, "gradient length does not match the model");
    if (enc.pieces != cfg_.quant.pieces || enc.scale_exponent != cfg_.quant.scale_exponent)
      detail::violation("gradient quantized with unexpected settings");
  }

  double round_p_hat() const {
    if (cfg_.p_hat_jitter <= 0.0) return cfg_.p_hat;
    Rng rng(derive_seed(cfg_.seed, {0x6a, round_}));
    const double lo = 1.0 / static_cast<double>(cfg_.clients) + 0.01;
    return std::clamp(cfg_.p_hat + rng.uniform(-cfg_.p_hat_jitter, cfg_.p_hat_jitter), lo, 1.0);
  }

  std::vector<WireGradient> fused_models() {
    std::vector<WireGradient> out;
    if (cfg_.encryption == Encryption::he_dp) {
      std::vector<EncryptedGradient> enc;
      for (auto& g : grads_) enc.push_back(std::get<EncryptedGradient>(*g));
      const double p_hat = round_p_hat();
      record_.p_hat = p_hat;
      for (auto& f : dp_fuse(*public_key_, enc, DpFusionConfig{p_hat, cfg_.quant.pieces})) out.emplace_back(std::move(f));
      return out;
    }
    for (auto& g : grads_) out.push_back(*g);
    return out;
  }

  std::vector<Outgoing> begin_evaluation() {
    phase_ = Phase::Evaluating;
    phase_start_ = detail::Clock::now();
    validation_ = ValidationMatrix(cfg_.clients);
    evaluated_.assign(cfg_.clients, false);
    received_ = 0;
    json models = json::array();
    const auto fused = fused_models();
    for (std::size_t i = 0; i < fused.size(); ++i)
      models.push_back({{"gradient", gradient_to_json(fused[i])}, {"model", i + 1}});
    return broadcast(MessageKind::FusedGradient, {{"models", std::move(models)}});
  }

  std::vector<Outgoing> on_eval_result(const Message& m) {
    if (m.kind != MessageKind::EvalResult) detail::violation("expected EvalResult, got " + std::string(to_string(m.kind)));
    expect_round(m);
    const std::size_t j = m.sender - 1;
    if (evaluated_[j]) detail::violation("duplicate EvalResult from client " + std::to_string(m.sender));
    const auto losses = parse_payload(m, [](const json& p) { return p.at("losses").get<std::vector<double>>(); });
    if (losses.size() != cfg_.clients) fail(Errc::ShapeMismatch, "EvalResult must carry one loss per model");
    for (std::size_t i = 0; i < losses.size(); ++i) {
      if (!std::isfinite(losses[i]) || losses[i] < 0.0) detail::violation("validation loss must be finite and >= 0");
      validation_.at(i, j) = losses[i];
    }
    evaluated_[j] = true;
    if (++received_ < cfg_.clients) return {};

    // barrier reached: all N x N entries present
    record_.durations.evaluate_s = detail::seconds_since(phase_start_);
    record_.validation = validation_;
    auto weights = cfg_.force_uniform_weights ? fedavg_weights(cfg_.clients)
                                              : fedboost_weights(train_losses_, validation_, cfg_.weighting);
    record_.weights = weights;
    return finish_round(weights);
  }

  std::vector<Outgoing> finish_round(const AggregationWeights& weights) {
    const auto t0 = detail::Clock::now();
    if (cfg_.encrypted()) {
      std::vector<EncryptedGradient> enc;
      for (auto& g : grads_) enc.push_back(std::get<EncryptedGradient>(*g));
      global_ = merge_encrypted(*public_key_, enc, weights, cfg_.quant.pieces);
    } else {
      std::vector<GradientVector> plain;
      for (auto& g : grads_) plain.push_back(std::get<GradientVector>(*g));
      global_ = merge_plain(plain, weights);
    }
    record_.durations.merge_s = detail::seconds_since(t0);
    records_.push_back(record_);
    if (round_ < cfg_.rounds) return begin_round(round_ + 1);

    phase_ = Phase::AwaitFinal;
    return {{1, detail::make_message(MessageKind::FinalModelRequest, round_, kServerId,
                                     {{"gradient", gradient_to_json(*global_)}})}};
  }

  std::vector<Outgoing> on_final_model(const Message& m) {
    if (m.kind != MessageKind::FinalModel || m.sender != 1)
      detail::violation("expected FinalModel from client 1, got " + std::string(to_string(m.kind)));
    expect_round(m);
    final_ = parse_payload(m, [](const json& p) { return params_from_json(p.at("params")); });
    if (!(final_->layout == initial_.layout)) fail(Errc::ShapeMismatch, "final model layout differs");
    phase_ = Phase::Done;
    std::vector<Outgoing> out;
    for (std::uint32_t c = 2; c <= cfg_.clients; ++c)
      out.push_back({c, detail::make_message(MessageKind::MergedGradient, round_, kServerId,
                                             {{"gradient", gradient_to_json(*global_)}})});
    return out;
  }

  ProtocolConfig cfg_;
  ModelParams initial_;
  Phase phase_ = Phase::Idle;
  std::uint32_t round_ = 0;
  std::optional<paillier::PublicKey> public_key_;
  std::vector<bool> delivered_;
  std::vector<std::optional<WireGradient>> grads_;
  std::vector<double> train_losses_;
  ValidationMatrix validation_;
  std::vector<bool> evaluated_;
  std::size_t received_ = 0;
  std::optional<WireGradient> global_;
  RoundRecord record_;
  std::vector<RoundRecord> records_;
  std::optional<ModelParams> final_;
  detail::Clock::time_point phase_start_{};
};

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

struct ClientConfig {
  std::uint32_t id = 1;
  ProtocolConfig protocol;
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  OptimizerConfig optimizer;
  std::uint64_t seed = 1;  // training shuffles, key generation and nonces derive from this
  bool seeded_nonces = true;
};

struct TrainOutcome {
  WireGradient gradient;
  double train_loss = 0.0;
};

/// Called with (r, w_r) whenever the client reconstructs a global model.
using GlobalModelObserver = std::function<void(std::uint32_t, const ModelParams&)>;

class ClientMachine {
 public:
  ClientMachine(ClientConfig cfg, DatasetSplit data, GlobalModelObserver observer = {})
      : cfg_(std::move(cfg)),
        data_(std::move(data)),
        observer_(std::move(observer)),
        nonces_(cfg_.seeded_nonces ? paillier::NonceSource::seeded(derive_seed(cfg_.seed, {0x4e, cfg_.id}))
                                   : paillier::NonceSource::system()) {
    if (cfg_.id < 1 || cfg_.id > cfg_.protocol.clients) fail(Errc::InvalidArgument, "client id out of range");
  }

  std::uint32_t id() const noexcept { return cfg_.id; }
  std::uint32_t round() const noexcept { return round_; }
  bool finished() const noexcept { return finished_; }
  const std::optional<paillier::KeyPair>& key_pair() const noexcept { return keys_; }
  /// w_{r-1}: the global weights the current round started from.
  const std::optional<ModelParams>& weights() const noexcept { return weights_; }
  const DatasetSplit& data() const noexcept { return data_; }

  std::vector<Message> start() {
    if (cfg_.id == 1 && cfg_.protocol.encrypted()) return distribute_keys();
    return {};
  }

  /// Client 1 generates the shared key pair; the public half goes to the
  /// server, the full pair to every other client through an opaque relay.
  std::vector<Message> distribute_keys() {
    if (cfg_.id != 1) detail::violation("only client 1 generates keys");
    if (keys_) detail::violation("keys already distributed");
    keys_ = paillier::keygen(cfg_.protocol.key_bits, derive_seed(cfg_.seed, {0x4b}));
    std::vector<Message> out;
    out.push_back(detail::make_message(MessageKind::KeyOffer, 0, cfg_.id, {{"public_key", public_key_to_json(keys_->pub)}}));
    const std::string blob = key_pair_to_json(*keys_).dump();
    for (std::uint32_t c = 2; c <= cfg_.protocol.clients; ++c)
      out.push_back(detail::make_message(MessageKind::KeyDeliver, 0, cfg_.id, {{"blob", blob}, {"recipient", c}}));
    return out;
  }

  std::vector<Message> on_message(const Message& m) {
    // Key deliveries are relayed untouched, so they still name client 1.
    const std::uint32_t expected = m.kind == MessageKind::KeyDeliver ? 1 : kServerId;
    if (m.sender != expected) detail::violation("unexpected sender for " + std::string(to_string(m.kind)) +
                                                 " from " + std::to_string(m.sender));
    switch (m.kind) {
      case MessageKind::KeyDeliver: {
        if (keys_) detail::violation("duplicate key delivery");
        keys_ = parse_payload(m, [](const json& p) { return key_pair_from_json(json::parse(p.at("blob").get<std::string>())); });
        return {};
      }
      case MessageKind::GlobalGradient: {
        const auto outcome = parse_payload(m, [&](const json& p) {
          if (m.round == 1) return train(1, params_from_json(p.at("params")));
          return train(m.round, gradient_from_json(p.at("gradient")));
        });
        return {detail::make_message(MessageKind::TrainResult, round_, cfg_.id,
                                     {{"gradient", gradient_to_json(outcome.gradient)}, {"train_loss", outcome.train_loss}})};
      }
      case MessageKind::FusedGradient: {
        expect_current(m);
        const auto models = parse_payload(m, [](const json& p) {
          std::vector<std::pair<std::uint32_t, WireGradient>> out;
          for (const auto& e : p.at("models")) out.emplace_back(e.at("model").get<std::uint32_t>(), gradient_from_json(e.at("gradient")));
          return out;
        });
        if (models.size() != cfg_.protocol.clients) fail(Errc::ShapeMismatch, "expected one fused model per client");
        std::vector<double> losses(models.size());
        for (std::size_t k = 0; k < models.size(); ++k) {
          if (models[k].first != k + 1) detail::violation("fused models out of order");
          losses[k] = evaluate_fused(models[k].second);
        }
        return {detail::make_message(MessageKind::EvalResult, round_, cfg_.id, {{"losses", losses}})};
      }
      case MessageKind::FinalModelRequest: {
        expect_current(m);
        const auto merged = parse_payload(m, [](const json& p) { return gradient_from_json(p.at("gradient")); });
        const auto final_params = decrypt_final(m.round, merged);
        finished_ = true;
        return {detail::make_message(MessageKind::FinalModel, round_, cfg_.id, {{"params", params_to_json(final_params)}})};
      }
      case MessageKind::MergedGradient: {
        expect_current(m);
        const auto merged = parse_payload(m, [](const json& p) { return gradient_from_json(p.at("gradient")); });
        weights_ = apply_gradient(*weights_, decode(merged));
        finished_ = true;
        return {};
      }
      case MessageKind::Abort:
        finished_ = true;
        fail(Errc::RoundAborted, "server aborted: " + m.payload.value("reason", std::string("unspecified")));
      default:
        detail::violation("client cannot handle " + std::string(to_string(m.kind)));
    }
  }

  /// Round 1 starts from the broadcast initial weights.
  TrainOutcome train(std::uint32_t r, const ModelParams& initial) {
    if (r != 1 || round_ != 0) detail::violation("initial weights are only valid in round 1");
    initial.validate();
    weights_ = initial;
    round_ = 1;
    return train_current();
  }

  /// Later rounds first fold in the previous global gradient.
  TrainOutcome train(std::uint32_t r, const WireGradient& global) {
    if (r < 2 || r != round_ + 1 || !weights_) detail::violation("unexpected GlobalGradient for round " + std::to_string(r));
    weights_ = apply_gradient(*weights_, decode(global));
    round_ = r;
    if (observer_) observer_(r - 1, *weights_);
    return train_current();
  }

  /// Loss of w_{r-1} + fused update on this client's validation set. Leaves
  /// the client's weights untouched.
  double evaluate_fused(const WireGradient& fused) const {
    if (!weights_) detail::violation("no weights to evaluate against");
    const auto candidate = apply_gradient(*weights_, decode(fused));
    return evaluate(candidate, data_.validation).loss;
  }

  ModelParams decrypt_final(std::uint32_t r, const WireGradient& merged) {
    if (r != cfg_.protocol.rounds || round_ != cfg_.protocol.rounds)
      detail::violation("final decryption requested in round " + std::to_string(r) + " of " +
                        std::to_string(cfg_.protocol.rounds));
    weights_ = apply_gradient(*weights_, decode(merged));
    if (observer_) observer_(r, *weights_);
    return *weights_;
  }

  /// Plain gradient as-is; ciphertexts decrypted with the shared key.
  GradientVector decode(const WireGradient& g) const {
    if (const auto* plain = std::get_if<GradientVector>(&g)) return *plain;
    if (!keys_) detail::violation("encrypted gradient received before key delivery");
    return dequantize(decrypt_gradient(*keys_, std::get<EncryptedGradient>(g)));
  }

 private:
  void expect_current(const Message& m) const {
    if (m.round != round_)
      detail::violation(std::string(to_string(m.kind)) + " for round " + std::to_string(m.round) + " during round " +
                        std::to_string(round_));
  }

  TrainOutcome train_current() {
    const auto report = train_local(*weights_, data_.train, cfg_.batch_size, cfg_.epochs, cfg_.optimizer,
                                    derive_seed(cfg_.seed, {0x54, round_, cfg_.id}));
    if (!cfg_.protocol.encrypted()) return {report.gradient, report.training_loss};
    if (!keys_) detail::violation("training in an encrypted session without keys");
    const auto q = quantize(report.gradient, cfg_.protocol.quant);
    check_capacity(q, keys_->pub.n, cfg_.protocol.clients, cfg_.protocol.quant.pieces);
    return {encrypt_gradient(keys_->pub, q, nonces_), report.training_loss};
  }

  ClientConfig cfg_;
  DatasetSplit data_;
  GlobalModelObserver observer_;
  paillier::NonceSource nonces_;
  std::optional<paillier::KeyPair> keys_;
  std::optional<ModelParams> weights_;
  std::uint32_t round_ = 0;
  bool finished_ = false;
};

// ---------------------------------------------------------------------------
// Event loops
// ---------------------------------------------------------------------------

/// Frames seen on each server <-> client channel, from the server's side,
/// plus the global arrival order used for replay.
struct Transcript {
  std::vector<std::vector<std::string>> sent;  // [client - 1]
  std::vector<std::vector<std::string>> received;  // [client - 1]
  std::vector<transport::Frame> arrivals;

  explicit Transcript(std::size_t clients = 0) : sent(clients), received(clients) {}
};

namespace detail {

struct Incoming {
  std::uint32_t client = 0;
  std::optional<transport::Frame> frame;
  std::exception_ptr error;
};

class Inbox {
 public:
  void push(Incoming item) {
    {
      std::lock_guard lock(mu_);
      items_.push_back(std::move(item));
    }
    cv_.notify_one();
  }

  std::optional<Incoming> pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return !items_.empty(); })) return std::nullopt;
    Incoming item = std::move(items_.front());
    items_.pop_front();
    return item;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Incoming> items_;
};

inline void send_abort(transport::Endpoint& ep, std::uint32_t round, std::uint32_t sender, const std::string& reason) {
  try {
    ep.send(to_frame(make_message(MessageKind::Abort, round, sender, {{"reason", reason}})));
  } catch (const Error&) {
  }
}

}  // namespace detail

/// Drives the server over one endpoint per client (endpoints[i] talks to
/// client i + 1). One reader thread per endpoint feeds a single inbox; the
/// machine is only touched from this thread. Throws RoundAborted when a
/// phase exceeds the configured timeout or a client aborts; every client is
/// sent Abort first.
inline void run_server(ServerMachine& server, std::span<transport::Endpoint* const> endpoints,
                       Transcript* transcript = nullptr) {
  const auto& cfg = server.config();
  if (endpoints.size() != cfg.clients) fail(Errc::InvalidArgument, "one endpoint per client required");
  detail::Inbox inbox;
  std::vector<std::thread> readers;
  for (std::uint32_t c = 1; c <= cfg.clients; ++c) {
    readers.emplace_back([&inbox, ep = endpoints[c - 1], c] {
      for (;;) {
        try {
          inbox.push({c, ep->recv(), nullptr});
        } catch (...) {
          inbox.push({c, std::nullopt, std::current_exception()});
          return;
        }
      }
    });
  }
  auto shutdown = [&] {
    for (auto* ep : endpoints) ep->close();
    for (auto& t : readers) t.join();
  };
  auto dispatch = [&](const std::vector<Outgoing>& out) {
    for (const auto& o : out) {
      auto frame = to_frame(o.message);
      if (transcript) transcript->sent[o.to - 1].push_back(transport::encode_frame(frame));
      endpoints[o.to - 1]->send(frame);
    }
  };

  try {
    dispatch(server.start());
    while (!server.finished()) {
      auto item = inbox.pop(cfg.phase_timeout);
      if (!item) fail(Errc::RoundAborted, "round " + std::to_string(server.round()) + " timed out waiting for clients");
      if (item->error) std::rethrow_exception(item->error);
      if (transcript) {
        transcript->received[item->client - 1].push_back(transport::encode_frame(*item->frame));
        transcript->arrivals.push_back(*item->frame);
      }
      const auto msg = from_frame(*item->frame);
      if (msg.sender != item->client) detail::violation("sender field does not match the channel");
      dispatch(server.on_message(msg));
    }
  } catch (const Error& e) {
    for (auto* ep : endpoints) detail::send_abort(*ep, server.round(), kServerId, e.what());
    shutdown();
    if (e.code() == Errc::ChannelClosed || e.code() == Errc::Timeout)
      fail(Errc::RoundAborted, std::string("lost a client: ") + e.what());
    throw;
  } catch (...) {
    shutdown();
    throw;
  }
  shutdown();
}

/// Drives one client until it finishes. Local failures are reported to the
/// server as Abort before being rethrown.
inline void run_client(ClientMachine& client, transport::Endpoint& ep, std::chrono::milliseconds timeout) {
  auto dispatch = [&](const std::vector<Message>& out) {
    for (const auto& m : out) ep.send(to_frame(m));
  };
  try {
    dispatch(client.start());
    while (!client.finished()) {
      const auto msg = from_frame(ep.recv(timeout));
      dispatch(client.on_message(msg));
    }
  } catch (const Error& e) {
    if (e.code() != Errc::RoundAborted && e.code() != Errc::ChannelClosed)
      detail::send_abort(ep, client.round(), client.id(), e.what());
    ep.close();
    throw;
  }
  ep.close();
}

}  // namespace fedboost
