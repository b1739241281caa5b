// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Each check runs end to end through the public API.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "support.hpp"

using namespace fedboost;
using fbtest::Gen;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double final_accuracy(const ExperimentResult& r) { return *r.records.back().global_test_accuracy; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// 1. Two clients of 40000 samples, 9:1 split, 8 hidden units, Adam 0.003,
//    batch 8, one epoch per round: FedBoosting >= FedAvg on >= 4 of 5 seeds.
Verdict full_scale() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = ExperimentConfig::synthetic(40000);
    cfg.seed = seed;
    cfg.scheme = TrainingScheme::fedavg;
    const double avg = final_accuracy(run_experiment(cfg));
    cfg.scheme = TrainingScheme::fedboosting;
    cfg.weighting = WeightingMode::score;
    const double boost = final_accuracy(run_experiment(cfg));
    wins += boost >= avg;
    detail += fmt("%sseed %llu %.5f vs %.5f", seed == 1 ? "" : "; ", static_cast<unsigned long long>(seed), boost, avg);
  }
  return {wins >= 4, fmt("fedboosting >= fedavg on %d/5 (", wins) + detail + ")"};
}

// 2. merge_encrypted vs merge_plain within sum|G_i|/(2P) + P*N/(2S).
Verdict encryption_fidelity() {
  const QuantConfig cfg{32, 100};
  const auto kp = paillier::keygen(128, 2024);
  auto nonces = WordSource::seeded(7);
  Gen gen(12);
  std::size_t violations = 0, entries = 0;
  double worst_ratio = 0.0;
  for (int draw = 0; draw < 500; ++draw) {
    const std::size_t n = 2 + gen.below(3);
    std::vector<GradientVector> grads;
    std::vector<EncryptedGradient> enc;
    for (std::size_t i = 0; i < n; ++i) {
      grads.push_back(gen.gradient(42, 1.0));
      const auto q = quantize(grads.back(), cfg);
      check_capacity(q, kp.pub.n, n, cfg.pieces);
      enc.push_back(encrypt_gradient(kp.pub, q, nonces));
    }
    const AggregationWeights w{gen.weights(n), WeightingMode::score};
    const auto decoded = dequantize(decrypt_gradient(kp, merge_encrypted(kp.pub, enc, w, cfg.pieces)));
    const auto plain = merge_plain(grads, w);
    for (std::size_t k = 0; k < 42; ++k) {
      double abs_sum = 0.0;
      for (const auto& g : grads) abs_sum += std::abs(g[k]);
      const double bound = abs_sum / (2.0 * cfg.pieces) + cfg.pieces * static_cast<double>(n) / (2.0 * 1e32);
      const double err = std::abs(decoded[k] - plain[k]);
      violations += err > bound;
      if (bound > 0) worst_ratio = std::max(worst_ratio, err / bound);
      ++entries;
    }
  }
  return {violations == 0, fmt("%zu violations over %zu entries, worst error/bound %.3f", violations, entries, worst_ratio)};
}

// 3. FedBoosting HE+DP vs plaintext at desk scale: accuracy within 0.5 points.
Verdict encrypted_end_to_end() {
  auto cfg = ExperimentConfig::synthetic(4000);
  cfg.rounds = 20;
  cfg.scheme = TrainingScheme::fedboosting;
  cfg.encryption = Encryption::none;
  const double plain = final_accuracy(run_experiment(cfg));
  cfg.encryption = Encryption::he_dp;
  const double dp = final_accuracy(run_experiment(cfg));
  const double gap = std::abs(plain - dp) * 100.0;
  return {gap <= 0.5, fmt("plaintext %.4f, he_dp %.4f, gap %.3f points", plain, dp, gap)};
}

// 4. Weight formula vs a 256-bit evaluation, 1000 draws, both modes.
Verdict weight_oracle() {
  Gen gen(44);
  double worst = 0.0;
  bool in_range = true, sums = true;
  for (int draw = 0; draw < 1000; ++draw) {
    const std::size_t n = 2 + gen.below(9);
    const auto t = gen.reals(n, 0.0, 4.0);
    const auto v = gen.reals(n * n, 0.0, 6.0);
    const ValidationMatrix vm(n, v);
    for (auto mode : {WeightingMode::literal, WeightingMode::score}) {
      const auto w = fedboost_weights(t, vm, mode);
      const auto ref = fbtest::weights_oracle(t, v, mode == WeightingMode::score);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        worst = std::max(worst, std::abs(w.values[i] - ref[i]));
        in_range &= w.values[i] >= 0.0 && w.values[i] <= 1.0;
        total += w.values[i];
      }
      sums &= std::abs(total - 1.0) <= 1e-12;
    }
  }
  return {worst <= 1e-12 && in_range && sums,
          fmt("max |error| %.3g, all in [0,1]: %s, all sum to 1: %s", worst, in_range ? "yes" : "no", sums ? "yes" : "no")};
}

// 5. Client 2 with half its labels flipped: weight < 1/N in >= 90% of rounds
//    after round 3, pooled over 3 seeds.
Verdict poisoning() {
  std::size_t below = 0, total = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto cfg = ExperimentConfig::synthetic(4000);
    cfg.rounds = 20;
    cfg.seed = seed;
    cfg.weighting = WeightingMode::score;
    cfg.clients[1].poison_frac = 0.5;
    const auto res = run_experiment(cfg);
    std::size_t seed_below = 0, seed_total = 0;
    for (const auto& r : res.records) {
      if (r.round <= 3) continue;
      seed_below += r.weights->values[1] < 0.5;
      ++seed_total;
    }
    below += seed_below;
    total += seed_total;
    detail += fmt("%sseed %llu %zu/%zu", seed == 1 ? "" : ", ", static_cast<unsigned long long>(seed), seed_below, seed_total);
  }
  const double frac = static_cast<double>(below) / static_cast<double>(total);
  return {frac >= 0.9, fmt("poisoned client below 1/N in %.1f%% of rounds (", frac * 100.0) + detail + ")"};
}

// Single-process FedAvg, step for step what the cohort does.
ModelParams fedavg_reference(const ExperimentConfig& cfg) {
  const auto data = build_data(cfg);
  auto w = init_params(derive_seed(cfg.seed, {0x1e}), Layout::two_layer(cfg.hidden));
  const auto n = static_cast<std::uint32_t>(cfg.clients.size());
  for (std::uint32_t r = 1; r <= cfg.rounds; ++r) {
    std::vector<GradientVector> grads;
    for (std::uint32_t c = 1; c <= n; ++c)
      grads.push_back(train_local(w, data.clients[c - 1].train, cfg.batch_size, cfg.epochs, optimizer_config(cfg),
                                  derive_seed(cfg.seed, {0x54, r, c}))
                          .gradient);
    GradientVector merged(w.size(), 0.0);
    for (std::size_t k = 0; k < merged.size(); ++k)
      for (const auto& g : grads) merged[k] += (1.0 / static_cast<double>(n)) * g[k];
    w = apply_gradient(w, merged);
  }
  return w;
}

// 6. Forced-uniform FedBoosting reproduces FedAvg: bit-exact in plaintext,
//    within the fidelity bound under HE.
Verdict fedavg_reduction() {
  auto cfg = ExperimentConfig::synthetic(4000);
  cfg.rounds = 10;
  cfg.scheme = TrainingScheme::fedboosting;
  cfg.force_uniform_weights = true;
  const auto uniform_plain = run_experiment(cfg).final_params;
  const auto reference = fedavg_reference(cfg);
  cfg.scheme = TrainingScheme::fedavg;
  cfg.force_uniform_weights = false;
  const auto fedavg_plain = run_experiment(cfg).final_params;
  const bool exact = uniform_plain.values == reference.values && fedavg_plain.values == reference.values;

  // HE: one round, so the gap is a single merge and the bound applies directly
  cfg.rounds = 1;
  cfg.encryption = Encryption::he;
  cfg.scheme = TrainingScheme::fedboosting;
  cfg.force_uniform_weights = true;
  const auto uniform_he = run_experiment(cfg);
  cfg.encryption = Encryption::none;
  const auto ref1 = fedavg_reference(cfg);
  const auto data = build_data(cfg);
  std::vector<GradientVector> grads;
  for (std::uint32_t c = 1; c <= 2; ++c)
    grads.push_back(train_local(uniform_he.initial_params, data.clients[c - 1].train, cfg.batch_size, cfg.epochs,
                                optimizer_config(cfg), derive_seed(cfg.seed, {0x54, 1u, c}))
                        .gradient);
  std::size_t violations = 0;
  for (std::size_t k = 0; k < 42; ++k) {
    const double bound = (std::abs(grads[0][k]) + std::abs(grads[1][k])) / (2.0 * cfg.quant.pieces) +
                         cfg.quant.pieces * 2.0 / (2.0 * 1e32);
    const double got = uniform_he.final_params.values[k] - uniform_he.initial_params.values[k];
    const double want = ref1.values[k] - uniform_he.initial_params.values[k];
    violations += std::abs(got - want) > bound;
  }
  return {exact && violations == 0,
          fmt("plaintext bit-exact: %s, HE entries outside bound: %zu", exact ? "yes" : "no", violations)};
}

// 7. Paillier: 1000 additive and 1000 scalar roundtrips, signed bijection.
Verdict paillier_properties() {
  const auto kp = paillier::keygen(128, 77);
  const auto& pk = kp.pub;
  auto nonces = WordSource::seeded(5);
  auto words = WordSource::seeded(6);
  std::size_t failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const mpz_class a = random_below(words, pk.n), b = random_below(words, pk.n);
    const auto ca = paillier::encrypt(pk, a, nonces), cb = paillier::encrypt(pk, b, nonces);
    mpz_class sum = (a + b) % pk.n;
    failures += paillier::decrypt(kp, paillier::he_add(pk, ca, cb)) != sum;
    const mpz_class k = random_below(words, pk.n);
    mpz_class prod = (k * a) % pk.n;
    failures += paillier::decrypt(kp, paillier::he_scalar_mul(pk, k, ca)) != prod;
    failures += paillier::decrypt(kp, ca) != a;
  }
  // signed codec: exhaustive on small moduli, sampled on the real one
  std::size_t codec_failures = 0;
  for (long n : {15L, 21L, 33L, 35L, 77L, 143L, 221L, 323L}) {
    const mpz_class mn(n);
    for (long m = 0; m < n; ++m)
      codec_failures += paillier::encode_signed(paillier::decode_signed(mpz_class(m), mn), mn) != m;
    for (long v = -(n - 1) / 2; v <= (n - 1) / 2; ++v)
      codec_failures += paillier::decode_signed(paillier::encode_signed(mpz_class(v), mn), mn) != v;
  }
  const mpz_class half = (pk.n - 1) / 2;
  for (const mpz_class& v : {mpz_class(0), half, mpz_class(-half), mpz_class(1), mpz_class(-1)})
    codec_failures += paillier::decode_signed(paillier::encode_signed(v, pk.n), pk.n) != v;
  for (int i = 0; i < 1000; ++i) {
    mpz_class v = random_below(words, half + 1);
    if (i % 2) v = -v;
    codec_failures += paillier::decode_signed(paillier::encode_signed(v, pk.n), pk.n) != v;
  }
  return {failures == 0 && codec_failures == 0,
          fmt("homomorphic failures %zu/3000, signed codec failures %zu", failures, codec_failures)};
}

// 8. Loopback and TCP produce byte-identical metrics.
Verdict transport_equivalence() {
  std::size_t mismatched = 0;
  std::string detail;
  for (auto enc : {Encryption::none, Encryption::he_dp}) {
    auto cfg = ExperimentConfig::synthetic(2000);
    cfg.rounds = 5;
    cfg.encryption = enc;
    cfg.transport = TransportKind::loopback;
    const auto loop = metrics_csv(run_experiment(cfg).records);
    cfg.transport = TransportKind::tcp;
    const auto tcp = metrics_csv(run_experiment(cfg).records);
    mismatched += loop != tcp;
    detail += fmt("%s%s %zu bytes %s", enc == Encryption::none ? "" : ", ", to_string(enc).c_str(), loop.size(),
                  loop == tcp ? "identical" : "DIFFER");
  }
  return {mismatched == 0, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"full-scale FedBoosting vs FedAvg ordering", full_scale},
      {"encrypted merge fidelity", encryption_fidelity},
      {"HE+DP vs plaintext accuracy", encrypted_end_to_end},
      {"weight formula vs high-precision oracle", weight_oracle},
      {"poisoned client down-weighted", poisoning},
      {"uniform weights reduce to FedAvg", fedavg_reduction},
      {"Paillier property suite", paillier_properties},
      {"loopback vs TCP metrics", transport_equivalence},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %zu: %s: %s (%.1fs)\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !v.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
