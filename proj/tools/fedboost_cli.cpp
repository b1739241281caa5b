// SPDX-License-Identifier: Apache-2.0
// fedboost: run experiments, export decision boundaries, time Paillier.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "fedboost/fedboost.hpp"

using namespace fedboost;
namespace fs = std::filesystem;

namespace {

struct RunOptions {
  std::string config;
  std::string aggregator, encryption, weighting, transport;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> samples;
  std::string out;
  bool boundary = false;
};

int cmd_run(const RunOptions& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig::synthetic() : load_config(o.config);
  if (o.samples) {
    if (!o.config.empty()) config_error("--samples", "only applies to the built-in synthetic cohort");
    cfg.clients = ExperimentConfig::synthetic(*o.samples).clients;
  }
  if (!o.aggregator.empty()) cfg.scheme = detail::parse_scheme(o.aggregator, "--aggregator");
  if (!o.encryption.empty()) cfg.encryption = detail::parse_encryption(o.encryption, "--encryption");
  if (!o.weighting.empty()) cfg.weighting = detail::parse_weighting(o.weighting, "--weighting");
  if (!o.transport.empty()) cfg.transport = detail::parse_transport(o.transport, "--transport");
  if (o.seed) cfg.seed = *o.seed;
  if (o.rounds) cfg.rounds = *o.rounds;
  if (!o.out.empty()) cfg.output_dir = o.out;
  validate(cfg);

  std::cerr << "aggregator=" << to_string(cfg.scheme) << " encryption=" << to_string(cfg.encryption)
            << " weighting=" << (cfg.scheme == TrainingScheme::fedboosting ? to_string(cfg.weighting) : "uniform")
            << " transport=" << to_string(cfg.transport) << " clients=" << cfg.clients.size()
            << " rounds=" << cfg.rounds << " seed=" << cfg.seed << '\n';

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = run_experiment(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path dir = cfg.output_dir;
  export_metrics(result.records, dir / "metrics.csv");
  save_model(result.final_params, dir / "model.json");
  write_file(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
  if (o.boundary) export_boundary(result.final_params, {}, dir / "boundary.csv");

  const auto& last = result.records.back();
  std::printf("rounds=%zu test_loss=%s test_acc=%s seconds=%.2f out=%s\n", result.records.size(),
              format_real(last.global_test_loss.value_or(NAN)).c_str(),
              format_real(last.global_test_accuracy.value_or(NAN)).c_str(), secs, dir.string().c_str());
  return 0;
}

int cmd_boundary(const std::string& model, const std::string& out, const BoundaryGrid& grid) {
  const auto params = load_model(model);
  export_boundary(params, grid, out);
  std::printf("rows=%zu out=%s\n", grid.steps * grid.steps, out.c_str());
  return 0;
}

int cmd_keybench(unsigned bits, int count, std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double, std::milli>(b - a).count(); };
  double keygen_ms = 0, enc_ms = 0, add_ms = 0, mul_ms = 0, dec_ms = 0;
  auto nonces = WordSource::seeded(derive_seed(seed, {1}));
  auto words = WordSource::seeded(derive_seed(seed, {2}));
  for (int i = 0; i < count; ++i) {
    auto t = clock::now();
    const auto kp = paillier::keygen(bits, derive_seed(seed, {3, static_cast<std::uint64_t>(i)}));
    keygen_ms += ms(t, clock::now());
    const mpz_class a = random_below(words, kp.pub.n), b = random_below(words, kp.pub.n);
    t = clock::now();
    const auto ca = paillier::encrypt(kp.pub, a, nonces);
    enc_ms += ms(t, clock::now());
    const auto cb = paillier::encrypt(kp.pub, b, nonces);
    t = clock::now();
    const auto sum = paillier::he_add(kp.pub, ca, cb);
    add_ms += ms(t, clock::now());
    t = clock::now();
    const auto prod = paillier::he_scalar_mul(kp.pub, mpz_class(100), ca);
    mul_ms += ms(t, clock::now());
    t = clock::now();
    const auto plain = paillier::decrypt(kp, sum);
    dec_ms += ms(t, clock::now());
    if (plain != (a + b) % kp.pub.n || paillier::decrypt(kp, prod) != (100 * a) % kp.pub.n)
      fail(Errc::InvalidArgument, "homomorphic check failed during benchmark");
  }
  std::printf("key_bits=%u samples=%d\n", bits, count);
  std::printf("%-10s %12s\n", "operation", "mean_ms");
  for (auto [name, total] : {std::pair{"keygen", keygen_ms}, {"encrypt", enc_ms}, {"add", add_ms},
                             {"scalar_mul", mul_ms}, {"decrypt", dec_ms}})
    std::printf("%-10s %12.4f\n", name, total / count);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated boosting experiments with Paillier-encrypted aggregation"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "run an experiment and write metrics.csv, model.json, config.json");
  run_cmd->add_option("--config", run.config, "JSON experiment config")->check(CLI::ExistingFile);
  run_cmd->add_option("--aggregator", run.aggregator, "fedavg | fedboosting | centralized");
  run_cmd->add_option("--encryption", run.encryption, "none | he | he_dp");
  run_cmd->add_option("--weighting", run.weighting, "score | literal");
  run_cmd->add_option("--transport", run.transport, "loopback | tcp");
  run_cmd->add_option("--seed", run.seed, "master seed");
  run_cmd->add_option("--rounds", run.rounds, "number of rounds");
  run_cmd->add_option("--samples", run.samples, "samples per client for the built-in synthetic cohort");
  run_cmd->add_option("--out", run.out, "output directory");
  run_cmd->add_flag("--boundary", run.boundary, "also write boundary.csv for the final model");

  std::string model, boundary_out = "boundary.csv";
  BoundaryGrid grid;
  auto* boundary_cmd = app.add_subcommand("boundary", "export p(class 1) over a grid from a saved model");
  boundary_cmd->add_option("--model", model, "model.json written by run")->required()->check(CLI::ExistingFile);
  boundary_cmd->add_option("--out", boundary_out, "output CSV");
  boundary_cmd->add_option("--xmin", grid.xmin);
  boundary_cmd->add_option("--xmax", grid.xmax);
  boundary_cmd->add_option("--ymin", grid.ymin);
  boundary_cmd->add_option("--ymax", grid.ymax);
  boundary_cmd->add_option("--steps", grid.steps, "points per axis (>= 2)");

  unsigned bits = 128;
  int count = 10;
  std::uint64_t bench_seed = 1;
  auto* keybench_cmd = app.add_subcommand("keybench", "time Paillier key generation and operations");
  keybench_cmd->add_option("--bits", bits, "modulus size");
  keybench_cmd->add_option("--count", count, "repetitions")->check(CLI::PositiveNumber);
  keybench_cmd->add_option("--seed", bench_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return cmd_run(run);
    if (*boundary_cmd) return cmd_boundary(model, boundary_out, grid);
    if (*keybench_cmd) return cmd_keybench(bits, count, bench_seed);
  } catch (const Error& e) {
    std::printf("error: code=%s message=%s\n", std::string(to_string(e.code())).c_str(), e.detail().c_str());
    return 2;
  } catch (const std::exception& e) {
    std::printf("error: code=Internal message=%s\n", e.what());
    return 3;
  }
  return 0;
}
