// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment orchestration: builds the client datasets, hosts the server and
// clients on threads over loopback or localhost TCP, scores the global model
// each round on the pooled test set, and exports CSV / JSON artifacts.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fedboost/aggregate.hpp"
#include "fedboost/dataset.hpp"
#include "fedboost/error.hpp"
#include "fedboost/message.hpp"
#include "fedboost/model.hpp"
#include "fedboost/protocol.hpp"
#include "fedboost/transport.hpp"

namespace fedboost {

enum class TrainingScheme { fedavg, fedboosting, centralized };
enum class TransportKind { loopback, tcp };

struct ClientDataConfig {
  std::vector<GaussianSpec> gaussians;
  std::optional<std::string> csv_path;  // replaces `gaussians` when set
  std::uint64_t seed = 0;
  double poison_frac = 0.0;  // label flips applied to the training part only
};

struct ExperimentConfig {
  TrainingScheme scheme = TrainingScheme::fedboosting;
  Encryption encryption = Encryption::none;
  WeightingMode weighting = WeightingMode::score;
  bool force_uniform_weights = false;
  std::size_t rounds = 50;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  double learning_rate = 0.003;
  std::size_t hidden = 8;
  std::vector<ClientDataConfig> clients;
  double train_frac = 0.9;
  double val_frac = 0.1;
  QuantConfig quant;
  unsigned key_bits = 128;
  double p_hat = 0.9;
  double p_hat_jitter = 0.0;
  double timeout_seconds = 60.0;
  std::uint64_t seed = 1;
  TransportKind transport = TransportKind::loopback;
  std::string output_dir = "out";

  /// Two Non-IID clients with `samples_per_client` points each.
  static ExperimentConfig synthetic(std::size_t samples_per_client = 40000) {
    ExperimentConfig cfg;
    for (std::size_t c = 0; c < 2; ++c)
      cfg.clients.push_back({default_client_specs(c, samples_per_client / 2), std::nullopt, c + 1, 0.0});
    return cfg;
  }
};

[[noreturn]] inline void config_error(const std::string& path, const std::string& what) {
  fail(Errc::ConfigError, path + ": " + what);
}

inline void validate(const ExperimentConfig& cfg) {
  if (cfg.rounds == 0) config_error("rounds", "must be >= 1");
  if (cfg.epochs == 0) config_error("epochs", "must be >= 1");
  if (cfg.batch_size == 0) config_error("batch_size", "must be >= 1");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) config_error("learning_rate", "must be positive");
  if (cfg.hidden == 0) config_error("hidden", "must be >= 1");
  if (cfg.clients.empty()) config_error("clients", "at least one client required");
  if (cfg.scheme == TrainingScheme::fedboosting && cfg.clients.size() < 2)
    config_error("clients", "fedboosting needs at least two clients");
  if (cfg.encryption == Encryption::he_dp && cfg.scheme != TrainingScheme::fedboosting)
    config_error("encryption", "he_dp requires aggregator = fedboosting");
  if (cfg.scheme == TrainingScheme::centralized && cfg.encryption != Encryption::none)
    config_error("encryption", "centralized training is plaintext only");
  if (!(cfg.train_frac > 0.0 && cfg.train_frac < 1.0)) config_error("train_frac", "must lie in (0, 1)");
  if (!(cfg.val_frac > 0.0 && cfg.val_frac < 1.0)) config_error("val_frac", "must lie in (0, 1)");
  if (cfg.quant.scale_exponent < 1) config_error("quant.scale_exponent", "must be >= 1");
  if (cfg.quant.pieces < 1) config_error("quant.pieces", "must be >= 1");
  if (cfg.key_bits < 64 || cfg.key_bits % 2) config_error("key_bits", "must be even and >= 64");
  if (!(cfg.timeout_seconds > 0.0)) config_error("timeout_seconds", "must be positive");
  if (cfg.encryption == Encryption::he_dp) {
    const double n = static_cast<double>(cfg.clients.size());
    if (!(cfg.p_hat > 1.0 / n && cfg.p_hat <= 1.0)) config_error("p_hat", "must lie in (1/N, 1]");
  }
  if (cfg.p_hat_jitter < 0.0 || cfg.p_hat_jitter > 0.05) config_error("p_hat_jitter", "must lie in [0, 0.05]");
  for (std::size_t c = 0; c < cfg.clients.size(); ++c) {
    const auto& cl = cfg.clients[c];
    const std::string path = "clients[" + std::to_string(c) + "]";
    if (!cl.csv_path && cl.gaussians.empty()) config_error(path + ".gaussians", "no data source");
    if (!(cl.poison_frac >= 0.0 && cl.poison_frac <= 1.0)) config_error(path + ".poison_frac", "must lie in [0, 1]");
  }
}

// ---- JSON config ----------------------------------------------------------

namespace detail {

template <typename T>
T field(const json& j, const std::string& key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(path + key, "has the wrong type");
  }
}

inline TrainingScheme parse_scheme(const std::string& s, const std::string& path) {
  if (s == "fedavg") return TrainingScheme::fedavg;
  if (s == "fedboosting") return TrainingScheme::fedboosting;
  if (s == "centralized") return TrainingScheme::centralized;
  config_error(path, "unknown aggregator '" + s + "'");
}

inline Encryption parse_encryption(const std::string& s, const std::string& path) {
  if (s == "none") return Encryption::none;
  if (s == "he") return Encryption::he;
  if (s == "he_dp") return Encryption::he_dp;
  config_error(path, "unknown encryption '" + s + "'");
}

inline WeightingMode parse_weighting(const std::string& s, const std::string& path) {
  if (s == "literal") return WeightingMode::literal;
  if (s == "score") return WeightingMode::score;
  config_error(path, "unknown weighting_mode '" + s + "'");
}

inline TransportKind parse_transport(const std::string& s, const std::string& path) {
  if (s == "loopback") return TransportKind::loopback;
  if (s == "tcp") return TransportKind::tcp;
  config_error(path, "unknown transport '" + s + "'");
}

}  // namespace detail

inline std::string to_string(TrainingScheme s) {
  switch (s) {
    case TrainingScheme::fedavg: return "fedavg";
    case TrainingScheme::fedboosting: return "fedboosting";
    case TrainingScheme::centralized: return "centralized";
  }
  return "?";
}
inline std::string to_string(Encryption e) {
  switch (e) {
    case Encryption::none: return "none";
    case Encryption::he: return "he";
    case Encryption::he_dp: return "he_dp";
  }
  return "?";
}
inline std::string to_string(WeightingMode m) { return m == WeightingMode::score ? "score" : "literal"; }
inline std::string to_string(TransportKind t) { return t == TransportKind::tcp ? "tcp" : "loopback"; }

inline ExperimentConfig config_from_json(const json& j) {
  using detail::field;
  if (!j.is_object()) config_error("$", "config must be a JSON object");
  ExperimentConfig cfg;
  cfg.scheme = detail::parse_scheme(field<std::string>(j, "aggregator", "", "fedboosting"), "aggregator");
  cfg.encryption = detail::parse_encryption(field<std::string>(j, "encryption", "", "none"), "encryption");
  cfg.weighting = detail::parse_weighting(field<std::string>(j, "weighting_mode", "", "score"), "weighting_mode");
  cfg.transport = detail::parse_transport(field<std::string>(j, "transport", "", "loopback"), "transport");
  cfg.force_uniform_weights = field<bool>(j, "force_uniform_weights", "", false);
  cfg.rounds = field<std::size_t>(j, "rounds", "", cfg.rounds);
  cfg.epochs = field<std::size_t>(j, "epochs", "", cfg.epochs);
  cfg.batch_size = field<std::size_t>(j, "batch_size", "", cfg.batch_size);
  cfg.learning_rate = field<double>(j, "learning_rate", "", cfg.learning_rate);
  cfg.hidden = field<std::size_t>(j, "hidden", "", cfg.hidden);
  cfg.train_frac = field<double>(j, "train_frac", "", cfg.train_frac);
  cfg.val_frac = field<double>(j, "val_frac", "", cfg.val_frac);
  cfg.key_bits = field<unsigned>(j, "key_bits", "", cfg.key_bits);
  cfg.p_hat = field<double>(j, "p_hat", "", cfg.p_hat);
  cfg.p_hat_jitter = field<double>(j, "p_hat_jitter", "", cfg.p_hat_jitter);
  cfg.timeout_seconds = field<double>(j, "timeout_seconds", "", cfg.timeout_seconds);
  cfg.seed = field<std::uint64_t>(j, "seed", "", cfg.seed);
  cfg.output_dir = field<std::string>(j, "output_dir", "", cfg.output_dir);
  if (j.contains("quant")) {
    const auto& q = j.at("quant");
    cfg.quant.scale_exponent = field<int>(q, "scale_exponent", "quant.", cfg.quant.scale_exponent);
    cfg.quant.pieces = field<int>(q, "pieces", "quant.", cfg.quant.pieces);
  }
  if (!j.contains("clients")) {
    const auto samples = field<std::size_t>(j, "samples_per_client", "", 40000);
    cfg.clients = ExperimentConfig::synthetic(samples).clients;
  } else {
    const auto& arr = j.at("clients");
    if (!arr.is_array()) config_error("clients", "must be an array");
    for (std::size_t c = 0; c < arr.size(); ++c) {
      const auto& cj = arr[c];
      const std::string path = "clients[" + std::to_string(c) + "].";
      ClientDataConfig cl;
      cl.seed = field<std::uint64_t>(cj, "seed", path, c + 1);
      cl.poison_frac = field<double>(cj, "poison_frac", path, 0.0);
      if (cj.contains("csv")) cl.csv_path = field<std::string>(cj, "csv", path, "");
      if (cj.contains("gaussians")) {
        const auto& gs = cj.at("gaussians");
        for (std::size_t g = 0; g < gs.size(); ++g) {
          const std::string gpath = path + "gaussians[" + std::to_string(g) + "].";
          try {
            GaussianSpec spec;
            spec.mean = gs[g].at("mean").get<Vec2>();
            spec.covariance = gs[g].at("covariance").get<Mat2>();
            spec.label = gs[g].at("label").get<int>();
            spec.count = gs[g].at("count").get<std::size_t>();
            cholesky(spec.covariance);
            cl.gaussians.push_back(spec);
          } catch (const json::exception& e) {
            config_error(gpath.substr(0, gpath.size() - 1), e.what());
          } catch (const Error& e) {
            config_error(gpath + "covariance", e.detail());
          }
        }
      } else if (!cl.csv_path) {
        cl.gaussians = default_client_specs(c, field<std::size_t>(cj, "samples", path, 40000) / 2);
      }
      cfg.clients.push_back(std::move(cl));
    }
  }
  validate(cfg);
  return cfg;
}

inline json config_to_json(const ExperimentConfig& cfg) {
  json clients = json::array();
  for (const auto& cl : cfg.clients) {
    json c = {{"poison_frac", cl.poison_frac}, {"seed", cl.seed}};
    if (cl.csv_path) c["csv"] = *cl.csv_path;
    json gs = json::array();
    for (const auto& g : cl.gaussians)
      gs.push_back({{"count", g.count}, {"covariance", g.covariance}, {"label", g.label}, {"mean", g.mean}});
    c["gaussians"] = gs;
    clients.push_back(c);
  }
  return {{"aggregator", to_string(cfg.scheme)},
          {"batch_size", cfg.batch_size},
          {"clients", clients},
          {"encryption", to_string(cfg.encryption)},
          {"epochs", cfg.epochs},
          {"force_uniform_weights", cfg.force_uniform_weights},
          {"hidden", cfg.hidden},
          {"key_bits", cfg.key_bits},
          {"learning_rate", cfg.learning_rate},
          {"output_dir", cfg.output_dir},
          {"p_hat", cfg.p_hat},
          {"p_hat_jitter", cfg.p_hat_jitter},
          {"quant", {{"pieces", cfg.quant.pieces}, {"scale_exponent", cfg.quant.scale_exponent}}},
          {"rounds", cfg.rounds},
          {"seed", cfg.seed},
          {"timeout_seconds", cfg.timeout_seconds},
          {"train_frac", cfg.train_frac},
          {"transport", to_string(cfg.transport)},
          {"val_frac", cfg.val_frac},
          {"weighting_mode", to_string(cfg.weighting)}};
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open config " + path.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    config_error(path.string(), e.what());
  }
}

// ---- data -----------------------------------------------------------------

struct ExperimentData {
  std::vector<DatasetSplit> clients;
  LabeledSet combined_test;
};

inline ExperimentData build_data(const ExperimentConfig& cfg) {
  ExperimentData out;
  for (const auto& cl : cfg.clients) {
    const LabeledSet raw = cl.csv_path ? read_csv(*cl.csv_path)
                                       : generate_client_dataset(cl.gaussians, derive_seed(cfg.seed, {0xd1, cl.seed}));
    auto parts = split(raw, cfg.train_frac, cfg.val_frac, derive_seed(cfg.seed, {0xd2, cl.seed}));
    if (cl.poison_frac > 0.0) parts.train = poison_labels(std::move(parts.train), cl.poison_frac, derive_seed(cfg.seed, {0xd3, cl.seed}));
    out.combined_test.insert(out.combined_test.end(), parts.test.begin(), parts.test.end());
    out.clients.push_back(std::move(parts));
  }
  return out;
}

// ---- runs -----------------------------------------------------------------

struct ExperimentResult {
  std::vector<RoundRecord> records;
  ModelParams final_params;
  ModelParams initial_params;
  Transcript transcript;
};

inline ProtocolConfig protocol_config(const ExperimentConfig& cfg) {
  ProtocolConfig p;
  p.aggregator = cfg.scheme == TrainingScheme::fedavg ? Aggregator::fedavg : Aggregator::fedboosting;
  p.encryption = cfg.encryption;
  p.weighting = cfg.weighting;
  p.force_uniform_weights = cfg.force_uniform_weights;
  p.clients = cfg.clients.size();
  p.rounds = cfg.rounds;
  p.quant = cfg.quant;
  p.key_bits = cfg.key_bits;
  p.p_hat = cfg.p_hat;
  p.p_hat_jitter = cfg.p_hat_jitter;
  p.seed = derive_seed(cfg.seed, {0x5e});
  p.phase_timeout = std::chrono::milliseconds(static_cast<long long>(cfg.timeout_seconds * 1000.0));
  return p;
}

inline OptimizerConfig optimizer_config(const ExperimentConfig& cfg) {
  OptimizerConfig opt;
  opt.learning_rate = cfg.learning_rate;
  return opt;
}

inline ExperimentResult run_centralized(const ExperimentConfig& cfg, const ExperimentData& data,
                                        const ModelParams& initial) {
  std::vector<LabeledSet> trains;
  for (const auto& c : data.clients) trains.push_back(c.train);
  const LabeledSet pooled = concat(trains);
  ExperimentResult result{{}, initial, initial, Transcript(0)};
  ModelParams w = initial;
  for (std::uint32_t r = 1; r <= cfg.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    auto report = train_local(w, pooled, cfg.batch_size, cfg.epochs, optimizer_config(cfg), derive_seed(cfg.seed, {0x54, r, 0}));
    w = report.params;
    RoundRecord rec;
    rec.round = r;
    rec.train_losses = {report.training_loss};
    rec.durations.train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto eval = evaluate(w, data.combined_test);
    rec.global_test_loss = eval.loss;
    rec.global_test_accuracy = eval.accuracy;
    result.records.push_back(std::move(rec));
  }
  result.final_params = w;
  return result;
}

inline ExperimentResult run_federated(const ExperimentConfig& cfg, const ExperimentData& data,
                                      const ModelParams& initial) {
  const auto pcfg = protocol_config(cfg);
  const std::size_t n = cfg.clients.size();

  // server-side endpoints [i] <-> client-side endpoints [i]
  std::vector<std::unique_ptr<transport::Endpoint>> server_eps, client_eps;
  std::unique_ptr<transport::TcpListener> listener;
  if (cfg.transport == TransportKind::loopback) {
    for (std::size_t i = 0; i < n; ++i) {
      auto [a, b] = transport::loopback_pair();
      server_eps.push_back(std::move(a));
      client_eps.push_back(std::move(b));
    }
  } else {
    listener = transport::tcp_listen("127.0.0.1:0");
    const std::string addr = "127.0.0.1:" + std::to_string(listener->port());
    for (std::size_t i = 0; i < n; ++i) {
      // connect then accept one at a time so accepted socket i belongs to client i + 1
      client_eps.push_back(transport::tcp_connect(addr));
      server_eps.push_back(listener->accept(pcfg.phase_timeout));
    }
  }

  std::mutex global_mu;
  std::map<std::uint32_t, ModelParams> globals;
  auto observer = [&](std::uint32_t r, const ModelParams& w) {
    std::lock_guard lock(global_mu);
    globals[r] = w;
  };

  std::vector<std::unique_ptr<ClientMachine>> machines;
  for (std::size_t i = 0; i < n; ++i) {
    ClientConfig cc;
    cc.id = static_cast<std::uint32_t>(i + 1);
    cc.protocol = pcfg;
    cc.batch_size = cfg.batch_size;
    cc.epochs = cfg.epochs;
    cc.optimizer = optimizer_config(cfg);
    cc.seed = cfg.seed;
    machines.push_back(std::make_unique<ClientMachine>(cc, data.clients[i], i == 0 ? GlobalModelObserver(observer)
                                                                                    : GlobalModelObserver{}));
  }

  std::vector<std::exception_ptr> client_errors(n);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < n; ++i) {
    threads.emplace_back([&, i] {
      try {
        run_client(*machines[i], *client_eps[i], pcfg.phase_timeout);
      } catch (...) {
        client_errors[i] = std::current_exception();
      }
    });
  }

  ServerMachine server(pcfg, initial);
  ExperimentResult result{{}, initial, initial, Transcript(n)};
  std::exception_ptr server_error;
  std::vector<transport::Endpoint*> raw;
  for (auto& ep : server_eps) raw.push_back(ep.get());
  try {
    run_server(server, raw, &result.transcript);
  } catch (...) {
    server_error = std::current_exception();
  }
  for (auto& t : threads) t.join();
  // A client's own failure explains the server's abort better than the abort does.
  for (auto& e : client_errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const Error& err) {
      if (err.code() != Errc::RoundAborted || !server_error) throw;
    }
  }
  if (server_error) std::rethrow_exception(server_error);

  result.records = server.records();
  result.final_params = *server.final_params();
  for (auto& rec : result.records) {
    const auto it = globals.find(rec.round);
    if (it == globals.end()) fail(Errc::ProtocolViolation, "no global model observed for round " + std::to_string(rec.round));
    const auto eval = evaluate(it->second, data.combined_test);
    rec.global_test_loss = eval.loss;
    rec.global_test_accuracy = eval.accuracy;
  }
  return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto data = build_data(cfg);
  const auto initial = init_params(derive_seed(cfg.seed, {0x1e}), Layout::two_layer(cfg.hidden));
  if (cfg.scheme == TrainingScheme::centralized) return run_centralized(cfg, data, initial);
  return run_federated(cfg, data, initial);
}

// ---- exports --------------------------------------------------------------

/// Shortest decimal that round-trips to the same double.
inline std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string metrics_csv(const std::vector<RoundRecord>& records) {
  if (records.empty()) fail(Errc::InvalidArgument, "no round records to export");
  std::ostringstream out;
  out << "round,client,train_loss,weight,validation_loss_sum,global_test_loss,global_test_acc\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  for (const auto& rec : records) {
    for (std::size_t i = 0; i < rec.train_losses.size(); ++i) {
      out << rec.round << ',' << (i + 1) << ',' << format_real(rec.train_losses[i]) << ',';
      if (rec.weights) out << format_real(rec.weights->values[i]);
      out << ',';
      if (rec.validation) out << format_real(rec.validation->row_sum(i));
      out << ',' << opt(rec.global_test_loss) << ',' << opt(rec.global_test_accuracy) << '\n';
    }
  }
  return out.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << contents;
  out.flush();
  if (!out) fail(Errc::IoError, "failed writing " + path.string());
}

inline void export_metrics(const std::vector<RoundRecord>& records, const std::filesystem::path& path) {
  write_file(path, metrics_csv(records));
}

struct BoundaryGrid {
  double xmin = -6.0;
  double xmax = 6.0;
  double ymin = -6.0;
  double ymax = 6.0;
  std::size_t steps = 101;
};

/// `x,y,p_class1` over a steps x steps lattice, x varying fastest.
inline std::string boundary_csv(const ModelParams& params, const BoundaryGrid& grid) {
  if (grid.steps < 2) config_error("steps", "must be >= 2");
  if (!(grid.xmin < grid.xmax) || !(grid.ymin < grid.ymax)) config_error("grid", "degenerate range");
  std::ostringstream out;
  out << "x,y,p_class1\n";
  const double dx = (grid.xmax - grid.xmin) / static_cast<double>(grid.steps - 1);
  const double dy = (grid.ymax - grid.ymin) / static_cast<double>(grid.steps - 1);
  for (std::size_t iy = 0; iy < grid.steps; ++iy) {
    const double y = iy + 1 == grid.steps ? grid.ymax : grid.ymin + dy * static_cast<double>(iy);
    for (std::size_t ix = 0; ix < grid.steps; ++ix) {
      const double x = ix + 1 == grid.steps ? grid.xmax : grid.xmin + dx * static_cast<double>(ix);
      const double xy[2] = {x, y};
      out << format_real(x) << ',' << format_real(y) << ',' << format_real(forward(params, xy)[1]) << '\n';
    }
  }
  return out.str();
}

inline void export_boundary(const ModelParams& params, const BoundaryGrid& grid, const std::filesystem::path& path) {
  write_file(path, boundary_csv(params, grid));
}

inline void save_model(const ModelParams& params, const std::filesystem::path& path) {
  write_file(path, params_to_json(params).dump(2) + "\n");
}

inline ModelParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open model " + path.string());
  try {
    return params_from_json(json::parse(in));
  } catch (const json::exception& e) {
    fail(Errc::IoError, path.string() + ": " + e.what());
  }
}

}  // namespace fedboost
