#pragma once

#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedctx/aggregation.hpp"
#include "fedctx/data.hpp"
#include "fedctx/device.hpp"

namespace fedctx {

enum class Scheme {
  fedavg,
  fedprox,
  folb,
  fedavg_contextual,
  fedprox_contextual,
  contextual_expected,
};

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::fedavg: return "fedavg";
    case Scheme::fedprox: return "fedprox";
    case Scheme::folb: return "folb";
    case Scheme::fedavg_contextual: return "fedavg_contextual";
    case Scheme::fedprox_contextual: return "fedprox_contextual";
    case Scheme::contextual_expected: return "contextual_expected";
  }
  throw InvalidInput("to_string: unknown scheme");
}

inline std::optional<Scheme> parse_scheme(const std::string& name) {
  for (Scheme s : {Scheme::fedavg, Scheme::fedprox, Scheme::folb,
                   Scheme::fedavg_contextual, Scheme::fedprox_contextual,
                   Scheme::contextual_expected})
    if (name == to_string(s)) return s;
  return std::nullopt;
}

// True for schemes that weight updates through the surrogate-bound solve.
inline bool is_contextual(Scheme s) {
  return s == Scheme::fedavg_contextual || s == Scheme::fedprox_contextual ||
         s == Scheme::contextual_expected;
}

// True for schemes needing a global-gradient estimate each round.
inline bool uses_gradient_estimate(Scheme s) {
  return is_contextual(s) || s == Scheme::folb;
}

// Local optimizer settings for a run; epochs are drawn uniformly from
// [min_epochs, max_epochs] per device per round.
struct LocalSpec {
  double learning_rate = 0.05;
  int batch_size = 10;
  double proximal_mu = 0.0;
  int min_epochs = 1;
  int max_epochs = 20;
};

struct RunConfig {
  Scheme scheme = Scheme::fedavg;
  int rounds = 100;
  int devices_per_round = 10;
  int k2 = 0;  // gradient-estimate sample size; 0 reuses the round's devices
  LocalSpec local;
  std::optional<double> beta_override;  // default smoothness is 1/learning_rate
  std::uint64_t seed = 0;
  int eval_every = 1;
  // contextual_expected only: devices computing updates each round while
  // devices_per_round plays the budget k in the expectation factors.
  // 0 means the whole fleet.
  int pool_size = 0;
};

// Snapshot after a round (round 0 is the untouched initial model).
struct RoundRecord {
  int round = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double combined_delta_norm = 0.0;
  std::optional<double> bound_value;
  std::optional<std::map<int, double>> alphas;
  std::vector<int> selected_devices;
  std::map<int, int> epochs_drawn;
};

inline double smoothness_beta(const RunConfig& cfg) {
  return cfg.beta_override.value_or(1.0 / cfg.local.learning_rate);
}

// Certified smoothness bound of the federated objective: the max over all
// training samples dominates every device term and hence their mixture.
inline double certified_smoothness(const FederatedDataset& data) {
  if (data.devices.empty()) throw InvalidInput("certified_smoothness: no devices");
  double bound = 0.0;
  for (const auto& dev : data.devices)
    bound = std::max(bound, softmax_smoothness_bound(dev));
  return bound;
}

// Every violated constraint, empty when the config is runnable against a
// fleet of num_devices devices.
inline std::vector<std::string> validate_run_config(const RunConfig& cfg,
                                                    int num_devices) {
  std::vector<std::string> problems;
  if (cfg.rounds < 1) problems.push_back("rounds must be >= 1");
  if (cfg.devices_per_round < 1)
    problems.push_back("devices_per_round must be >= 1");
  else if (cfg.devices_per_round > num_devices)
    problems.push_back("devices_per_round (" + std::to_string(cfg.devices_per_round) +
                       ") exceeds the number of devices (" +
                       std::to_string(num_devices) + ")");
  if (cfg.k2 < 0 || cfg.k2 > num_devices)
    problems.push_back("k2 must be between 0 and the number of devices");
  if (cfg.eval_every < 1) problems.push_back("eval_every must be >= 1");
  if (!(cfg.local.learning_rate > 0.0)) problems.push_back("learning_rate must be > 0");
  if (cfg.local.batch_size < 1) problems.push_back("batch_size must be >= 1");
  if (cfg.local.proximal_mu < 0.0) problems.push_back("proximal_mu must be >= 0");
  if (cfg.local.min_epochs < 1 || cfg.local.min_epochs > cfg.local.max_epochs)
    problems.push_back("need 1 <= min_epochs <= max_epochs");
  if (cfg.beta_override && !(*cfg.beta_override > 0.0))
    problems.push_back("beta override must be > 0");

  const bool fedavg_family =
      cfg.scheme == Scheme::fedavg || cfg.scheme == Scheme::fedavg_contextual;
  if (fedavg_family && cfg.local.proximal_mu != 0.0)
    problems.push_back("proximal_mu must be 0 for scheme " +
                       std::string(to_string(cfg.scheme)));
  if (cfg.scheme == Scheme::fedprox || cfg.scheme == Scheme::fedprox_contextual) {
    if (!(cfg.local.proximal_mu > 0.0))
      problems.push_back("proximal_mu must be > 0 for scheme " +
                         std::string(to_string(cfg.scheme)));
  }

  if (cfg.scheme == Scheme::contextual_expected) {
    const int pool = cfg.pool_size == 0 ? num_devices : cfg.pool_size;
    if (pool < cfg.devices_per_round || pool > num_devices)
      problems.push_back("pool_size must lie between devices_per_round and the number of devices");
    if (cfg.devices_per_round < 2)
      problems.push_back("contextual_expected needs devices_per_round >= 2");
  } else if (cfg.pool_size != 0) {
    problems.push_back("pool_size only applies to scheme contextual_expected");
  }
  return problems;
}

namespace detail {

inline std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline void check_federated(const FederatedDataset& data) {
  if (data.devices.empty()) throw InvalidInput("run: dataset has no devices");
  if (data.test.size() == 0) throw InvalidInput("run: dataset has no test samples");
  if (data.device_weights.size() != data.devices.size())
    throw InvalidInput("run: device weights missing");
  const Eigen::Index d = data.num_features();
  double total = 0.0;
  for (std::size_t k = 0; k < data.devices.size(); ++k) {
    if (data.devices[k].size() == 0)
      throw InvalidInput("run: device " + std::to_string(k) + " has no samples");
    if (data.devices[k].num_features() != d)
      throw InvalidInput("run: devices disagree on feature count");
    total += data.device_weights[k];
  }
  if (data.test.num_features() != d)
    throw InvalidInput("run: test feature count differs from devices");
  if (std::abs(total - 1.0) > 1e-12)
    throw InvalidInput("run: device weights do not sum to 1");
}

// Global objective: the device-weight mixture of per-device mean losses.
inline double federated_loss(const SoftmaxModel& model, const FederatedDataset& data) {
  double total = 0.0;
  for (std::size_t k = 0; k < data.devices.size(); ++k)
    total += data.device_weights[k] * loss(model, data.devices[k]);
  return total;
}

}  // namespace detail

// Simulates cfg.rounds federated rounds from zero-initialized parameters and
// returns one record per evaluated round (round 0 always, then every
// eval_every-th round and the last). Failures inside a round surface as
// RunError tagged with the round index.
inline std::vector<RoundRecord> run(const RunConfig& cfg, const FederatedDataset& data) {
  detail::check_federated(data);
  const auto problems = validate_run_config(cfg, data.num_devices());
  if (!problems.empty()) throw InvalidInput("run: " + detail::join(problems, "; "));

  const int n_dev = data.num_devices();
  const int d = int(data.num_features());
  SoftmaxModel model = SoftmaxModel::zeros(infer_num_classes(data), d);
  const double beta = smoothness_beta(cfg);
  const int participants = cfg.scheme == Scheme::contextual_expected
                               ? (cfg.pool_size == 0 ? n_dev : cfg.pool_size)
                               : cfg.devices_per_round;

  std::vector<RoundRecord> records;
  auto record_round = [&](int round, double delta_norm,
                          std::optional<double> bound,
                          std::optional<std::map<int, double>> alphas,
                          std::vector<int> selected, std::map<int, int> epochs) {
    RoundRecord rec;
    rec.round = round;
    rec.train_loss = detail::federated_loss(model, data);
    rec.test_accuracy = accuracy(model, data.test);
    rec.combined_delta_norm = delta_norm;
    rec.bound_value = std::move(bound);
    rec.alphas = std::move(alphas);
    rec.selected_devices = std::move(selected);
    rec.epochs_drawn = std::move(epochs);
    records.push_back(std::move(rec));
  };
  record_round(0, 0.0, std::nullopt, std::nullopt, {}, {});

  for (int t = 0; t < cfg.rounds; ++t) {
    try {
      auto select_gen = rng::make_engine(cfg.seed, rng::Stream::device_selection, t);
      const std::vector<int> selected =
          rng::sample_without_replacement(n_dev, participants, select_gen);

      // Epochs are keyed by (round, device), so a device draws the same
      // count no matter which scheme or estimator settings run alongside.
      std::map<int, int> epochs;
      for (int id : selected) {
        auto epoch_gen = rng::make_engine(cfg.seed, rng::Stream::epoch_draws, t, id);
        epochs[id] = draw_epochs(cfg.local.min_epochs, cfg.local.max_epochs, epoch_gen);
      }

      std::vector<DeviceUpdate> updates;
      updates.reserve(selected.size());
      for (int id : selected) {
        LocalConfig lc{cfg.local.learning_rate, cfg.local.batch_size,
                       cfg.local.proximal_mu, epochs[id]};
        DeviceUpdate up = local_update(
            model.params, data.devices[std::size_t(id)], lc,
            rng::derive_seed(cfg.seed, rng::Stream::data_shuffle, t, id));
        up.device_id = id;
        updates.push_back(std::move(up));
      }

      Vector combined;
      std::optional<double> bound;
      std::optional<std::map<int, double>> alphas;
      if (uses_gradient_estimate(cfg.scheme)) {
        auto grad_gen = rng::make_engine(cfg.seed, rng::Stream::gradient_sampling, t);
        const GradientEstimate grad =
            estimate_global_gradient(model.params, data, cfg.k2, selected, grad_gen);
        AggregationWeights weights;
        if (cfg.scheme == Scheme::folb) {
          std::vector<Vector> local_grads;
          local_grads.reserve(selected.size());
          for (int id : selected)
            local_grads.push_back(gradient(model, data.devices[std::size_t(id)]));
          weights = folb_weights(grad, updates, local_grads);
        } else if (cfg.scheme == Scheme::contextual_expected) {
          weights = contextual_expected_weights(grad, updates, SmoothnessConfig{beta},
                                                cfg.devices_per_round, participants);
        } else {
          weights = contextual_weights(grad, updates, SmoothnessConfig{beta});
        }
        combined = std::move(weights.combined_delta);
        bound = weights.bound_value;
        alphas = std::move(weights.alphas);
      } else {
        combined = average(updates, false);
      }

      model.params += combined;
      if ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.rounds)
        record_round(t + 1, combined.norm(), bound, std::move(alphas),
                     selected, std::move(epochs));
    } catch (const std::exception& e) {
      throw RunError(t, e.what());
    }
  }
  return records;
}

// First evaluated round whose test accuracy reaches the level, if any.
inline std::optional<int> rounds_to_accuracy(const std::vector<RoundRecord>& records,
                                             double level) {
  if (records.empty()) throw InvalidInput("rounds_to_accuracy: no records");
  for (const auto& rec : records)
    if (rec.test_accuracy >= level) return rec.round;
  return std::nullopt;
}

// One descent-inequality check per consecutive pair of recorded rounds.
struct DescentCheck {
  int round = 0;      // the round whose update is being checked
  double lhs = 0.0;   // realized loss decrease
  double rhs = 0.0;   // (beta/2) ||combined delta||^2
  bool holds = false;
};

// Checks the per-round guarantee loss(t) - loss(t+1) >= (beta/2)||delta||^2
// against recorded metrics. Only consecutive records can be checked, so run
// with eval_every = 1 to cover every round. The guarantee is certified only
// when beta dominates the true smoothness; a run below the certified bound
// gets a stderr notice and its violations reported, not hidden.
inline std::vector<DescentCheck> verify_descent(const std::vector<RoundRecord>& records,
                                                const FederatedDataset& data,
                                                const RunConfig& cfg) {
  detail::check_federated(data);
  const double beta = smoothness_beta(cfg);
  if (beta < certified_smoothness(data))
    std::clog << "verify_descent: beta " << beta
              << " is below the certified smoothness bound "
              << certified_smoothness(data) << ", descent is not guaranteed\n";

  std::vector<DescentCheck> checks;
  for (std::size_t i = 0; i + 1 < records.size(); ++i) {
    if (records[i + 1].round != records[i].round + 1) continue;
    DescentCheck c;
    c.round = records[i + 1].round;
    c.lhs = records[i].train_loss - records[i + 1].train_loss;
    c.rhs = 0.5 * beta * records[i + 1].combined_delta_norm *
            records[i + 1].combined_delta_norm;
    const double tol = 1e-9 * (1.0 + std::abs(records[i].train_loss));
    c.holds = c.lhs >= c.rhs - tol;
    checks.push_back(c);
  }
  return checks;
}

}  // namespace fedctx
