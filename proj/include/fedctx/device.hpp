#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "fedctx/model.hpp"
#include "fedctx/rng.hpp"

namespace fedctx {

// Local optimizer settings. proximal_mu = 0 is plain minibatch SGD; a
// positive value adds the proximal pull (mu/2)||w - w_global||^2.
struct LocalConfig {
  double learning_rate = 0.05;
  int batch_size = 10;
  double proximal_mu = 0.0;
  int epochs = 1;
};

// One device's contribution to a round.
struct DeviceUpdate {
  int device_id = -1;
  Vector delta;  // local final params minus the global params it started from
  long num_samples = 0;
  int epochs_run = 0;
};

inline int draw_epochs(int min_epochs, int max_epochs, std::mt19937_64& gen) {
  if (min_epochs < 1 || min_epochs > max_epochs)
    throw InvalidInput("draw_epochs: need 1 <= min_epochs <= max_epochs");
  return std::uniform_int_distribution<int>(min_epochs, max_epochs)(gen);
}

namespace detail {

inline void check_local_config(const LocalConfig& cfg) {
  if (!(cfg.learning_rate > 0.0))
    throw InvalidInput("local_update: learning_rate must be > 0");
  if (cfg.batch_size < 1) throw InvalidInput("local_update: batch_size must be >= 1");
  if (cfg.proximal_mu < 0.0) throw InvalidInput("local_update: proximal_mu must be >= 0");
  if (cfg.epochs < 0) throw InvalidInput("local_update: epochs must be >= 0");
}

}  // namespace detail

// Runs cfg.epochs passes of minibatch SGD from the global parameters and
// returns the resulting delta. Sample order is reshuffled every epoch from
// the given seed; the trailing short batch is used, not dropped. Zero epochs
// return a zero delta without touching the RNG.
inline DeviceUpdate local_update(const Vector& global_params,
                                 const LabeledDataset& data,
                                 const LocalConfig& cfg, std::uint64_t seed) {
  detail::check_local_config(cfg);
  if (data.size() == 0) throw InvalidInput("local_update: empty dataset");
  const int d = int(data.num_features());
  if (global_params.size() % (d + 1) != 0)
    throw InvalidInput("local_update: params size not divisible by num_features+1");
  SoftmaxModel model{int(global_params.size() / (d + 1)), d, global_params};
  detail::check_pair(model, data);

  DeviceUpdate update;
  update.num_samples = long(data.size());
  update.epochs_run = cfg.epochs;
  if (cfg.epochs == 0) {
    update.delta = Vector::Zero(global_params.size());
    return update;
  }

  std::mt19937_64 gen(seed);
  std::vector<int> order(std::size_t(data.size()));
  std::iota(order.begin(), order.end(), 0);
  Vector w = global_params;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), gen);
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t len = std::min(std::size_t(cfg.batch_size), order.size() - start);
      const LabeledDataset batch = subset(data, std::span(order).subspan(start, len));
      model.params = w;
      Vector grad = gradient(model, batch);
      if (cfg.proximal_mu > 0.0) grad += cfg.proximal_mu * (w - global_params);
      Vector next = w - cfg.learning_rate * grad;
      if (!next.allFinite())
        throw DivergedError("local_update: parameters diverged", std::move(w));
      w = std::move(next);
    }
  }
  update.delta = w - global_params;
  return update;
}

}  // namespace fedctx
