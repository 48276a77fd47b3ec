#include "fedctx/engine.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

using fedctx::FederatedDataset;
using fedctx::InvalidInput;
using fedctx::LabeledDataset;
using fedctx::Matrix;
using fedctx::RoundRecord;
using fedctx::RunConfig;
using fedctx::RunError;
using fedctx::Scheme;
using fedctx::SoftmaxModel;
using fedctx::Vector;

namespace {

FederatedDataset small_fleet(int devices, int samples, std::uint64_t seed,
                             double spread = 1.0) {
  fedctx::SyntheticSpec spec;
  spec.alpha = spread;
  spec.beta = spread;
  spec.num_devices = devices;
  spec.num_features = 6;
  spec.num_classes = 3;
  spec.min_samples = samples;
  spec.max_samples = samples;
  spec.train_fraction = 0.9;
  spec.seed = seed;
  return fedctx::generate_synthetic(spec);
}

RunConfig base_config(Scheme scheme) {
  RunConfig cfg;
  cfg.scheme = scheme;
  cfg.rounds = 5;
  cfg.devices_per_round = 3;
  cfg.k2 = 0;
  cfg.local.learning_rate = 0.05;
  cfg.local.batch_size = 8;
  cfg.local.min_epochs = 1;
  cfg.local.max_epochs = 3;
  cfg.seed = 77;
  return cfg;
}

void expect_same_records(const std::vector<RoundRecord>& a,
                         const std::vector<RoundRecord>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].round, b[i].round);
    EXPECT_EQ(a[i].train_loss, b[i].train_loss);
    EXPECT_EQ(a[i].test_accuracy, b[i].test_accuracy);
    EXPECT_EQ(a[i].combined_delta_norm, b[i].combined_delta_norm);
    EXPECT_EQ(a[i].bound_value.has_value(), b[i].bound_value.has_value());
    if (a[i].bound_value) {
      EXPECT_EQ(*a[i].bound_value, *b[i].bound_value);
    }
    EXPECT_EQ(a[i].selected_devices, b[i].selected_devices);
    EXPECT_EQ(a[i].epochs_drawn, b[i].epochs_drawn);
    EXPECT_EQ(a[i].alphas.has_value(), b[i].alphas.has_value());
    if (a[i].alphas) {
      EXPECT_EQ(*a[i].alphas, *b[i].alphas);
    }
  }
}

RoundRecord record_with(int round, double loss, double acc, double norm = 0.0) {
  RoundRecord rec;
  rec.round = round;
  rec.train_loss = loss;
  rec.test_accuracy = acc;
  rec.combined_delta_norm = norm;
  return rec;
}

}  // namespace

TEST(SchemeNames, RoundTripAndCapabilities) {
  for (Scheme s : {Scheme::fedavg, Scheme::fedprox, Scheme::folb,
                   Scheme::fedavg_contextual, Scheme::fedprox_contextual,
                   Scheme::contextual_expected}) {
    const auto parsed = fedctx::parse_scheme(fedctx::to_string(s));
    ASSERT_TRUE(parsed.has_value());
    EXPECT_EQ(*parsed, s);
  }
  EXPECT_FALSE(fedctx::parse_scheme("fedavg-contextual").has_value());
  EXPECT_FALSE(fedctx::parse_scheme("").has_value());

  EXPECT_FALSE(fedctx::is_contextual(Scheme::fedavg));
  EXPECT_FALSE(fedctx::is_contextual(Scheme::folb));
  EXPECT_TRUE(fedctx::is_contextual(Scheme::fedavg_contextual));
  EXPECT_TRUE(fedctx::is_contextual(Scheme::contextual_expected));
  EXPECT_FALSE(fedctx::uses_gradient_estimate(Scheme::fedprox));
  EXPECT_TRUE(fedctx::uses_gradient_estimate(Scheme::folb));
  EXPECT_TRUE(fedctx::uses_gradient_estimate(Scheme::fedprox_contextual));
}

TEST(RunEngine, OneFullBatchRoundMatchesManualGradientStep) {
  // A single device running one full-batch epoch performs exactly one
  // gradient step, so round 1 must equal the manual update.
  FederatedDataset data = small_fleet(1, 40, 5);
  const int classes = fedctx::infer_num_classes(data);

  RunConfig cfg = base_config(Scheme::fedavg);
  cfg.rounds = 1;
  cfg.devices_per_round = 1;
  cfg.local.batch_size = int(data.devices[0].size());
  cfg.local.min_epochs = 1;
  cfg.local.max_epochs = 1;

  const auto records = fedctx::run(cfg, data);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].round, 0);
  EXPECT_NEAR(records[0].train_loss, std::log(double(classes)), 1e-12);

  SoftmaxModel model = SoftmaxModel::zeros(classes, 6);
  const Vector grad = fedctx::gradient(model, data.devices[0]);
  model.params = -cfg.local.learning_rate * grad;
  EXPECT_NEAR(records[1].combined_delta_norm, cfg.local.learning_rate * grad.norm(),
              1e-12);
  EXPECT_NEAR(records[1].train_loss, fedctx::loss(model, data.devices[0]), 1e-12);
  EXPECT_NEAR(records[1].test_accuracy, fedctx::accuracy(model, data.test), 1e-15);
  EXPECT_EQ(records[1].selected_devices, std::vector<int>{0});
  EXPECT_EQ(records[1].epochs_drawn.at(0), 1);
  EXPECT_FALSE(records[1].bound_value.has_value());
  EXPECT_FALSE(records[1].alphas.has_value());
}

TEST(RunEngine, FedavgMatchesHandWrittenLoop) {
  // Re-run the fedavg round structure with the same primitives by hand and
  // demand identical losses, checking selection keys and update wiring.
  FederatedDataset data = small_fleet(5, 30, 6);
  RunConfig cfg = base_config(Scheme::fedavg);
  cfg.rounds = 3;
  cfg.devices_per_round = 2;

  const auto records = fedctx::run(cfg, data);

  SoftmaxModel model = SoftmaxModel::zeros(3, 6);
  for (int t = 0; t < cfg.rounds; ++t) {
    auto select_gen =
        fedctx::rng::make_engine(cfg.seed, fedctx::rng::Stream::device_selection, t);
    const auto selected = fedctx::rng::sample_without_replacement(
        data.num_devices(), cfg.devices_per_round, select_gen);
    EXPECT_EQ(records[std::size_t(t) + 1].selected_devices, selected);

    Vector sum = Vector::Zero(model.dim());
    for (int id : selected) {
      auto epoch_gen =
          fedctx::rng::make_engine(cfg.seed, fedctx::rng::Stream::epoch_draws, t, id);
      fedctx::LocalConfig lc{cfg.local.learning_rate, cfg.local.batch_size, 0.0,
                             fedctx::draw_epochs(cfg.local.min_epochs,
                                                 cfg.local.max_epochs, epoch_gen)};
      const auto up = fedctx::local_update(
          model.params, data.devices[std::size_t(id)], lc,
          fedctx::rng::derive_seed(cfg.seed, fedctx::rng::Stream::data_shuffle, t, id));
      sum += up.delta;
    }
    model.params += sum / double(selected.size());
    EXPECT_EQ(records[std::size_t(t) + 1].train_loss,
              fedctx::detail::federated_loss(model, data));
  }
}

TEST(RunEngine, RerunIsDeterministic) {
  FederatedDataset data = small_fleet(6, 25, 7);
  RunConfig cfg = base_config(Scheme::fedavg_contextual);
  cfg.k2 = 4;
  expect_same_records(fedctx::run(cfg, data), fedctx::run(cfg, data));

  RunConfig other = cfg;
  other.seed = cfg.seed + 1;
  const auto changed = fedctx::run(other, data);
  const auto baseline = fedctx::run(cfg, data);
  bool any_difference = false;
  for (std::size_t i = 1; i < baseline.size(); ++i)
    any_difference = any_difference ||
                     baseline[i].selected_devices != changed[i].selected_devices ||
                     baseline[i].train_loss != changed[i].train_loss;
  EXPECT_TRUE(any_difference);
}

TEST(RunEngine, SelectionAndEpochsIndependentOfSchemeAndEstimator) {
  // Device selection and epoch draws run on their own seed streams, so
  // changing the scheme or the estimator budget must not disturb them.
  FederatedDataset data = small_fleet(6, 25, 8);

  RunConfig fedavg_cfg = base_config(Scheme::fedavg);
  RunConfig ctx_cfg = base_config(Scheme::fedavg_contextual);
  ctx_cfg.k2 = 5;
  RunConfig prox_cfg = base_config(Scheme::fedprox);
  prox_cfg.local.proximal_mu = 0.1;
  RunConfig folb_cfg = base_config(Scheme::folb);
  folb_cfg.k2 = 2;

  const auto a = fedctx::run(fedavg_cfg, data);
  const auto b = fedctx::run(ctx_cfg, data);
  const auto c = fedctx::run(prox_cfg, data);
  const auto d = fedctx::run(folb_cfg, data);
  RunConfig ctx_reuse = ctx_cfg;
  ctx_reuse.k2 = 0;
  const auto e = fedctx::run(ctx_reuse, data);

  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].selected_devices, b[i].selected_devices);
    EXPECT_EQ(a[i].selected_devices, c[i].selected_devices);
    EXPECT_EQ(a[i].selected_devices, d[i].selected_devices);
    EXPECT_EQ(a[i].selected_devices, e[i].selected_devices);
    EXPECT_EQ(a[i].epochs_drawn, b[i].epochs_drawn);
    EXPECT_EQ(a[i].epochs_drawn, c[i].epochs_drawn);
    EXPECT_EQ(a[i].epochs_drawn, d[i].epochs_drawn);
    EXPECT_EQ(a[i].epochs_drawn, e[i].epochs_drawn);
  }
}

TEST(RunEngine, IdenticalDevicesShareTheWeight) {
  // Four devices holding the same shard produce near-duplicate updates; the
  // min-norm solve then spreads the weight evenly instead of picking one.
  LabeledDataset shard;
  shard.features = Matrix(30, 6);
  std::mt19937_64 gen(9);
  std::normal_distribution<double> unit;
  for (Eigen::Index i = 0; i < 30; ++i) {
    for (Eigen::Index j = 0; j < 6; ++j) shard.features(i, j) = unit(gen);
    shard.labels.push_back(int(i) % 3);
  }
  FederatedDataset data;
  for (int k = 0; k < 4; ++k) data.devices.push_back(shard);
  data.test = shard;
  data.device_weights = fedctx::compute_device_weights(data.devices);

  RunConfig cfg = base_config(Scheme::fedavg_contextual);
  cfg.rounds = 1;
  cfg.devices_per_round = 4;
  cfg.k2 = 0;
  cfg.local.batch_size = int(shard.size());
  cfg.local.min_epochs = 1;
  cfg.local.max_epochs = 1;

  const auto records = fedctx::run(cfg, data);
  ASSERT_TRUE(records.back().alphas.has_value());
  const auto& alphas = *records.back().alphas;
  ASSERT_EQ(alphas.size(), 4u);
  double lo = alphas.begin()->second, hi = alphas.begin()->second;
  for (const auto& [id, a] : alphas) {
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  EXPECT_LT(hi - lo, 1e-6 * (1.0 + std::abs(hi)));
}

TEST(RunEngine, EvalEveryControlsRecording) {
  FederatedDataset data = small_fleet(4, 20, 10);
  RunConfig cfg = base_config(Scheme::fedavg);
  cfg.rounds = 10;
  cfg.devices_per_round = 2;
  cfg.eval_every = 4;
  const auto records = fedctx::run(cfg, data);
  std::vector<int> rounds;
  for (const auto& r : records) rounds.push_back(r.round);
  EXPECT_EQ(rounds, (std::vector<int>{0, 4, 8, 10}));
}

TEST(RunEngine, ExpectedSchemeRunsThePoolEachRound) {
  FederatedDataset data = small_fleet(6, 20, 11);
  RunConfig cfg = base_config(Scheme::contextual_expected);
  cfg.rounds = 2;
  cfg.devices_per_round = 2;  // the budget in the expectation factors
  cfg.pool_size = 4;
  const auto records = fedctx::run(cfg, data);
  for (std::size_t i = 1; i < records.size(); ++i) {
    EXPECT_EQ(records[i].selected_devices.size(), 4u);
    ASSERT_TRUE(records[i].alphas.has_value());
    EXPECT_EQ(records[i].alphas->size(), 4u);
    EXPECT_TRUE(records[i].bound_value.has_value());
  }

  cfg.pool_size = 0;  // whole fleet
  const auto full = fedctx::run(cfg, data);
  EXPECT_EQ(full.back().selected_devices.size(), 6u);
}

TEST(RunEngine, FolbReportsAlphasWithoutDiagnostics) {
  FederatedDataset data = small_fleet(5, 20, 12);
  RunConfig cfg = base_config(Scheme::folb);
  cfg.rounds = 2;
  const auto records = fedctx::run(cfg, data);
  ASSERT_TRUE(records.back().alphas.has_value());
  EXPECT_EQ(records.back().alphas->size(), 3u);
  EXPECT_FALSE(records.back().bound_value.has_value());
}

TEST(RunEngine, FailureInsideARoundCarriesTheRoundIndex) {
  FederatedDataset data = small_fleet(3, 50, 13);
  RunConfig cfg = base_config(Scheme::fedprox);
  cfg.rounds = 3;
  cfg.devices_per_round = 1;
  cfg.local.learning_rate = 1.0;
  cfg.local.proximal_mu = 10.0;
  cfg.local.batch_size = 1;
  cfg.local.min_epochs = 10;
  cfg.local.max_epochs = 10;
  try {
    fedctx::run(cfg, data);
    FAIL() << "expected RunError";
  } catch (const RunError& e) {
    EXPECT_EQ(e.round, 0);
    EXPECT_NE(std::string(e.what()).find("round 0"), std::string::npos);
  }
}

TEST(RunEngine, RejectsInvalidConfigsAndData) {
  FederatedDataset data = small_fleet(3, 20, 14);
  RunConfig cfg = base_config(Scheme::fedavg);
  cfg.devices_per_round = 9;
  EXPECT_THROW(fedctx::run(cfg, data), InvalidInput);

  FederatedDataset no_test = data;
  no_test.test = LabeledDataset{};
  EXPECT_THROW(fedctx::run(base_config(Scheme::fedavg), no_test), InvalidInput);

  FederatedDataset bad_weights = data;
  bad_weights.device_weights[0] += 0.5;
  EXPECT_THROW(fedctx::run(base_config(Scheme::fedavg), bad_weights), InvalidInput);
}

TEST(ValidateRunConfig, FlagsEachViolation) {
  auto has = [](const std::vector<std::string>& problems, const char* text) {
    for (const auto& p : problems)
      if (p.find(text) != std::string::npos) return true;
    return false;
  };

  EXPECT_TRUE(fedctx::validate_run_config(base_config(Scheme::fedavg), 10).empty());

  RunConfig cfg = base_config(Scheme::fedavg);
  cfg.rounds = 0;
  cfg.devices_per_round = 30;
  cfg.k2 = -1;
  cfg.eval_every = 0;
  cfg.local.learning_rate = 0.0;
  cfg.local.batch_size = 0;
  cfg.local.proximal_mu = -1.0;
  cfg.local.min_epochs = 5;
  cfg.local.max_epochs = 2;
  cfg.beta_override = 0.0;
  const auto problems = fedctx::validate_run_config(cfg, 10);
  EXPECT_TRUE(has(problems, "rounds must be >= 1"));
  EXPECT_TRUE(has(problems, "devices_per_round (30) exceeds"));
  EXPECT_TRUE(has(problems, "k2 must be between"));
  EXPECT_TRUE(has(problems, "eval_every must be >= 1"));
  EXPECT_TRUE(has(problems, "learning_rate must be > 0"));
  EXPECT_TRUE(has(problems, "batch_size must be >= 1"));
  EXPECT_TRUE(has(problems, "proximal_mu must be >= 0"));
  EXPECT_TRUE(has(problems, "min_epochs <= max_epochs"));
  EXPECT_TRUE(has(problems, "beta override must be > 0"));

  RunConfig mu_on_avg = base_config(Scheme::fedavg);
  mu_on_avg.local.proximal_mu = 0.5;
  EXPECT_TRUE(has(fedctx::validate_run_config(mu_on_avg, 10),
                  "proximal_mu must be 0 for scheme fedavg"));

  RunConfig prox_without_mu = base_config(Scheme::fedprox);
  EXPECT_TRUE(has(fedctx::validate_run_config(prox_without_mu, 10),
                  "proximal_mu must be > 0 for scheme fedprox"));

  RunConfig pool_on_avg = base_config(Scheme::fedavg);
  pool_on_avg.pool_size = 5;
  EXPECT_TRUE(has(fedctx::validate_run_config(pool_on_avg, 10),
                  "pool_size only applies"));

  RunConfig tight_pool = base_config(Scheme::contextual_expected);
  tight_pool.devices_per_round = 4;
  tight_pool.pool_size = 3;
  EXPECT_TRUE(has(fedctx::validate_run_config(tight_pool, 10),
                  "pool_size must lie between"));
  RunConfig tiny_budget = base_config(Scheme::contextual_expected);
  tiny_budget.devices_per_round = 1;
  EXPECT_TRUE(has(fedctx::validate_run_config(tiny_budget, 10),
                  "devices_per_round >= 2"));
}

TEST(Smoothness, CertifiedBoundUsesTheLargestSample) {
  FederatedDataset data;
  LabeledDataset a, b;
  a.features = Matrix::Zero(2, 3);
  a.features(0, 0) = 2.0;  // squared norm 4
  a.labels = {0, 1};
  b.features = Matrix::Zero(1, 3);
  b.features(0, 1) = 3.0;  // squared norm 9
  b.labels = {1};
  data.devices = {a, b};
  data.test = a;
  data.device_weights = fedctx::compute_device_weights(data.devices);
  EXPECT_DOUBLE_EQ(fedctx::certified_smoothness(data), (9.0 + 1.0) / 2.0);
  EXPECT_THROW(fedctx::certified_smoothness(FederatedDataset{}), InvalidInput);

  RunConfig cfg;
  cfg.local.learning_rate = 0.05;
  EXPECT_DOUBLE_EQ(fedctx::smoothness_beta(cfg), 20.0);
  cfg.beta_override = 3.5;
  EXPECT_DOUBLE_EQ(fedctx::smoothness_beta(cfg), 3.5);
}

TEST(RoundsToAccuracy, FirstRecordReachingTheLevel) {
  std::vector<RoundRecord> records{record_with(0, 1.0, 0.4), record_with(1, 0.9, 0.55),
                                   record_with(2, 0.8, 0.5), record_with(3, 0.7, 0.7)};
  EXPECT_EQ(fedctx::rounds_to_accuracy(records, 0.5).value_or(-1), 1);
  EXPECT_EQ(fedctx::rounds_to_accuracy(records, 0.6).value_or(-1), 3);
  EXPECT_FALSE(fedctx::rounds_to_accuracy(records, 0.9).has_value());
  EXPECT_THROW(fedctx::rounds_to_accuracy({}, 0.5), InvalidInput);
}

TEST(VerifyDescent, CertifiedContextualRunDescendsEveryRound) {
  // Equal device sizes make the uniform gradient estimate exact, and beta at
  // the certified bound makes the per-round decrease guarantee binding.
  FederatedDataset data = small_fleet(5, 30, 15);
  RunConfig cfg = base_config(Scheme::fedavg_contextual);
  cfg.rounds = 15;
  cfg.devices_per_round = 3;
  cfg.k2 = 5;
  cfg.beta_override = fedctx::certified_smoothness(data);
  cfg.local.min_epochs = 1;
  cfg.local.max_epochs = 4;

  const auto records = fedctx::run(cfg, data);
  const auto checks = fedctx::verify_descent(records, data, cfg);
  ASSERT_EQ(checks.size(), 15u);
  for (const auto& c : checks) {
    EXPECT_TRUE(c.holds) << "round " << c.round << " lhs " << c.lhs << " rhs "
                         << c.rhs;
    EXPECT_GE(c.rhs, 0.0);
  }
}

TEST(VerifyDescent, ReportsViolationsAndSkipsGaps) {
  FederatedDataset data = small_fleet(2, 10, 16);
  RunConfig cfg = base_config(Scheme::fedavg);
  cfg.beta_override = 1e6;  // above any certified bound for this tiny fleet

  std::vector<RoundRecord> records{record_with(0, 1.0, 0.0),
                                   record_with(1, 0.99, 0.0, 1.0)};
  const auto checks = fedctx::verify_descent(records, data, cfg);
  ASSERT_EQ(checks.size(), 1u);
  EXPECT_EQ(checks[0].round, 1);
  EXPECT_NEAR(checks[0].lhs, 0.01, 1e-12);
  EXPECT_NEAR(checks[0].rhs, 5e5, 1e-6);
  EXPECT_FALSE(checks[0].holds);

  std::vector<RoundRecord> gapped{record_with(0, 1.0, 0.0),
                                  record_with(2, 0.5, 0.0, 0.1)};
  EXPECT_TRUE(fedctx::verify_descent(gapped, data, cfg).empty());
}
