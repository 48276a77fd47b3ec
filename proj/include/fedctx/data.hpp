#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fedctx/csv.hpp"
#include "fedctx/model.hpp"
#include "fedctx/rng.hpp"

namespace fedctx {

// Per-device training shards plus a shared held-out test set. device_weights
// holds p_k = |D_k| / sum_j |D_j| over the training shards.
struct FederatedDataset {
  std::vector<LabeledDataset> devices;
  LabeledDataset test;
  std::vector<double> device_weights;

  int num_devices() const { return int(devices.size()); }

  Eigen::Index num_features() const {
    return devices.empty() ? test.num_features() : devices.front().num_features();
  }
};

inline std::vector<double> compute_device_weights(const std::vector<LabeledDataset>& devices) {
  double total = 0.0;
  for (const auto& d : devices) total += double(d.size());
  if (total <= 0.0) throw InvalidInput("device weights: no training samples");
  std::vector<double> w(devices.size());
  for (std::size_t k = 0; k < devices.size(); ++k)
    w[k] = double(devices[k].size()) / total;
  return w;
}

// Smallest class count covering every label present.
inline int infer_num_classes(const FederatedDataset& data) {
  int max_label = -1;
  auto scan = [&](const LabeledDataset& d) {
    for (int y : d.labels) max_label = std::max(max_label, y);
  };
  for (const auto& d : data.devices) scan(d);
  scan(data.test);
  if (max_label < 0) throw InvalidInput("infer_num_classes: no labels present");
  return max_label + 1;
}

// Generator knobs. alpha scales how far per-device ground-truth models drift
// apart, beta does the same for per-device feature means; iid replaces both
// with a single shared draw. Sample counts come from a clamped log-normal.
struct SyntheticSpec {
  double alpha = 0.0;
  double beta = 0.0;
  bool iid = false;
  int num_devices = 100;
  int num_features = 10;
  int num_classes = 5;
  double sample_log_mean = 4.5;
  double sample_log_sigma = 0.8;
  int min_samples = 50;
  int max_samples = 400;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_synthetic_spec(const SyntheticSpec& s) {
  if (s.num_devices < 1) throw InvalidInput("synthetic: num_devices must be >= 1");
  if (s.num_features < 1) throw InvalidInput("synthetic: num_features must be >= 1");
  if (s.num_classes < 2) throw InvalidInput("synthetic: num_classes must be >= 2");
  if (s.alpha < 0.0 || s.beta < 0.0)
    throw InvalidInput("synthetic: alpha and beta must be >= 0");
  if (s.sample_log_sigma < 0.0)
    throw InvalidInput("synthetic: sample_log_sigma must be >= 0");
  if (s.min_samples < 1 || s.min_samples > s.max_samples)
    throw InvalidInput("synthetic: need 1 <= min_samples <= max_samples");
  if (!(s.train_fraction > 0.0) || s.train_fraction > 1.0)
    throw InvalidInput("synthetic: train_fraction must be in (0, 1]");
}

}  // namespace detail

// Draws per-device datasets from device-specific softmax ground truths.
// Feature coordinate j has standard deviation (j+1)^-0.6, so early
// coordinates dominate. Labels are the ground-truth argmax, which keeps the
// task realizable per device but conflicting across devices when alpha > 0.
inline FederatedDataset generate_synthetic(const SyntheticSpec& spec) {
  detail::check_synthetic_spec(spec);
  const int n_dev = spec.num_devices;
  const int d = spec.num_features;
  const int c = spec.num_classes;

  std::mt19937_64 gen = rng::make_engine(spec.seed, rng::Stream::synthetic);
  std::normal_distribution<double> unit;
  std::lognormal_distribution<double> size_dist(spec.sample_log_mean, spec.sample_log_sigma);

  std::vector<int> counts(n_dev);
  for (auto& n : counts) {
    const long long raw = std::llround(size_dist(gen));
    n = int(std::clamp<long long>(raw, spec.min_samples, spec.max_samples));
  }

  Vector feat_std(d);
  for (int j = 0; j < d; ++j) feat_std(j) = std::pow(double(j + 1), -0.6);

  auto draw_model = [&]() {
    const double u = spec.alpha * unit(gen);
    Matrix w(c, d + 1);
    for (int i = 0; i < c; ++i)
      for (int j = 0; j <= d; ++j) w(i, j) = u + unit(gen);
    return w;
  };
  auto draw_mean = [&]() {
    const double b = spec.beta * unit(gen);
    Vector v(d);
    for (int j = 0; j < d; ++j) v(j) = b + unit(gen);
    return v;
  };

  std::vector<Matrix> truth;
  std::vector<Vector> mean;
  if (spec.iid) {
    truth.assign(n_dev, draw_model());
    mean.assign(n_dev, draw_mean());
  } else {
    for (int k = 0; k < n_dev; ++k) {
      truth.push_back(draw_model());
      mean.push_back(draw_mean());
    }
  }

  FederatedDataset fed;
  std::vector<Vector> test_rows;
  std::vector<int> test_labels;
  for (int k = 0; k < n_dev; ++k) {
    const int n_k = counts[k];
    Matrix x(n_k, d);
    std::vector<int> y(n_k);
    for (int i = 0; i < n_k; ++i) {
      for (int j = 0; j < d; ++j) x(i, j) = mean[k](j) + feat_std(j) * unit(gen);
      const Vector z =
          truth[k].leftCols(d) * x.row(i).transpose() + truth[k].col(d);
      int best = 0;
      for (int cls = 1; cls < c; ++cls)
        if (z(cls) > z(best)) best = cls;
      y[i] = best;
    }
    const int n_train =
        std::clamp(int(std::llround(std::ceil(spec.train_fraction * n_k))), 1, n_k);
    LabeledDataset dev;
    dev.features = x.topRows(n_train);
    dev.labels.assign(y.begin(), y.begin() + n_train);
    fed.devices.push_back(std::move(dev));
    for (int i = n_train; i < n_k; ++i) {
      test_rows.push_back(x.row(i).transpose());
      test_labels.push_back(y[i]);
    }
  }

  fed.test.features.resize(Eigen::Index(test_rows.size()), d);
  for (std::size_t i = 0; i < test_rows.size(); ++i)
    fed.test.features.row(Eigen::Index(i)) = test_rows[i].transpose();
  fed.test.labels = std::move(test_labels);
  fed.device_weights = compute_device_weights(fed.devices);
  return fed;
}

// Label-sorted shard partition: samples are ordered by label, cut into
// num_devices * shards_per_device contiguous shards, and the shards are
// dealt out shuffled. Each device ends up with at most shards_per_device
// distinct label runs, the classic pathological non-iid split. The returned
// test set is empty; callers supply their own.
inline FederatedDataset partition(const LabeledDataset& data, int num_devices,
                                  int shards_per_device, std::uint64_t seed) {
  if (num_devices < 1) throw InvalidInput("partition: num_devices must be >= 1");
  if (shards_per_device < 1)
    throw InvalidInput("partition: shards_per_device must be >= 1");
  const long total_shards = long(num_devices) * shards_per_device;
  if (data.size() < total_shards)
    throw InvalidInput("partition: dataset has " + std::to_string(data.size()) +
                       " samples, fewer than " + std::to_string(total_shards) +
                       " shards");
  if (Eigen::Index(data.labels.size()) != data.size())
    throw InvalidInput("partition: label count does not match sample count");

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return data.labels[a] < data.labels[b]; });

  std::vector<long> shard_ids(total_shards);
  std::iota(shard_ids.begin(), shard_ids.end(), 0L);
  std::mt19937_64 gen = rng::make_engine(seed, rng::Stream::partition);
  std::shuffle(shard_ids.begin(), shard_ids.end(), gen);

  const long m = long(data.size());
  auto shard_begin = [&](long s) { return Eigen::Index(s * m / total_shards); };

  FederatedDataset fed;
  for (int k = 0; k < num_devices; ++k) {
    std::vector<int> rows;
    for (int s = 0; s < shards_per_device; ++s) {
      const long shard = shard_ids[std::size_t(k) * shards_per_device + s];
      for (Eigen::Index i = shard_begin(shard); i < shard_begin(shard + 1); ++i)
        rows.push_back(order[i]);
    }
    fed.devices.push_back(subset(data, rows));
  }
  fed.device_weights = compute_device_weights(fed.devices);
  return fed;
}

namespace detail {

inline void write_table(const std::filesystem::path& path, const LabeledDataset& data) {
  std::ofstream out(path);
  if (!out) throw ParseError(path.string() + ": cannot open for writing");
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    out << data.labels[i];
    for (Eigen::Index j = 0; j < data.features.cols(); ++j)
      out << ',' << csv::format_double(data.features(i, j));
    out << '\n';
  }
}

inline LabeledDataset read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  int line_no = 0;
  Eigen::Index width = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string context = path.string() + ":" + std::to_string(line_no);
    const auto fields = csv::split(line);
    if (fields.size() < 2) throw ParseError(context + ": expected label and features");
    if (width < 0)
      width = Eigen::Index(fields.size()) - 1;
    else if (Eigen::Index(fields.size()) - 1 != width)
      throw ParseError(context + ": row has " + std::to_string(fields.size() - 1) +
                       " features, expected " + std::to_string(width));
    const long label = csv::parse_long(fields[0], context);
    if (label < 0) throw ParseError(context + ": negative label");
    labels.push_back(int(label));
    std::vector<double> row(static_cast<std::size_t>(width));
    for (Eigen::Index j = 0; j < width; ++j)
      row[std::size_t(j)] = csv::parse_double(fields[std::size_t(j) + 1], context);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path.string() + ": empty table");
  LabeledDataset data;
  data.features.resize(Eigen::Index(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Eigen::Index j = 0; j < width; ++j)
      data.features(Eigen::Index(i), j) = rows[i][std::size_t(j)];
  data.labels = std::move(labels);
  return data;
}

}  // namespace detail

// Writes device_<k>.csv per device plus test.csv, label first, no header.
inline void save_csv_dataset(const FederatedDataset& fed, const std::string& dir) {
  if (fed.devices.empty()) throw InvalidInput("save_csv_dataset: no devices");
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int k = 0; k < fed.num_devices(); ++k)
    detail::write_table(fs::path(dir) / ("device_" + std::to_string(k) + ".csv"),
                        fed.devices[std::size_t(k)]);
  detail::write_table(fs::path(dir) / "test.csv", fed.test);
}

// Loads a directory written by save_csv_dataset: consecutive device_<k>.csv
// files starting at k = 0, plus test.csv.
inline FederatedDataset load_csv_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ParseError(dir + ": not a directory");
  FederatedDataset fed;
  for (int k = 0;; ++k) {
    const fs::path p = fs::path(dir) / ("device_" + std::to_string(k) + ".csv");
    if (!fs::exists(p)) break;
    fed.devices.push_back(detail::read_table(p));
  }
  if (fed.devices.empty())
    throw ParseError(dir + ": no device_<k>.csv files found");
  fed.test = detail::read_table(fs::path(dir) / "test.csv");
  const Eigen::Index d = fed.devices.front().num_features();
  for (const auto& dev : fed.devices)
    if (dev.num_features() != d)
      throw ParseError(dir + ": devices disagree on feature count");
  if (fed.test.num_features() != d)
    throw ParseError(dir + ": test.csv feature count differs from devices");
  fed.device_weights = compute_device_weights(fed.devices);
  return fed;
}

}  // namespace fedctx
