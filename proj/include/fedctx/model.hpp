#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "fedctx/linalg.hpp"

namespace fedctx {

// Feature rows paired with integer class labels.
struct LabeledDataset {
  Matrix features;          // samples x features
  std::vector<int> labels;  // one class id per feature row

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index num_features() const { return features.cols(); }
};

// Multinomial logistic regression. Parameters live in one flat vector laid
// out row-major as num_classes blocks of (num_features weights, 1 bias).
struct SoftmaxModel {
  int num_classes = 0;
  int num_features = 0;
  Vector params;

  Eigen::Index dim() const {
    return Eigen::Index(num_classes) * (num_features + 1);
  }

  static SoftmaxModel zeros(int num_classes, int num_features) {
    SoftmaxModel m{num_classes, num_features, Vector()};
    m.params = Vector::Zero(m.dim());
    return m;
  }
};

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMajor> weight_view(const SoftmaxModel& m) {
  return {m.params.data(), m.num_classes, m.num_features + 1};
}

inline void check_model(const SoftmaxModel& m) {
  if (m.num_classes < 2) throw InvalidInput("model: need at least 2 classes");
  if (m.num_features < 1) throw InvalidInput("model: need at least 1 feature");
  if (m.params.size() != m.dim())
    throw InvalidInput("model: params size does not match num_classes*(num_features+1)");
  if (!m.params.allFinite()) throw InvalidInput("model: non-finite parameters");
}

inline void check_pair(const SoftmaxModel& m, const LabeledDataset& data) {
  check_model(m);
  if (data.size() == 0) throw InvalidInput("model: empty dataset");
  if (Eigen::Index(data.labels.size()) != data.size())
    throw InvalidInput("dataset: label count does not match sample count");
  if (data.features.cols() != m.num_features)
    throw InvalidInput("model: feature dimension mismatch");
  if (!data.features.allFinite()) throw InvalidInput("dataset: non-finite features");
  for (int y : data.labels)
    if (y < 0 || y >= m.num_classes) throw InvalidInput("dataset: label out of range");
}

// Logits X W^T + 1 b^T, one row per sample.
inline Matrix logits(const SoftmaxModel& m, const Matrix& x) {
  auto w = weight_view(m);
  Matrix z = x * w.leftCols(m.num_features).transpose();
  z.rowwise() += w.col(m.num_features).transpose();
  return z;
}

}  // namespace detail

// Mean cross-entropy over the dataset. Logits are max-shifted per row before
// exponentiation so large parameters cannot overflow.
inline double loss(const SoftmaxModel& m, const LabeledDataset& data) {
  detail::check_pair(m, data);
  const Matrix z = detail::logits(m, data.features);
  const Vector row_max = z.rowwise().maxCoeff();
  const Eigen::ArrayXd lse =
      (z.colwise() - row_max).array().exp().rowwise().sum().log();
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i)
    total += lse(i) - (z(i, data.labels[i]) - row_max(i));
  return total / double(data.size());
}

// Gradient of `loss` with respect to the flat parameter vector:
// (P - Y)^T [X | 1] / samples, flattened in the model's layout.
inline Vector gradient(const SoftmaxModel& m, const LabeledDataset& data) {
  detail::check_pair(m, data);
  const Eigen::Index n = data.size();
  Matrix p = detail::logits(m, data.features);
  const Vector row_max = p.rowwise().maxCoeff();
  p = (p.colwise() - row_max).array().exp();
  const Vector row_sum = p.rowwise().sum();
  p.array().colwise() /= row_sum.array();
  for (Eigen::Index i = 0; i < n; ++i) p(i, data.labels[i]) -= 1.0;
  p /= double(n);

  Vector g(m.dim());
  Eigen::Map<detail::RowMajor> blocks(g.data(), m.num_classes, m.num_features + 1);
  blocks.leftCols(m.num_features) = p.transpose() * data.features;
  blocks.col(m.num_features) = p.colwise().sum();
  return g;
}

// Fraction of samples whose argmax logit matches the label. Ties go to the
// lowest class id.
inline double accuracy(const SoftmaxModel& m, const LabeledDataset& data) {
  detail::check_pair(m, data);
  const Matrix z = detail::logits(m, data.features);
  long correct = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    int best = 0;
    for (int c = 1; c < m.num_classes; ++c)
      if (z(i, c) > z(i, best)) best = c;
    if (best == data.labels[i]) ++correct;
  }
  return double(correct) / double(data.size());
}

// Copy of the selected rows.
inline LabeledDataset subset(const LabeledDataset& data, std::span<const int> rows) {
  LabeledDataset out;
  out.features.resize(Eigen::Index(rows.size()), data.features.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= data.size())
      throw InvalidInput("subset: row index out of range");
    out.features.row(Eigen::Index(i)) = data.features.row(rows[i]);
    out.labels[i] = data.labels[rows[i]];
  }
  return out;
}

// Certified upper bound on the gradient-Lipschitz constant of `loss`:
// (max_i ||x_i||^2 + 1) / 2, the +1 covering the implicit bias input.
inline double softmax_smoothness_bound(const LabeledDataset& data) {
  if (data.size() == 0)
    throw InvalidInput("softmax_smoothness_bound: empty dataset");
  return (data.features.rowwise().squaredNorm().maxCoeff() + 1.0) / 2.0;
}

}  // namespace fedctx
