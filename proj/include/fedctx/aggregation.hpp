#pragma once

#include <iostream>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "fedctx/data.hpp"
#include "fedctx/device.hpp"
#include "fedctx/linalg.hpp"

namespace fedctx {

// Smoothness constant of the global objective used by the contextual solves,
// plus the dimension cap above which the explicit nullspace system is
// replaced by the equivalent K x K normal equations.
struct SmoothnessConfig {
  double beta = 1.0;
  int direct_solve_max_dim = 2000;
};

// Global-gradient estimate plus which devices produced it.
struct GradientEstimate {
  Vector vector;
  int k2_used = 0;
  std::vector<int> source_devices;
};

// Aggregation result. bound_value is the surrogate descent objective at the
// chosen weights (negative means guaranteed loss decrease under the assumed
// smoothness), stationarity_residual the max violation of the optimality
// system, matrix_rank the numerical rank of the stacked updates. Schemes
// without an optimality system leave the diagnostics empty.
struct AggregationWeights {
  std::map<int, double> alphas;
  Vector combined_delta;
  std::optional<double> bound_value;
  std::optional<double> stationarity_residual;
  std::optional<int> matrix_rank;
};

namespace detail {

inline Matrix stack_updates(const std::vector<DeviceUpdate>& updates,
                            Eigen::Index dim) {
  Matrix g(Eigen::Index(updates.size()), dim);
  for (std::size_t k = 0; k < updates.size(); ++k) {
    if (updates[k].delta.size() != dim)
      throw InvalidInput("aggregation: update dimension mismatch");
    if (!updates[k].delta.allFinite())
      throw InvalidInput("aggregation: non-finite update delta");
    g.row(Eigen::Index(k)) = updates[k].delta.transpose();
  }
  return g;
}

inline std::map<int, double> alpha_map(const std::vector<DeviceUpdate>& updates,
                                       const Vector& alpha) {
  std::map<int, double> out;
  for (std::size_t k = 0; k < updates.size(); ++k)
    out[updates[k].device_id] = alpha(Eigen::Index(k));
  return out;
}

// Solves the stationarity system grad_coeff * g + beta_coeff * G^T alpha
// in null(G): stack [beta_coeff G^T | -B^T] against -grad_coeff * g, where
// B's rows span null(G). The system is consistent by construction (row
// space plus nullspace cover everything), so least squares returns an exact
// stationary point; the min-norm convention zeroes alphas of zero updates
// and splits duplicates evenly. Past the dimension cap the K x K normal
// equations beta_coeff (G G^T) alpha = -grad_coeff G g give the same
// combined update at a fraction of the cost.
inline std::pair<Vector, int> solve_alpha(const Matrix& g_mat, const Vector& grad,
                                          double grad_coeff, double beta_coeff,
                                          int max_direct_dim) {
  const Eigen::Index k = g_mat.rows();
  const Eigen::Index n = g_mat.cols();
  if (n <= Eigen::Index(max_direct_dim)) {
    const Matrix basis = linalg::nullspace_basis(g_mat);
    const int rank = int(n - basis.rows());
    Matrix sys(n, k + basis.rows());
    sys.leftCols(k) = beta_coeff * g_mat.transpose();
    sys.rightCols(basis.rows()) = -basis.transpose();
    const Vector sol = linalg::lstsq_min_norm(sys, (-grad_coeff) * grad);
    return {sol.head(k), rank};
  }

  static bool notified = false;
  if (!notified) {
    std::clog << "aggregation: parameter dimension " << n
              << " exceeds direct_solve_max_dim, using normal equations\n";
    notified = true;
  }
  const Matrix gram = g_mat * g_mat.transpose();
  const Vector alpha =
      linalg::lstsq_min_norm(beta_coeff * gram, (-grad_coeff) * (g_mat * grad));
  return {alpha, int(linalg::numerical_rank(gram))};
}

inline void check_gradient(const GradientEstimate& grad) {
  if (grad.vector.size() == 0)
    throw InvalidInput("aggregation: empty gradient estimate");
  if (!grad.vector.allFinite())
    throw InvalidInput("aggregation: non-finite gradient estimate");
}

}  // namespace detail

// Plain averaging of update deltas, uniform or sample-count weighted.
inline Vector average(const std::vector<DeviceUpdate>& updates, bool weighted) {
  if (updates.empty()) throw InvalidInput("average: no updates");
  const Eigen::Index dim = updates.front().delta.size();
  Vector sum = Vector::Zero(dim);
  if (!weighted) {
    for (const auto& u : updates) {
      if (u.delta.size() != dim) throw InvalidInput("average: update dimension mismatch");
      sum += u.delta;
    }
    return sum / double(updates.size());
  }
  long total = 0;
  for (const auto& u : updates) {
    if (u.delta.size() != dim) throw InvalidInput("average: update dimension mismatch");
    if (u.num_samples <= 0) throw InvalidInput("average: update without samples");
    total += u.num_samples;
  }
  for (const auto& u : updates) sum += (double(u.num_samples) / double(total)) * u.delta;
  return sum;
}

// Uniform average of local gradients at the current parameters over k2
// devices sampled without replacement, the estimator standing in for the
// true global gradient. k2 = 0 reuses the devices already active this round
// instead of consuming fresh randomness.
inline GradientEstimate estimate_global_gradient(const Vector& model_params,
                                                 const FederatedDataset& data,
                                                 int k2,
                                                 const std::vector<int>& round_devices,
                                                 std::mt19937_64& gen) {
  const int n_dev = data.num_devices();
  if (n_dev == 0) throw InvalidInput("estimate_global_gradient: no devices");
  if (k2 < 0 || k2 > n_dev)
    throw InvalidInput("estimate_global_gradient: need 0 <= k2 <= num_devices");
  const int d = int(data.num_features());
  if (model_params.size() % (d + 1) != 0)
    throw InvalidInput("estimate_global_gradient: params size not divisible by num_features+1");

  GradientEstimate est;
  est.k2_used = k2;
  est.source_devices =
      k2 == 0 ? round_devices : rng::sample_without_replacement(n_dev, k2, gen);
  if (est.source_devices.empty())
    throw InvalidInput("estimate_global_gradient: no source devices");

  SoftmaxModel model{int(model_params.size() / (d + 1)), d, model_params};
  est.vector = Vector::Zero(model_params.size());
  for (int k : est.source_devices) {
    if (k < 0 || k >= n_dev)
      throw InvalidInput("estimate_global_gradient: device id out of range");
    est.vector += gradient(model, data.devices[std::size_t(k)]);
  }
  est.vector /= double(est.source_devices.size());
  return est;
}

// Per-round weights minimizing the smoothness surrogate
// <grad, sum_k alpha_k delta_k> + (beta/2) ||sum_k alpha_k delta_k||^2.
// At the minimizer the gradient of the surrogate is orthogonal to every
// update, i.e. grad + beta * combined lies in the nullspace of the stacked
// update matrix; the solve pins exactly that condition. All-zero updates
// (every device drew zero epochs) short-circuit to a zero no-op.
inline AggregationWeights contextual_weights(const GradientEstimate& grad,
                                             const std::vector<DeviceUpdate>& updates,
                                             const SmoothnessConfig& cfg) {
  detail::check_gradient(grad);
  if (updates.empty()) throw InvalidInput("contextual_weights: no updates");
  if (!(cfg.beta > 0.0)) throw InvalidInput("contextual_weights: beta must be > 0");
  const Eigen::Index n = grad.vector.size();
  if (Eigen::Index(updates.size()) > n)
    throw InvalidInput("contextual_weights: more updates than parameter dimensions");
  const Matrix g_mat = detail::stack_updates(updates, n);

  AggregationWeights out;
  if (g_mat.isZero(0.0)) {
    out.alphas = detail::alpha_map(updates, Vector::Zero(g_mat.rows()));
    out.combined_delta = Vector::Zero(n);
    out.bound_value = 0.0;
    out.stationarity_residual = 0.0;
    out.matrix_rank = 0;
    return out;
  }

  auto [alpha, rank] =
      detail::solve_alpha(g_mat, grad.vector, 1.0, cfg.beta, cfg.direct_solve_max_dim);
  const Vector combined = g_mat.transpose() * alpha;
  if (!alpha.allFinite() || !combined.allFinite())
    throw AggregationError("contextual_weights: solver produced non-finite weights");

  out.alphas = detail::alpha_map(updates, alpha);
  out.combined_delta = combined;
  out.bound_value = grad.vector.dot(combined) + 0.5 * cfg.beta * combined.squaredNorm();
  out.stationarity_residual =
      (g_mat * (grad.vector + cfg.beta * combined)).cwiseAbs().maxCoeff();
  out.matrix_rank = rank;
  return out;
}

// Variant minimizing the expectation of the surrogate when only k of the
// pool_size pooled updates would be combined: the linear term picks up
// k/pool_size and the quadratic term k(k-1)/(pool_size(pool_size-1)).
// k = pool_size collapses to contextual_weights exactly; k = 1 zeroes the
// quadratic factor, leaving a linear objective with no minimizer.
inline AggregationWeights contextual_expected_weights(
    const GradientEstimate& grad, const std::vector<DeviceUpdate>& updates,
    const SmoothnessConfig& cfg, int k, int pool_size) {
  detail::check_gradient(grad);
  if (updates.empty()) throw InvalidInput("contextual_expected_weights: no updates");
  if (pool_size != int(updates.size()))
    throw InvalidInput("contextual_expected_weights: pool_size must equal the update count");
  if (k < 1 || k > pool_size)
    throw InvalidInput("contextual_expected_weights: need 1 <= k <= pool_size");
  if (k == 1)
    throw AggregationError(
        "contextual_expected_weights: k = 1 zeroes the quadratic factor, "
        "the expected objective has no minimizer");
  if (!(cfg.beta > 0.0))
    throw InvalidInput("contextual_expected_weights: beta must be > 0");
  const Eigen::Index n = grad.vector.size();
  if (Eigen::Index(updates.size()) > n)
    throw InvalidInput("contextual_expected_weights: more updates than parameter dimensions");
  const Matrix g_mat = detail::stack_updates(updates, n);

  const double c1 = double(k) / double(pool_size);
  const double c2 =
      (double(k) * (k - 1)) / (double(pool_size) * (pool_size - 1));

  AggregationWeights out;
  if (g_mat.isZero(0.0)) {
    out.alphas = detail::alpha_map(updates, Vector::Zero(g_mat.rows()));
    out.combined_delta = Vector::Zero(n);
    out.bound_value = 0.0;
    out.stationarity_residual = 0.0;
    out.matrix_rank = 0;
    return out;
  }

  auto [alpha, rank] = detail::solve_alpha(g_mat, grad.vector, c1, cfg.beta * c2,
                                           cfg.direct_solve_max_dim);
  const Vector combined = g_mat.transpose() * alpha;
  if (!alpha.allFinite() || !combined.allFinite())
    throw AggregationError("contextual_expected_weights: solver produced non-finite weights");

  out.alphas = detail::alpha_map(updates, alpha);
  out.combined_delta = combined;
  out.bound_value =
      c1 * grad.vector.dot(combined) + 0.5 * cfg.beta * c2 * combined.squaredNorm();
  out.stationarity_residual =
      (g_mat * (c1 * grad.vector + cfg.beta * c2 * combined)).cwiseAbs().maxCoeff();
  out.matrix_rank = rank;
  return out;
}

// Gradient-alignment weights: alpha_k proportional to <local gradient,
// global estimate>, normalized by the sum of magnitudes so opposing devices
// keep their sign. A degenerate all-zero alignment falls back to uniform.
inline AggregationWeights folb_weights(const GradientEstimate& grad,
                                       const std::vector<DeviceUpdate>& updates,
                                       const std::vector<Vector>& local_gradients) {
  detail::check_gradient(grad);
  if (updates.empty()) throw InvalidInput("folb_weights: no updates");
  if (local_gradients.size() != updates.size())
    throw InvalidInput("folb_weights: one local gradient per update required");
  const Eigen::Index n = grad.vector.size();
  const Matrix g_mat = detail::stack_updates(updates, n);

  Vector align(Eigen::Index(updates.size()));
  for (std::size_t k = 0; k < local_gradients.size(); ++k) {
    if (local_gradients[k].size() != n)
      throw InvalidInput("folb_weights: local gradient dimension mismatch");
    align(Eigen::Index(k)) = linalg::inner(local_gradients[k], grad.vector);
  }
  const double denom = align.cwiseAbs().sum();
  const Vector alpha = denom == 0.0
                           ? Vector::Constant(align.size(), 1.0 / double(align.size()))
                           : Vector(align / denom);

  AggregationWeights out;
  out.alphas = detail::alpha_map(updates, alpha);
  out.combined_delta = g_mat.transpose() * alpha;
  return out;
}

// Applies a round's combined update to the global parameters.
inline Vector apply(const Vector& global_params, const AggregationWeights& weights) {
  if (weights.combined_delta.size() != global_params.size())
    throw InvalidInput("apply: combined delta dimension mismatch");
  return global_params + weights.combined_delta;
}

inline Vector apply(const Vector& global_params, const Vector& combined_delta) {
  if (combined_delta.size() != global_params.size())
    throw InvalidInput("apply: combined delta dimension mismatch");
  return global_params + combined_delta;
}

}  // namespace fedctx
