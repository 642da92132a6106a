#ifndef SWID_PREDICT_HPP
#define SWID_PREDICT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include "swid/posterior.hpp"

namespace swid {

// ---------------------------------------------------------------------------
// Metrics

namespace detail {

inline void check_same_shape(const Matrix& truth, const Matrix& pred, Eigen::Index min_rows) {
  if (truth.rows() != pred.rows() || truth.cols() != pred.cols())
    throw ConfigError("truth and prediction differ in shape");
  if (truth.rows() < min_rows) throw ConfigError("need at least " + std::to_string(min_rows) + " samples");
}

}  // namespace detail

/// 1 - SSE / SST over all components stacked into one sequence.
inline double r2_score(const Matrix& truth, const Matrix& pred) {
  detail::check_same_shape(truth, pred, 2);
  const Eigen::ArrayXd y = truth.reshaped().array();
  const Eigen::ArrayXd yh = pred.reshaped().array();
  const double sst = (y - y.mean()).square().sum();
  if (!(sst > 0.0)) throw DomainError("r2 is undefined for a constant truth");
  return 1.0 - (y - yh).square().sum() / sst;
}

inline Vector r2_per_component(const Matrix& truth, const Matrix& pred) {
  detail::check_same_shape(truth, pred, 2);
  Vector out(truth.cols());
  for (Eigen::Index c = 0; c < truth.cols(); ++c) out[c] = r2_score(truth.col(c), pred.col(c));
  return out;
}

inline double rmse(const Matrix& truth, const Matrix& pred) {
  detail::check_same_shape(truth, pred, 1);
  return std::sqrt((truth - pred).squaredNorm() / static_cast<double>(truth.size()));
}

/// Mean after dropping ceil(alpha m) lowest and highest values.
inline double trimmed_mean(std::vector<double> values, double alpha) {
  if (!(alpha >= 0.0 && alpha < 0.5)) throw ConfigError("trim fraction must lie in [0, 0.5)");
  const auto m = static_cast<std::ptrdiff_t>(values.size());
  if (m < 1) throw ConfigError("trimmed_mean: no samples");
  const auto drop = static_cast<std::ptrdiff_t>(std::ceil(alpha * static_cast<double>(m) - 1e-9));
  if (2 * drop >= m) throw ConfigError("trimmed_mean: trimming drops every sample");
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (auto i = drop; i < m - drop; ++i) s += values[static_cast<std::size_t>(i)];
  return s / static_cast<double>(m - 2 * drop);
}

/// Linear-interpolation quantile of unsorted values.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("quantile: no samples");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// ---------------------------------------------------------------------------
// Prediction

enum class PredictMode { RecursiveOneStep, OpenLoop };

struct PredictionConfig {
  PredictMode mode = PredictMode::RecursiveOneStep;
  int n_samples = 0;  // 0: 20 recursive, 500 open-loop
  double trim_fraction = 0.01;
  std::uint64_t seed = 0;
  bool quantiles = false;

  int samples() const { return n_samples > 0 ? n_samples : (mode == PredictMode::OpenLoop ? 500 : 20); }

  void validate() const {
    if (n_samples < 0) throw ConfigError("n_samples must be >= 1");
    if (!(trim_fraction >= 0.0 && trim_fraction < 0.5)) throw ConfigError("trim_fraction must lie in [0, 0.5)");
  }
};

struct Prediction {
  Matrix mean;  // one row per predicted time
  std::optional<Matrix> q25;
  std::optional<Matrix> q75;
};

/// Predicts rows r.first..r.last of traj one step ahead. A forward filter
/// started at alpha0 on xi_0 absorbs the true rows before each prediction; the
/// prediction of y_t is the mean of n draws (mode from the filtered one-step
/// predictive, then emission).
inline Prediction recursive_one_step_predict(const ModelParams& m, const Vector& alpha0, const Trajectory& traj,
                                             IndexRange r, const PredictionConfig& cfg) {
  cfg.validate();
  check_simplex(alpha0, m.d);
  if (r.first < 1 || r.last > traj.horizon() || r.first > r.last)
    throw ConfigError("prediction range must lie in [1, T] and leave one warm-up row");
  const int n = cfg.samples();
  Rng rng(cfg.seed);
  Vector log_alpha = alpha0.array().log();
  Prediction out;
  out.mean.resize(r.size(), m.n_y);
  Matrix draws(n, m.n_y);
  for (int t = 1; t <= r.last; ++t) {
    const Vector z = build_regressor(traj, m.cfg, t - 1);
    const Matrix tr = log_transition(m, z);
    Vector log_q(m.d);
    for (int j = 0; j < m.d; ++j) log_q[j] = log_sum_exp(log_alpha + tr.col(j));
    if (t >= r.first) {
      const Vector q = (log_q.array() - log_sum_exp(log_q)).exp();
      for (int s = 0; s < n; ++s) {
        const int mode = sample_index(q, rng);
        draws.row(s) = sample_emission(m.family, m.beta[static_cast<std::size_t>(mode)], z, rng).transpose();
      }
      out.mean.row(t - r.first) = draws.colwise().mean();
    }
    const Vector y = traj.y.row(t).transpose();
    for (int j = 0; j < m.d; ++j) log_q[j] += log_density(m.family, m.beta[static_cast<std::size_t>(j)], y, z);
    const double c = log_sum_exp(log_q);
    if (!std::isfinite(c)) throw NumericError("prediction filter: observation at t=" + std::to_string(t) + " has zero likelihood");
    log_alpha = log_q.array() - c;
  }
  return out;
}

/// Smoothed distribution of the mode at the last warm-up row, from the E-step
/// on rows [0, last].
inline Vector warmup_mode_distribution(const ModelParams& m, const Vector& alpha0, const Trajectory& traj, int last) {
  if (last < 1 || last > traj.horizon()) throw ConfigError("warm-up must contain at least two rows");
  const Posteriors post = e_step(m, slice(traj, m.cfg, {0, last}), alpha0);
  return post.gamma.row(post.gamma.rows() - 1).transpose();
}

/// Simulates rows r.first..r.last from the model with no data feedback. Only
/// rows before r.first (and the inputs) are read. mode_dist is the distribution
/// of xi at row r.first - 1. Returns the per-time trimmed mean over n draws.
inline Prediction open_loop_predict(const ModelParams& m, const Vector& mode_dist, const Trajectory& traj,
                                    IndexRange r, const PredictionConfig& cfg) {
  cfg.validate();
  check_simplex(mode_dist, m.d);
  if (r.first < 1 || r.last > traj.horizon() || r.first > r.last)
    throw ConfigError("prediction range must lie in [1, T] and leave one warm-up row");
  if (m.cfg.t_u > 0 && (!traj.u || traj.n_u() != m.n_u)) throw ConfigError("open-loop prediction needs the model's inputs");
  const int n = cfg.samples();
  const int H = r.size();
  const Trajectory base = slice(traj, m.cfg, {r.first - 1, r.last});
  std::vector<Matrix> paths(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  parallel_for(
      n,
      [&](std::int64_t s) {
        try {
          Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(s)));
          Trajectory local = base;
          int mode = sample_index(mode_dist, rng);
          for (int h = 0; h < H; ++h) {
            const Vector z = build_regressor(local, m.cfg, h);
            mode = sample_index(softmax(switch_logits(m, z, mode)), rng);
            local.y.row(h + 1) = sample_emission(m.family, m.beta[static_cast<std::size_t>(mode)], z, rng).transpose();
          }
          paths[static_cast<std::size_t>(s)] = local.y.bottomRows(H);
        } catch (...) {
          errors[static_cast<std::size_t>(s)] = std::current_exception();
        }
      },
      16);
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  Prediction out;
  out.mean.resize(H, m.n_y);
  if (cfg.quantiles) {
    out.q25 = Matrix(H, m.n_y);
    out.q75 = Matrix(H, m.n_y);
  }
  std::vector<double> col(static_cast<std::size_t>(n));
  for (int h = 0; h < H; ++h)
    for (int c = 0; c < m.n_y; ++c) {
      for (int s = 0; s < n; ++s) col[static_cast<std::size_t>(s)] = paths[static_cast<std::size_t>(s)](h, c);
      out.mean(h, c) = trimmed_mean(col, cfg.trim_fraction);
      if (cfg.quantiles) {
        (*out.q25)(h, c) = quantile(col, 0.25);
        (*out.q75)(h, c) = quantile(col, 0.75);
      }
    }
  return out;
}

}  // namespace swid

#endif  // SWID_PREDICT_HPP
