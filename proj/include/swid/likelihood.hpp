#ifndef SWID_LIKELIHOOD_HPP
#define SWID_LIKELIHOOD_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "swid/model.hpp"

namespace swid {

/// Per-step log terms of the complete-data likelihood for t = 0..T-1:
/// emission(t, j) = ln p(y_{t+1} | z_t, xi_{t+1} = j) and
/// transition[t](i, j) = ln p(xi_{t+1} = j | z_t, xi_t = i).
struct LogTerms {
  Matrix emission;
  std::vector<Matrix> transition;
  Matrix Z;  // z_0..z_T
};

inline Matrix next_observations(const Trajectory& traj) { return traj.y.bottomRows(traj.horizon()); }

inline Matrix emission_log_densities(const ModelParams& m, const Trajectory& traj, const Matrix& Z) {
  const int T = traj.horizon();
  const Matrix Y = next_observations(traj);
  const Matrix Zt = Z.topRows(T);
  Matrix out(T, m.d);
  for (int j = 0; j < m.d; ++j) out.col(j) = log_density_series(m.family, m.beta[static_cast<std::size_t>(j)], Y, Zt);
  return out;
}

inline LogTerms compute_log_terms(const ModelParams& m, const Trajectory& traj) {
  if (traj.n_y() != m.n_y) throw ConfigError("trajectory output dimension does not match the model");
  if (m.cfg.t_u > 0 && traj.n_u() != m.n_u) throw ConfigError("trajectory input dimension does not match the model");
  const int T = traj.horizon();
  LogTerms out;
  out.Z = regressor_matrix(traj, m.cfg);
  out.emission = emission_log_densities(m, traj, out.Z);
  out.transition.resize(static_cast<std::size_t>(T));
  if (depends_on_state(m.structure)) {
    for (int t = 0; t < T; ++t) out.transition[static_cast<std::size_t>(t)] = log_transition(m, out.Z.row(t).transpose());
  } else {
    const Matrix shared = log_transition(m, Vector::Ones(m.n_z()));
    for (auto& tr : out.transition) tr = shared;
  }
  return out;
}

inline Vector uniform_simplex(int d) { return Vector::Constant(d, 1.0 / d); }

inline void check_simplex(const Vector& alpha0, int d, double tol = 1e-8) {
  if (alpha0.size() != d) throw ConfigError("alpha0 has wrong dimension");
  if (alpha0.minCoeff() < -tol || std::abs(alpha0.sum() - 1.0) > tol || !alpha0.allFinite())
    throw ConfigError("alpha0 is not on the probability simplex");
}

/// -ln p(y_{1:T} | y_0, z_0) from the normalized forward recursion. ln p(z_0)
/// is dropped; the prior over xi_0 is alpha0 (uniform when empty).
inline double nll_from_terms(const LogTerms& terms, const Vector& alpha0) {
  const int T = static_cast<int>(terms.emission.rows());
  const int d = static_cast<int>(terms.emission.cols());
  Vector log_alpha = alpha0.array().log();
  double loglik = 0.0;
  Vector a(d);
  for (int t = 1; t <= T; ++t) {
    const Matrix& tr = terms.transition[static_cast<std::size_t>(t - 1)];
    for (int j = 0; j < d; ++j) a[j] = log_sum_exp(log_alpha + tr.col(j)) + terms.emission(t - 1, j);
    const double c = log_sum_exp(a);
    if (!std::isfinite(c)) throw NumericError("non-finite forward normalizer at t=" + std::to_string(t));
    loglik += c;
    log_alpha = a.array() - c;
  }
  return -loglik;
}

inline double nll(const ModelParams& m, const Trajectory& traj, const Vector& alpha0 = {}) {
  const Vector a0 = alpha0.size() ? alpha0 : uniform_simplex(m.d);
  check_simplex(a0, m.d);
  return nll_from_terms(compute_log_terms(m, traj), a0);
}

/// NLL of rows [r.first, r.last]; earlier rows only feed the regressors.
inline double nll(const ModelParams& m, const Trajectory& traj, IndexRange r, const Vector& alpha0 = {}) {
  return nll(m, slice(traj, m.cfg, r), alpha0);
}

inline double reg_nll(const ModelParams& m, const Trajectory& traj, const Regularizer& reg, const Vector& alpha0 = {}) {
  return nll(m, traj, alpha0) + regularizer_value(m, reg);
}

inline double log_joint_from_terms(const LogTerms& terms, const std::vector<int>& modes) {
  const int T = static_cast<int>(terms.emission.rows());
  const int d = static_cast<int>(terms.emission.cols());
  if (static_cast<int>(modes.size()) != T + 1) throw ConfigError("mode sequence must have length T+1");
  for (int k : modes)
    if (k < 0 || k >= d) throw ConfigError("mode index " + std::to_string(k) + " out of range");
  double s = 0.0;
  for (int t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    s += terms.transition[i](modes[i], modes[i + 1]) + terms.emission(t, modes[i + 1]);
  }
  return s;
}

/// sum_t ln p(y_{t+1} | z_t, xi_{t+1}) + ln p(xi_{t+1} | z_t, xi_t); the prior on xi_0 is dropped.
inline double log_joint_fixed_modes(const ModelParams& m, const Trajectory& traj, const std::vector<int>& modes) {
  return log_joint_from_terms(compute_log_terms(m, traj), modes);
}

inline constexpr std::int64_t kEnumerationLimit = 1'000'000;

/// Calls visit(modes) for every sequence in {0..d-1}^(T+1), in lexicographic order.
template <typename Visit>
void enumerate_mode_sequences(int d, int T, Visit&& visit) {
  double count = 1.0;
  for (int t = 0; t <= T; ++t) count *= d;
  if (count > static_cast<double>(kEnumerationLimit))
    throw ConfigError("enumeration guard: d^(T+1) exceeds " + std::to_string(kEnumerationLimit));
  std::vector<int> modes(static_cast<std::size_t>(T + 1), 0);
  while (true) {
    visit(static_cast<const std::vector<int>&>(modes));
    int pos = T;
    while (pos >= 0 && ++modes[static_cast<std::size_t>(pos)] == d) modes[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
  }
}

/// Exact -ln sum_xi alpha0(xi_0) exp(log_joint(xi)); testing oracle.
inline double nll_bruteforce(const ModelParams& m, const Trajectory& traj, const Vector& alpha0 = {}) {
  const Vector a0 = alpha0.size() ? alpha0 : uniform_simplex(m.d);
  check_simplex(a0, m.d);
  const LogTerms terms = compute_log_terms(m, traj);
  double acc = kNegInf;
  enumerate_mode_sequences(m.d, traj.horizon(), [&](const std::vector<int>& modes) {
    acc = log_sum_exp(acc, std::log(a0[modes[0]]) + log_joint_from_terms(terms, modes));
  });
  return -acc;
}

// ---------------------------------------------------------------------------
// Simulation

struct Simulation {
  Trajectory traj;
  std::vector<int> modes;  // xi_0..xi_T
};

/// Generative rollout. y_0 is read from the y-slot of z0 (zeros without output lags).
inline Simulation simulate(const ModelParams& m, int T, const Vector& xi0_dist, std::uint64_t seed,
                           const Vector& z0 = {}, const std::optional<Matrix>& inputs = std::nullopt) {
  m.validate();
  if (T < 1) throw ConfigError("simulate: T must be >= 1");
  const int nz = m.n_z();
  if (z0.size() != 0 && z0.size() != nz) throw ConfigError("simulate: z0 has wrong dimension");
  if (m.cfg.t_u > 0 && (!inputs || inputs->rows() < T + 1 || inputs->cols() != m.n_u))
    throw ConfigError("simulate: model uses inputs; supply T+1 rows of them");
  check_simplex(xi0_dist, m.d);
  Rng rng(seed);
  Simulation out;
  out.traj.y = Matrix::Zero(T + 1, m.n_y);
  if (inputs) out.traj.u = inputs->topRows(T + 1);
  out.traj.z0 = z0;
  if (m.cfg.t_y > 0 && z0.size()) out.traj.y.row(0) = z0.head(m.n_y).transpose();
  out.modes.resize(static_cast<std::size_t>(T + 1));
  int mode = sample_index(xi0_dist, rng);
  out.modes[0] = mode;
  for (int t = 0; t < T; ++t) {
    const Vector z = build_regressor(out.traj, m.cfg, t);
    mode = sample_index(softmax(switch_logits(m, z, mode)), rng);
    out.modes[static_cast<std::size_t>(t + 1)] = mode;
    out.traj.y.row(t + 1) = sample_emission(m.family, m.beta[static_cast<std::size_t>(mode)], z, rng).transpose();
  }
  return out;
}

}  // namespace swid

#endif  // SWID_LIKELIHOOD_HPP
