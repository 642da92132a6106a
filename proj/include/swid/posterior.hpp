#ifndef SWID_POSTERIOR_HPP
#define SWID_POSTERIOR_HPP

#include <cmath>
#include <string>
#include <vector>

#include "swid/likelihood.hpp"

namespace swid {

/// Smoothed mode marginals.
///   gamma(t, i)  = p(xi_t = i | y, z_0),                 t = 0..T
///   xi[t](i, j)  = p(xi_t = i, xi_{t+1} = j | y, z_0),   t = 0..T-1
struct Posteriors {
  Matrix gamma;
  std::vector<Matrix> xi;
  double loglik = 0.0;  // = -nll

  int horizon() const { return static_cast<int>(xi.size()); }
  int modes() const { return static_cast<int>(gamma.cols()); }
};

namespace detail {

inline void finish_posteriors(Posteriors& post, int T, int d) {
  post.gamma.resize(T + 1, d);
  post.gamma.row(0) = post.xi[0].rowwise().sum().transpose();
  for (int t = 0; t < T; ++t) post.gamma.row(t + 1) = post.xi[static_cast<std::size_t>(t)].colwise().sum();
}

}  // namespace detail

/// Optional per-step multiplicative rescaling of the backward likelihoods,
/// applied in log domain; only used to verify that the pairwise ratio cancels it.
struct BackwardScaling {
  Vector log_scale;  // length T, empty for none
};

inline Posteriors forward_backward_from_terms(const LogTerms& terms, const Vector& alpha0,
                                              const BackwardScaling& scaling = {}) {
  const int T = static_cast<int>(terms.emission.rows());
  const int d = static_cast<int>(terms.emission.cols());
  check_simplex(alpha0, d);
  Posteriors post;

  // forward filter: log_alpha.row(t) = ln p(xi_t | y_{0:t}, z_0)
  Matrix log_alpha(T + 1, d);
  log_alpha.row(0) = alpha0.array().log().transpose();
  Vector a(d);
  for (int t = 1; t <= T; ++t) {
    const Matrix& tr = terms.transition[static_cast<std::size_t>(t - 1)];
    for (int j = 0; j < d; ++j)
      a[j] = log_sum_exp(log_alpha.row(t - 1).transpose() + tr.col(j)) + terms.emission(t - 1, j);
    const double c = log_sum_exp(a);
    if (!std::isfinite(c)) throw NumericError("forward recursion: non-finite normalizer at t=" + std::to_string(t));
    post.loglik += c;
    log_alpha.row(t) = (a.array() - c).transpose();
  }

  // backward: log_zeta.row(t)(j) = ln p(y_{t+1:T} | xi_{t+1} = j, z_t) up to a per-t constant.
  // zeta_{t-1}(i) = p(y_t | z_{t-1}, i) sum_j zeta_t(j) p(j | z_t, i), zeta_T = 1.
  Matrix log_zeta(T, d);
  log_zeta.row(T - 1) = terms.emission.row(T - 1);
  for (int t = T - 1; t >= 1; --t) {
    const Matrix& tr = terms.transition[static_cast<std::size_t>(t)];
    for (int i = 0; i < d; ++i)
      a[i] = terms.emission(t - 1, i) + log_sum_exp(log_zeta.row(t).transpose() + tr.row(i).transpose());
    const double mx = a.maxCoeff();
    if (!std::isfinite(mx)) throw NumericError("backward recursion: non-finite value at t=" + std::to_string(t));
    log_zeta.row(t - 1) = (a.array() - mx).transpose();
  }
  if (scaling.log_scale.size() == T) log_zeta.colwise() += scaling.log_scale;

  // rho_t(i, j) = zeta_t(j) p(j | z_t, i) alpha_t(i), normalized over (i, j)
  post.xi.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    Matrix rho = terms.transition[static_cast<std::size_t>(t)];
    rho.colwise() += log_alpha.row(t).transpose();
    rho.rowwise() += log_zeta.row(t);
    const double norm = log_sum_exp(rho.reshaped());
    if (!std::isfinite(norm)) throw NumericError("pairwise posterior: non-finite normalizer at t=" + std::to_string(t));
    post.xi[static_cast<std::size_t>(t)] = (rho.array() - norm).exp();
  }
  detail::finish_posteriors(post, T, d);
  return post;
}

/// E-step by the modified forward-backward recursion.
inline Posteriors forward_backward(const ModelParams& m, const Trajectory& traj, const Vector& alpha0) {
  return forward_backward_from_terms(compute_log_terms(m, traj), alpha0);
}

/// E-step for switching that ignores the previous mode: every step is an
/// independent mixture posterior and xi[t] = gamma_t gamma_{t+1}^T. The per-t
/// work is independent and runs through parallel_for.
inline Posteriors posterior_state_dependent(const ModelParams& m, const Trajectory& traj, const Vector& alpha0 = {}) {
  if (depends_on_mode(m.structure))
    throw ConfigError("posterior_state_dependent: switching structure depends on the previous mode");
  const Vector a0 = alpha0.size() ? alpha0 : uniform_simplex(m.d);
  check_simplex(a0, m.d);
  const int T = traj.horizon();
  const int d = m.d;
  const Matrix Z = regressor_matrix(traj, m.cfg);
  const Matrix emission = emission_log_densities(m, traj, Z);
  Posteriors post;
  post.gamma.resize(T + 1, d);
  post.gamma.row(0) = a0.transpose();
  Vector step_loglik(T);
  parallel_for(T, [&](std::int64_t t) {
    const Vector logits = switch_logits(m, Z.row(t).transpose(), 0);
    const Vector joint = (logits.array() - log_sum_exp(logits)).matrix() + emission.row(t).transpose();
    const double c = log_sum_exp(joint);
    step_loglik[t] = c;
    post.gamma.row(t + 1) = (joint.array() - c).exp().transpose();
  });
  for (int t = 0; t < T; ++t)
    if (!std::isfinite(step_loglik[t])) throw NumericError("non-finite mixture normalizer at t=" + std::to_string(t + 1));
  post.loglik = step_loglik.sum();
  post.xi.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t)
    post.xi[static_cast<std::size_t>(t)] = post.gamma.row(t).transpose() * post.gamma.row(t + 1);
  return post;
}

/// Dispatches to the fast path when the switching ignores the previous mode.
inline Posteriors e_step(const ModelParams& m, const Trajectory& traj, const Vector& alpha0) {
  return depends_on_mode(m.structure) ? forward_backward(m, traj, alpha0) : posterior_state_dependent(m, traj, alpha0);
}

/// Posteriors by enumerating all d^(T+1) mode sequences; testing oracle.
inline Posteriors brute_force_posterior(const ModelParams& m, const Trajectory& traj, const Vector& alpha0) {
  check_simplex(alpha0, m.d);
  const LogTerms terms = compute_log_terms(m, traj);
  const int T = traj.horizon();
  const int d = m.d;
  std::vector<double> logw;
  std::vector<std::vector<int>> seqs;
  enumerate_mode_sequences(d, T, [&](const std::vector<int>& modes) {
    logw.push_back(std::log(alpha0[modes[0]]) + log_joint_from_terms(terms, modes));
    seqs.push_back(modes);
  });
  const double norm = log_sum_exp(Eigen::Map<const Vector>(logw.data(), static_cast<Eigen::Index>(logw.size())));
  Posteriors post;
  post.loglik = norm;
  post.gamma = Matrix::Zero(T + 1, d);
  post.xi.assign(static_cast<std::size_t>(T), Matrix::Zero(d, d));
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const double w = std::exp(logw[s] - norm);
    const auto& modes = seqs[s];
    for (int t = 0; t <= T; ++t) post.gamma(t, modes[static_cast<std::size_t>(t)]) += w;
    for (int t = 0; t < T; ++t)
      post.xi[static_cast<std::size_t>(t)](modes[static_cast<std::size_t>(t)], modes[static_cast<std::size_t>(t + 1)]) += w;
  }
  return post;
}

/// sum over sequences of Pi ln Pi, with Pi the posterior over full mode sequences.
inline double posterior_neg_entropy_bruteforce(const ModelParams& m, const Trajectory& traj, const Vector& alpha0) {
  check_simplex(alpha0, m.d);
  const LogTerms terms = compute_log_terms(m, traj);
  std::vector<double> logw;
  enumerate_mode_sequences(m.d, traj.horizon(), [&](const std::vector<int>& modes) {
    logw.push_back(std::log(alpha0[modes[0]]) + log_joint_from_terms(terms, modes));
  });
  const double norm = log_sum_exp(Eigen::Map<const Vector>(logw.data(), static_cast<Eigen::Index>(logw.size())));
  double s = 0.0;
  for (double lw : logw) {
    const double lp = lw - norm;
    if (lp > kNegInf) s += std::exp(lp) * lp;
  }
  return s;
}

}  // namespace swid

#endif  // SWID_POSTERIOR_HPP
