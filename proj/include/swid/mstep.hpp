#ifndef SWID_MSTEP_HPP
#define SWID_MSTEP_HPP

/// \file
/// Convex surrogate built from the E-step and the decoupled minimizations of
/// its switching block
///   Q1(Theta) = sum_t sum_ij xi_t(i, j) (lse(Theta_i^T z_t) - Theta_ij^T z_t)
/// and its emission blocks
///   Q2(beta)  = c_hat + sum_t sum_i pi_{t+1}(i) (f'(l_t(beta_i^k)) l_t(beta_i) + g_t(beta_i)).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "swid/posterior.hpp"

namespace swid {

struct SolverOptions {
  double grad_tol = 1e-8;
  int max_newton_iters = 100;
  double backtrack = 0.5;
  double armijo = 1e-4;
  int laplace_iters = 200;

  void validate() const {
    if (!(grad_tol > 0 && grad_tol < 1)) throw ConfigError("grad_tol must lie in (0, 1)");
    if (max_newton_iters < 1 || laplace_iters < 1) throw ConfigError("iteration caps must be positive");
    if (!(backtrack > 0 && backtrack < 1) || !(armijo > 0 && armijo < 1))
      throw ConfigError("line-search constants must lie in (0, 1)");
  }
};

/// Everything the M-step needs from the E-step at theta^k.
struct SurrogateWeights {
  std::vector<Matrix> xi;  // T of d x d, pi_t^{i,j}
  Matrix mode_weights;     // T x d, pi_{t+1}^i
  Matrix lin_coeffs;       // T x d, f'(l_t(beta_i^k))
  Matrix base_ell;         // T x d, l_t(beta_i^k)
  Vector gamma0;           // pi_0
  double c_hat = 0.0;      // sum pi (f(l^k) - f'(l^k) l^k)
  std::optional<double> neg_entropy;  // sum_xi Pi ln Pi, by enumeration

  int horizon() const { return static_cast<int>(mode_weights.rows()); }
  int modes() const { return static_cast<int>(mode_weights.cols()); }
};

/// Regressors z_0..z_{T-1} and targets y_1..y_T of a trajectory.
struct RegressionData {
  Matrix Z;
  Matrix Y;

  static RegressionData from(const ModelParams& m, const Trajectory& traj) {
    const Matrix Zall = regressor_matrix(traj, m.cfg);
    return {Zall.topRows(traj.horizon()), next_observations(traj)};
  }
};

inline SurrogateWeights build_weights(const ModelParams& m, const Posteriors& post, const Trajectory& traj,
                                      bool with_constants = false, const Vector& alpha0 = {}) {
  const int T = traj.horizon();
  if (post.horizon() != T || post.modes() != m.d) throw ConfigError("build_weights: posteriors do not match data");
  const RegressionData data = RegressionData::from(m, traj);
  SurrogateWeights w;
  w.xi = post.xi;
  w.mode_weights = post.gamma.bottomRows(T);
  w.gamma0 = post.gamma.row(0).transpose();
  w.lin_coeffs.resize(T, m.d);
  w.base_ell.resize(T, m.d);
  for (int j = 0; j < m.d; ++j) {
    const EllGSeries s = ell_g_series(m.family, m.beta[static_cast<std::size_t>(j)], data.Y, data.Z);
    for (int t = 0; t < T; ++t) {
      const double ell = clamp_to_f_domain(m.family, s.ell[t]);
      FValue fv;
      try {
        fv = f_value_and_derivative(m.family, ell, m.n_y);
      } catch (const DomainError& e) {
        throw NumericError(std::string(e.what()) + " at (t=" + std::to_string(t) + ", mode=" + std::to_string(j) + ")");
      }
      w.base_ell(t, j) = ell;
      w.lin_coeffs(t, j) = fv.derivative;
      w.c_hat += w.mode_weights(t, j) * (fv.value - fv.derivative * ell);
    }
  }
  if (with_constants) {
    const Vector a0 = alpha0.size() ? alpha0 : uniform_simplex(m.d);
    w.neg_entropy = posterior_neg_entropy_bruteforce(m, traj, a0);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Damped Newton with Armijo backtracking

struct NewtonResult {
  Vector x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool exact = false;  // gradient tolerance reached
};

namespace detail {

/// value(x) returns +inf outside the domain; derivs(x) returns (gradient, Hessian).
/// The returned point never has a larger value than x0.
template <typename Value, typename Derivs>
NewtonResult newton_minimize(Vector x0, Value&& value, Derivs&& derivs, const SolverOptions& opts) {
  NewtonResult res;
  res.x = std::move(x0);
  res.value = value(res.x);
  if (!std::isfinite(res.value)) throw NumericError("Newton solver started outside the objective domain");
  if (res.x.size() == 0) {
    res.exact = true;
    return res;
  }
  for (int it = 0; it < opts.max_newton_iters; ++it) {
    auto [g, H] = derivs(res.x);
    res.grad_norm = g.norm();
    res.iterations = it;
    if (res.grad_norm <= opts.grad_tol) {
      res.exact = true;
      return res;
    }
    Vector dir;
    Eigen::LLT<Matrix> llt(H);
    bool newton_dir = llt.info() == Eigen::Success;
    if (newton_dir) {
      dir = -llt.solve(g);
      if (!dir.allFinite() || g.dot(dir) >= 0) newton_dir = false;
    }
    if (!newton_dir) {
      dir = -g;  // singular Hessian: gradient step
    } else if (-0.5 * g.dot(dir) <= 1e-14 * std::max(1.0, std::abs(res.value))) {
      // Newton decrement below the resolution of the objective
      res.exact = true;
      return res;
    }
    bool moved = false;
    for (int attempt = 0; attempt < 2 && !moved; ++attempt) {
      const double slope = g.dot(dir);
      double step = 1.0;
      while (step > 1e-20) {
        Vector cand = res.x + step * dir;
        const double v = value(cand);
        if (std::isfinite(v) && v <= res.value + opts.armijo * step * slope) {
          moved = v < res.value || (cand - res.x).norm() > 0.0;
          if (v <= res.value) {
            res.x = std::move(cand);
            res.value = v;
          }
          break;
        }
        step *= opts.backtrack;
      }
      if (!moved && newton_dir) {
        dir = -g;
        newton_dir = false;
      } else {
        break;
      }
    }
    if (!moved) {
      res.iterations = it + 1;
      return res;  // stalled at working precision
    }
  }
  auto g_final = derivs(res.x).first;
  res.grad_norm = g_final.norm();
  res.exact = res.grad_norm <= opts.grad_tol;
  res.iterations = opts.max_newton_iters;
  return res;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Soft-label softmax regression:
//   sum_t [ m_t lse(logits_t) - <labels_t, logits_t> ] + ridge/2 ||W||^2,
//   logits_t = W^T x_t (with a trailing 0 when reduced), m_t = sum_k labels_tk.

struct SoftmaxProblem {
  Matrix X;       // n x p
  Matrix labels;  // n x K (K includes the pinned class when reduced)
  bool reduced = true;
  double ridge = 0.0;

  int free_classes() const { return static_cast<int>(labels.cols()) - (reduced ? 1 : 0); }
  int dim() const { return static_cast<int>(X.cols()) * free_classes(); }

  Matrix logits(const Matrix& W) const {
    Matrix out = Matrix::Zero(X.rows(), labels.cols());
    out.leftCols(free_classes()) = X * W;
    return out;
  }

  double value(const Matrix& W) const {
    const Matrix lg = logits(W);
    double v = 0.5 * ridge * W.squaredNorm();
    for (Eigen::Index t = 0; t < X.rows(); ++t) {
      const double mass = labels.row(t).sum();
      if (mass == 0.0) continue;
      v += mass * log_sum_exp(lg.row(t)) - labels.row(t).dot(lg.row(t));
    }
    return v;
  }

  Matrix gradient(const Matrix& W, Matrix* probs_out = nullptr) const {
    const Matrix lg = logits(W);
    Matrix resid(X.rows(), free_classes());
    Matrix probs(X.rows(), labels.cols());
    for (Eigen::Index t = 0; t < X.rows(); ++t) {
      probs.row(t) = softmax(lg.row(t).transpose()).transpose();
      const double mass = labels.row(t).sum();
      resid.row(t) = mass * probs.row(t).head(free_classes()) - labels.row(t).head(free_classes());
    }
    if (probs_out) *probs_out = std::move(probs);
    return X.transpose() * resid + ridge * W;
  }

  Matrix hessian(const Matrix& probs) const {
    const int K = free_classes();
    const int p = static_cast<int>(X.cols());
    const Vector mass = labels.rowwise().sum();
    Matrix H = Matrix::Zero(p * K, p * K);
    for (int a = 0; a < K; ++a)
      for (int b = a; b < K; ++b) {
        const Vector w =
            (mass.array() * probs.col(a).array() * ((a == b ? 1.0 : 0.0) - probs.col(b).array())).matrix();
        const Matrix blk = X.transpose() * w.asDiagonal() * X;
        H.block(a * p, b * p, p, p) = blk;
        if (a != b) H.block(b * p, a * p, p, p) = blk.transpose();
      }
    H.diagonal().array() += ridge;
    return H;
  }
};

inline NewtonResult solve_softmax(const SoftmaxProblem& prob, const Matrix& W0, const SolverOptions& opts) {
  const auto p = prob.X.cols();
  const auto K = prob.free_classes();
  auto as_matrix = [&](const Vector& v) { return Eigen::Map<const Matrix>(v.data(), p, K); };
  auto value = [&](const Vector& v) { return prob.value(as_matrix(v)); };
  auto derivs = [&](const Vector& v) {
    Matrix probs;
    const Matrix g = prob.gradient(as_matrix(v), &probs);
    return std::pair<Vector, Matrix>{g.reshaped(), prob.hessian(probs)};
  };
  return detail::newton_minimize(W0.reshaped(), value, derivs, opts);
}

// ---------------------------------------------------------------------------
// Switching block

namespace detail {

/// Data of the softmax problem owning Theta block k.
inline SoftmaxProblem switch_problem(SwitchStructure s, int d, int block, const SurrogateWeights& w, const Matrix& Z,
                                     double gamma1) {
  const int T = w.horizon();
  SoftmaxProblem prob;
  prob.reduced = true;
  prob.ridge = gamma1;
  Matrix labels(T, d);
  for (int t = 0; t < T; ++t)
    labels.row(t) = depends_on_mode(s) ? Matrix(w.xi[static_cast<std::size_t>(t)].row(block))
                                       : Matrix(w.mode_weights.row(t));
  if (depends_on_state(s)) {
    prob.X = Z.topRows(T);
    prob.labels = std::move(labels);
  } else {
    prob.X = Matrix::Ones(1, 1);  // constant input: aggregate the labels
    prob.labels = labels.colwise().sum();
  }
  return prob;
}

}  // namespace detail

struct SwitchStepResult {
  std::vector<Matrix> theta;
  bool exact = true;
};

/// Minimizes Q1 + r1. Mode-dependent structures split into d independent
/// problems, each seeing only the pairwise weights with previous mode i.
inline SwitchStepResult solve_switch_step(SwitchStructure s, const SurrogateWeights& w, const Matrix& Z, double gamma1,
                                          const SolverOptions& opts, const std::vector<Matrix>& theta0) {
  const int d = w.modes();
  SwitchStepResult out;
  out.theta = theta0;
  if (d == 1) return out;
  for (std::size_t k = 0; k < theta0.size(); ++k) {
    const SoftmaxProblem prob = detail::switch_problem(s, d, static_cast<int>(k), w, Z, gamma1);
    const NewtonResult r = solve_softmax(prob, theta0[k], opts);
    out.theta[k] = Eigen::Map<const Matrix>(r.x.data(), theta0[k].rows(), theta0[k].cols());
    out.exact = out.exact && r.exact;
  }
  return out;
}

/// Q1(Theta) + r1(Theta).
inline double switch_subproblem_objective(const ModelParams& m, const SurrogateWeights& w, const Matrix& Z,
                                          double gamma1) {
  double v = 0.0;
  for (int k = 0; k < m.theta_blocks(); ++k)
    v += detail::switch_problem(m.structure, m.d, k, w, Z, gamma1).value(m.theta[static_cast<std::size_t>(k)]);
  return v;
}

// ---------------------------------------------------------------------------
// Emission blocks

/// sum_t pi_{t+1}(j) (f'(l^k) l_t(beta) + g_t(beta)) + r2(beta) for one mode.
inline double emission_subproblem_objective(const FamilyKind& kind, const SurrogateWeights& w,
                                            const RegressionData& data, const Regularizer& reg, int j,
                                            const EmissionParams& p) {
  const EllGSeries s = ell_g_series(kind, p, data.Y, data.Z);
  double v = emission_regularizer(kind, p, reg);
  for (Eigen::Index t = 0; t < s.ell.size(); ++t) {
    const double m = w.mode_weights(t, j);
    if (m == 0.0) continue;
    v += m * (w.lin_coeffs(t, j) * s.ell[t] + s.g[t]);
  }
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

/// Closed-form minimizer for Gaussian and StudentT blocks. The frozen
/// linearization slopes weight the quadratic part only:
///   L*      = (sum w y z^T)(sum w z z^T + gamma3 I)^-1,   w = pi f'(l^k)
///   Lambda* = (sum pi + gamma2) (sum w r r^T + gamma3 L* L*^T + gamma2 I)^-1
/// When fixed_lambda is set, Lambda is kept and only B = Lambda L* moves.
inline GaussianParams solve_gaussian_step(const SurrogateWeights& w, const RegressionData& data,
                                          const Regularizer& reg, int j, const Matrix* fixed_lambda = nullptr) {
  const int ny = static_cast<int>(data.Y.cols());
  const int nz = static_cast<int>(data.Z.cols());
  const Vector mass = w.mode_weights.col(j);
  const Vector wt = mass.cwiseProduct(w.lin_coeffs.col(j));
  const Matrix Zw = data.Z.transpose() * wt.asDiagonal();
  Matrix A = Zw * data.Z;
  A.diagonal().array() += reg.gamma3;
  const Matrix C = data.Y.transpose() * Zw.transpose();  // sum w y z^T
  Eigen::LDLT<Matrix> ldlt(A);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 1e-300)
    throw NumericError("Gaussian M-step: singular normal matrix for mode " + std::to_string(j));
  const Matrix L = ldlt.solve(C.transpose()).transpose();
  if (!L.allFinite()) throw NumericError("Gaussian M-step: non-finite regression for mode " + std::to_string(j));
  GaussianParams out;
  if (fixed_lambda) {
    out.Lambda = *fixed_lambda;
  } else {
    const Matrix R = data.Y - data.Z * L.transpose();
    Matrix S = R.transpose() * wt.asDiagonal() * R + reg.gamma3 * L * L.transpose();
    S.diagonal().array() += reg.gamma2;
    S = symmetrize(S / (mass.sum() + reg.gamma2));
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success)
      throw NumericError("Gaussian M-step: residual covariance is singular for mode " + std::to_string(j));
    out.Lambda = symmetrize(llt.solve(Matrix::Identity(ny, ny)));
  }
  out.B = out.Lambda * L;
  (void)nz;
  return out;
}

/// Same closed form; the frozen t-weights f'(l^k) enter through w.lin_coeffs.
inline GaussianParams solve_student_t_step(const SurrogateWeights& w, const RegressionData& data,
                                           const Regularizer& reg, int j, const Matrix* fixed_lambda = nullptr) {
  return solve_gaussian_step(w, data, reg, j, fixed_lambda);
}

namespace detail {

/// argmin_m sum_t c_t |m - b_t| + ridge m^2; ties resolve to the lower median.
inline double weighted_median_ridge(std::vector<std::pair<double, double>> pts, double ridge, double fallback) {
  double total = 0.0;
  for (const auto& [b, c] : pts) total += c;
  if (total <= 0.0) return ridge > 0.0 ? 0.0 : fallback;
  std::sort(pts.begin(), pts.end());
  double cum = 0.0;
  double prev = -std::numeric_limits<double>::infinity();
  for (const auto& [b, c] : pts) {
    if (ridge > 0.0) {
      const double root = (total - 2.0 * cum) / (2.0 * ridge);
      if (root > prev && root < b) return root;
    }
    const double lo = 2.0 * cum - total + 2.0 * ridge * b;
    const double hi = 2.0 * (cum + c) - total + 2.0 * ridge * b;
    if (lo <= 0.0 && hi >= 0.0) return b;
    cum += c;
    prev = b;
  }
  return ridge > 0.0 ? -total / (2.0 * ridge) : pts.back().first;
}

}  // namespace detail

struct LaplaceStepResult {
  LaplaceParams params;
  bool exact = true;
  int sweeps = 0;
};

/// Per output row i, alternates an exact coordinate sweep over m_i at fixed
/// r_i (weighted medians) with the exact minimization over r_i at fixed
/// L_i = m_i / r_i. Each sweep is non-increasing.
inline LaplaceStepResult solve_laplace_step(const SurrogateWeights& w, const RegressionData& data,
                                            const Regularizer& reg, int j, const LaplaceParams& start,
                                            const SolverOptions& opts) {
  const int ny = static_cast<int>(data.Y.cols());
  const int nz = static_cast<int>(data.Z.cols());
  const int T = static_cast<int>(data.Z.rows());
  const Vector mass = w.mode_weights.col(j);
  const Vector a = mass.cwiseProduct(w.lin_coeffs.col(j));
  const double N = mass.sum();
  LaplaceStepResult out{start, true, 0};
  if (N + reg.gamma2 <= 0.0) return out;

  for (int i = 0; i < ny; ++i) {
    Vector m = start.M.row(i).transpose();
    double r = start.R[i];
    const Vector y = data.Y.col(i);
    auto objective = [&](const Vector& mm, double rr) {
      if (!(rr > 0.0)) return std::numeric_limits<double>::infinity();
      const Vector res = rr * y - data.Z * mm;
      return a.dot(res.cwiseAbs()) - N * std::log(rr) + reg.gamma2 * (rr - std::log(rr)) + reg.gamma3 * mm.squaredNorm();
    };
    double f = objective(m, r);
    bool converged = false;
    for (int sweep = 0; sweep < opts.laplace_iters; ++sweep) {
      Vector res = r * y - data.Z * m;
      for (int k = 0; k < nz; ++k) {
        std::vector<std::pair<double, double>> pts;
        pts.reserve(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
          const double zk = data.Z(t, k);
          if (zk == 0.0 || a[t] == 0.0) continue;
          pts.emplace_back((res[t] + m[k] * zk) / zk, a[t] * std::abs(zk));
        }
        const double mk = detail::weighted_median_ridge(std::move(pts), reg.gamma3, m[k]);
        res -= (mk - m[k]) * data.Z.col(k);
        m[k] = mk;
      }
      // r at fixed L = m / r:  r A - (N + gamma2) ln r + gamma2 r + gamma3 r^2 |L|^2
      const Vector L = m / r;
      const double A = a.dot((y - data.Z * L).cwiseAbs());
      const double q2 = 2.0 * reg.gamma3 * L.squaredNorm();
      const double q1 = A + reg.gamma2;
      const double q0 = N + reg.gamma2;
      double r_new = q2 > 0.0 ? (-q1 + std::sqrt(q1 * q1 + 4.0 * q2 * q0)) / (2.0 * q2) : q0 / q1;
      if (std::isfinite(r_new) && r_new > 0.0) {
        const Vector m_new = r_new * L;
        if (objective(m_new, r_new) <= objective(m, r)) {
          m = m_new;
          r = r_new;
        }
      }
      const double f_new = objective(m, r);
      out.sweeps = std::max(out.sweeps, sweep + 1);
      const double decrease = f - f_new;
      f = std::min(f, f_new);
      if (decrease <= 1e-10 * std::max(1.0, std::abs(f))) {
        converged = true;
        break;
      }
    }
    if (!converged) out.exact = false;
    out.params.M.row(i) = m.transpose();
    out.params.R[i] = r;
  }
  return out;
}

/// Damped Newton for the smooth families without a closed form.
inline std::pair<EmissionParams, bool> solve_generic_smooth_step(const FamilyKind& kind, const SurrogateWeights& w,
                                                                 const RegressionData& data, const Regularizer& reg,
                                                                 int j, const EmissionParams& start,
                                                                 const SolverOptions& opts) {
  const int T = static_cast<int>(data.Z.rows());
  const int nz = static_cast<int>(data.Z.cols());
  const Vector mass = w.mode_weights.col(j);
  if (kind.tag == FamilyTag::Categorical) {
    SoftmaxProblem prob;
    prob.reduced = false;
    prob.ridge = reg.gamma3;
    prob.X = data.Z;
    prob.labels = Matrix::Zero(T, kind.n_classes);
    for (int t = 0; t < T; ++t) prob.labels(t, detail::class_index(data.Y(t, 0), kind)) = mass[t];
    const Matrix& theta0 = std::get<CategoricalParams>(start).Theta;
    const NewtonResult r = solve_softmax(prob, theta0, opts);
    return {CategoricalParams{Eigen::Map<const Matrix>(r.x.data(), nz, kind.n_classes)}, r.exact};
  }
  if (kind.tag != FamilyTag::Logistic && kind.tag != FamilyTag::Gumbel)
    throw ConfigError("solve_generic_smooth_step: family has a dedicated solver");
  const bool gumbel = kind.tag == FamilyTag::Gumbel;
  const Vector c = w.lin_coeffs.col(j);
  const Vector y = data.Y.col(0);
  auto unpack_v = [&](const Vector& v) { return ScalarParams{v.head(nz), v[nz]}; };
  auto value = [&](const Vector& v) {
    if (!(v[nz] > 0.0)) return std::numeric_limits<double>::infinity();
    return emission_subproblem_objective(kind, w, data, reg, j, unpack_v(v));
  };
  auto derivs = [&](const Vector& v) {
    const Vector b = v.head(nz);
    const double lam = v[nz];
    Vector g = Vector::Zero(nz + 1);
    Matrix H = Matrix::Zero(nz + 1, nz + 1);
    Vector x(nz + 1);
    for (int t = 0; t < T; ++t) {
      if (mass[t] == 0.0) continue;
      const double u = lam * y[t] - b.dot(data.Z.row(t));
      double d1 = 0.0;
      double d2 = 0.0;
      if (gumbel) {
        const double e = std::exp(-u);
        d1 = -c[t] * e + 1.0;
        d2 = c[t] * e;
      } else {
        d1 = c[t] * 0.5 * std::sinh(0.5 * u);
        d2 = c[t] * 0.25 * std::cosh(0.5 * u);
      }
      x.head(nz) = -data.Z.row(t).transpose();
      x[nz] = y[t];
      g += mass[t] * d1 * x;
      H += mass[t] * d2 * x * x.transpose();
    }
    const double N = mass.sum();
    g[nz] -= N / lam;
    H(nz, nz) += N / (lam * lam);
    // regularizer gamma2 (lambda - ln lambda) + gamma3 |b|^2 / lambda
    g.head(nz) += 2.0 * reg.gamma3 * b / lam;
    g[nz] += reg.gamma2 * (1.0 - 1.0 / lam) - reg.gamma3 * b.squaredNorm() / (lam * lam);
    H.topLeftCorner(nz, nz).diagonal().array() += 2.0 * reg.gamma3 / lam;
    H.block(0, nz, nz, 1) -= 2.0 * reg.gamma3 * b / (lam * lam);
    H.block(nz, 0, 1, nz) -= 2.0 * reg.gamma3 * b.transpose() / (lam * lam);
    H(nz, nz) += reg.gamma2 / (lam * lam) + 2.0 * reg.gamma3 * b.squaredNorm() / (lam * lam * lam);
    return std::pair<Vector, Matrix>{g, H};
  };
  const auto& s0 = std::get<ScalarParams>(start);
  Vector v0(nz + 1);
  v0 << s0.b, s0.lambda;
  const NewtonResult r = detail::newton_minimize(v0, value, derivs, opts);
  return {unpack_v(r.x), r.exact};
}

// ---------------------------------------------------------------------------
// Full M-step

struct MStepOptions {
  SolverOptions solver;
  bool fixed_covariance = false;  // keep Lambda of Gaussian/StudentT blocks
};

struct MStepResult {
  ModelParams model;
  bool exact = true;
  int fallbacks = 0;  // subproblems where the incoming point was kept
};

/// Solves every switching and emission subproblem. Each returned block is
/// never worse than the incoming one on its own subproblem objective.
inline MStepResult m_step(const ModelParams& m, const SurrogateWeights& w, const RegressionData& data,
                          const Regularizer& reg, const MStepOptions& opts) {
  if (opts.fixed_covariance && !m.family.gaussian_like())
    throw ConfigError("fixed covariance requires a Gaussian or StudentT family");
  MStepResult out{m, true, 0};

  const SwitchStepResult sw = solve_switch_step(m.structure, w, data.Z, reg.gamma1, opts.solver, m.theta);
  ModelParams cand = m;
  cand.theta = sw.theta;
  if (switch_subproblem_objective(cand, w, data.Z, reg.gamma1) <= switch_subproblem_objective(m, w, data.Z, reg.gamma1))
    out.model.theta = sw.theta;
  else
    ++out.fallbacks;
  out.exact = out.exact && sw.exact;

  for (int j = 0; j < m.d; ++j) {
    const EmissionParams& cur = m.beta[static_cast<std::size_t>(j)];
    EmissionParams next = cur;
    bool exact = true;
    try {
      switch (m.family.tag) {
        case FamilyTag::Gaussian:
        case FamilyTag::StudentT: {
          const Matrix* fixed = opts.fixed_covariance ? &std::get<GaussianParams>(cur).Lambda : nullptr;
          next = solve_gaussian_step(w, data, reg, j, fixed);
          break;
        }
        case FamilyTag::Laplace: {
          const LaplaceStepResult r = solve_laplace_step(w, data, reg, j, std::get<LaplaceParams>(cur), opts.solver);
          next = r.params;
          exact = r.exact;
          break;
        }
        default: {
          auto r = solve_generic_smooth_step(m.family, w, data, reg, j, cur, opts.solver);
          next = std::move(r.first);
          exact = r.second;
        }
      }
    } catch (const NumericError&) {
      // degenerate block (e.g. a mode without posterior mass): keep it
      next = cur;
      exact = false;
    }
    const double f_next = emission_subproblem_objective(m.family, w, data, reg, j, next);
    const double f_cur = emission_subproblem_objective(m.family, w, data, reg, j, cur);
    if (f_next <= f_cur) {
      out.model.beta[static_cast<std::size_t>(j)] = std::move(next);
    } else {
      ++out.fallbacks;
    }
    out.exact = out.exact && exact;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Surrogate value and gradient

/// Qbar^k(theta) = Q0 + Q1(Theta) + Q2(beta) + r(theta). Without constants, Q0
/// and c_hat are omitted (they do not move the argmin).
inline double eval_surrogate(const ModelParams& m, const SurrogateWeights& w, const Trajectory& traj,
                             const Regularizer& reg, const Vector& alpha0, bool include_constants) {
  const LogTerms terms = compute_log_terms(m, traj);
  const RegressionData data{terms.Z.topRows(traj.horizon()), next_observations(traj)};
  const int T = traj.horizon();
  double q1 = 0.0;
  for (int t = 0; t < T; ++t)
    q1 -= (w.xi[static_cast<std::size_t>(t)].array() * terms.transition[static_cast<std::size_t>(t)].array())
              .unaryExpr([](double v) { return std::isnan(v) ? 0.0 : v; })
              .sum();
  double q2 = 0.0;
  for (int j = 0; j < m.d; ++j) {
    const EllGSeries s = ell_g_series(m.family, m.beta[static_cast<std::size_t>(j)], data.Y, data.Z);
    for (int t = 0; t < T; ++t) q2 += w.mode_weights(t, j) * (w.lin_coeffs(t, j) * s.ell[t] + s.g[t]);
  }
  double value = q1 + q2 + regularizer_value(m, reg);
  if (include_constants) {
    if (!w.neg_entropy) throw ConfigError("eval_surrogate: weights were built without constants");
    const Vector a0 = alpha0.size() ? alpha0 : uniform_simplex(m.d);
    double q0 = *w.neg_entropy - T * log_normalizer(m.family, m.n_y);
    for (int i = 0; i < m.d; ++i)
      if (w.gamma0[i] > 0.0) q0 -= w.gamma0[i] * std::log(a0[i]);
    value += q0 + w.c_hat;
  }
  return value;
}

/// Gradient of Q1 + Q2 + r at the base point theta^k, in pack() layout. At
/// theta^k it coincides with the gradient of the regularized NLL.
inline Vector surrogate_gradient_at_base(const ModelParams& m, const SurrogateWeights& w, const Trajectory& traj,
                                         const Regularizer& reg) {
  if (!m.family.smooth()) throw ConfigError("surrogate gradient is unsupported for the nonsmooth Laplace family");
  const RegressionData data = RegressionData::from(m, traj);
  const int T = traj.horizon();
  Vector grad(total_param_count(m));
  Eigen::Index pos = 0;
  for (int k = 0; k < m.theta_blocks(); ++k) {
    const SoftmaxProblem prob = detail::switch_problem(m.structure, m.d, k, w, data.Z, reg.gamma1);
    const Matrix g = prob.gradient(m.theta[static_cast<std::size_t>(k)]);
    detail::append_row_major(grad, pos, g);
  }
  const EmissionDims dims = m.emission_dims();
  const int per = param_count(m.family, dims);
  for (int j = 0; j < m.d; ++j) {
    const EmissionParams& p = m.beta[static_cast<std::size_t>(j)];
    Vector gj = emission_regularizer_gradient(m.family, p, reg);
    const Vector mass = w.mode_weights.col(j);
    const Vector wt = mass.cwiseProduct(w.lin_coeffs.col(j));
    if (m.family.gaussian_like()) {
      const auto& q = std::get<GaussianParams>(p);
      Eigen::LLT<Matrix> llt(q.Lambda);
      const Matrix lam_inv = llt.solve(Matrix::Identity(m.n_y, m.n_y));
      const Matrix Szz = data.Z.transpose() * wt.asDiagonal() * data.Z;
      const Matrix Syz = data.Y.transpose() * wt.asDiagonal() * data.Z;
      const Matrix Syy = data.Y.transpose() * wt.asDiagonal() * data.Y;
      const Matrix lib = lam_inv * q.B;
      const Matrix gB = -Syz + lib * Szz;
      const Matrix gL = 0.5 * Syy - 0.5 * lib * Szz * lib.transpose() - 0.5 * mass.sum() * lam_inv;
      Vector tmp(per);
      Eigen::Index p2 = 0;
      detail::append_row_major(tmp, p2, gB);
      detail::append_row_major(tmp, p2, gL);
      gj += tmp;
    } else {
      for (int t = 0; t < T; ++t) {
        if (mass[t] == 0.0) continue;
        const EllG lg = ell_g_with_grads(m.family, p, data.Y.row(t).transpose(), data.Z.row(t).transpose(), true);
        gj += wt[t] * lg.grad_ell + mass[t] * lg.grad_g;
      }
    }
    grad.segment(pos, per) = gj;
    pos += per;
  }
  return grad;
}

}  // namespace swid

#endif  // SWID_MSTEP_HPP
