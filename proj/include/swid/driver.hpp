#ifndef SWID_DRIVER_HPP
#define SWID_DRIVER_HPP

#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "swid/mstep.hpp"

namespace swid {

/// Raised when an iteration increases the regularized NLL beyond the slack.
class MonotonicityError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// What a fit estimates: everything but the numbers.
struct ModelSpec {
  SwitchStructure structure = SwitchStructure::Full;
  FamilyKind family = FamilyKind::gaussian();
  int d = 2;
  RegressorConfig cfg;

  void validate() const {
    if (d < 1) throw ConfigError("d must be >= 1");
    family.validate();
    cfg.validate();
  }
};

struct FitOptions {
  int max_iters = 500;
  double grad_stop = 1e-4;
  double rel_decrease_stop = 1e-10;
  int n_restarts = 5;
  std::uint64_t seed = 0;
  double monotonicity_slack = 1e-8;
  SolverOptions solver;
  /// Holds Lambda of every Gaussian/StudentT mode at this value.
  std::optional<Matrix> fixed_lambda;
  /// Called after each E-step with (iteration, reg_nll, grad_norm).
  std::function<void(int, double, double)> on_iteration;

  void validate() const {
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
    if (!(grad_stop > 0)) throw ConfigError("grad_stop must be positive");
    if (!(rel_decrease_stop > 0)) throw ConfigError("rel_decrease_stop must be positive");
    if (n_restarts < 1) throw ConfigError("n_restarts must be >= 1");
    if (!(monotonicity_slack >= 0)) throw ConfigError("monotonicity_slack must be nonnegative");
    solver.validate();
  }
};

enum class StopReason { Gradient, RelativeDecrease, MaxIters };

inline std::string_view stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::Gradient: return "gradient";
    case StopReason::RelativeDecrease: return "relative-decrease";
    case StopReason::MaxIters: return "max-iters";
  }
  return "?";
}

struct IterationRecord {
  double reg_nll = 0.0;
  double grad_norm = std::numeric_limits<double>::quiet_NaN();  // NaN for Laplace
  double e_seconds = 0.0;
  double m_seconds = 0.0;
  double param_step = 0.0;  // max-abs change produced by the M-step of this iteration
  bool m_exact = true;
};

struct RestartSummary {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double train_reg_nll = std::numeric_limits<double>::infinity();
  double validation_nll = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  StopReason stop = StopReason::MaxIters;
};

struct FitReport {
  std::vector<IterationRecord> iterations;  // one per E-step, the last at the returned model
  StopReason stop = StopReason::MaxIters;
  ModelParams model;
  Vector alpha0;
  int best_restart = 0;
  std::vector<RestartSummary> restarts;

  double final_reg_nll() const { return iterations.back().reg_nll; }
  int m_steps() const { return static_cast<int>(iterations.size()) - 1; }
};

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

inline Matrix standard_normal(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::normal_distribution<double> n01;
  Matrix out(r, c);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = n01(rng);
  return out;
}

/// Least-squares L of Y ~ Z L^T (minimum norm when Z is rank deficient).
inline Matrix least_squares(const Matrix& Z, const Matrix& Y) {
  return Z.completeOrthogonalDecomposition().solve(Y).transpose();
}

inline Matrix inflated_precision(const Matrix& cov) {
  const auto n = cov.rows();
  Matrix c = symmetrize(cov);
  const double scale = std::max(c.trace() / static_cast<double>(n), 0.0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(c);
  if (es.eigenvalues().minCoeff() <= 1e-10 * std::max(scale, 1e-300))
    c.diagonal().array() += std::max(1e-3, 0.1 * scale);
  return symmetrize(c.inverse());
}

}  // namespace detail

struct Initialization {
  ModelParams model;
  Vector alpha0;
};

/// Random Theta (scale 0.1), emission blocks from a global regression fit
/// jittered per mode, alpha0 a random simplex point. d = 1 gets the plain fit.
inline Initialization initialize(const ModelSpec& spec, const Trajectory& traj, std::uint64_t seed,
                                 const std::optional<Matrix>& fixed_lambda = std::nullopt) {
  spec.validate();
  traj.validate();
  Rng rng(seed);
  const int ny = traj.n_y();
  const int nu = spec.cfg.t_u > 0 ? traj.n_u() : 0;
  const Matrix Zall = regressor_matrix(traj, spec.cfg);
  const Matrix Z = Zall.topRows(traj.horizon());
  const Matrix Y = next_observations(traj);
  const int nz = static_cast<int>(Z.cols());
  const int T = traj.horizon();
  const FamilyKind& fam = spec.family;
  if (fam.scalar_output() && ny != 1) throw ConfigError("family '" + std::string(family_name(fam.tag)) + "' needs one output column");

  Initialization out;
  std::vector<EmissionParams> beta;
  if (fam.tag == FamilyTag::Categorical) {
    for (int j = 0; j < spec.d; ++j) beta.emplace_back(CategoricalParams{0.1 * detail::standard_normal(nz, fam.n_classes, rng)});
  } else {
    const Matrix L = detail::least_squares(Z, Y);
    const Matrix R = Y - Z * L.transpose();
    const double jitter = spec.d > 1 ? 0.1 * std::max(L.cwiseAbs().maxCoeff(), 0.1) : 0.0;
    for (int j = 0; j < spec.d; ++j) {
      const Matrix Lj = spec.d > 1 ? Matrix(L + jitter * detail::standard_normal(ny, nz, rng)) : L;
      switch (fam.tag) {
        case FamilyTag::Gaussian:
        case FamilyTag::StudentT: {
          const Matrix Lambda = fixed_lambda ? *fixed_lambda : detail::inflated_precision(R.transpose() * R / T);
          beta.emplace_back(GaussianParams{Lambda * Lj, Lambda});
          break;
        }
        case FamilyTag::Laplace: {
          Vector r(ny);
          for (int c = 0; c < ny; ++c) r[c] = 1.0 / (std::sqrt(2.0) * std::max(R.col(c).cwiseAbs().mean(), 1e-6));
          beta.emplace_back(LaplaceParams{r.asDiagonal() * Lj, r});
          break;
        }
        default: {
          const double sd = std::max(std::sqrt(R.col(0).squaredNorm() / T), 1e-6);
          const double lam = (fam.tag == FamilyTag::Logistic ? std::acos(-1.0) / std::sqrt(3.0)
                                                               : std::acos(-1.0) / std::sqrt(6.0)) / sd;
          beta.emplace_back(ScalarParams{lam * Lj.row(0).transpose(), lam});
        }
      }
    }
  }
  out.model = ModelParams::make(spec.structure, fam, spec.cfg, ny, nu, std::move(beta));
  if (spec.d > 1)
    for (auto& block : out.model.theta) block = 0.1 * detail::standard_normal(block.rows(), block.cols(), rng);
  out.model.validate();
  out.alpha0 = random_simplex(spec.d, rng);
  return out;
}

// ---------------------------------------------------------------------------
// EM loop

namespace detail {

inline double max_abs_diff(const ModelParams& a, const ModelParams& b) {
  const Vector pa = pack(a);
  const Vector pb = pack(b);
  return pa.size() ? (pa - pb).cwiseAbs().maxCoeff() : 0.0;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Runs the majorization-minimization loop from (model0, alpha0). Each
/// iteration: E-step at the current point, alpha0 <- pi_0, surrogate weights,
/// switching and emission solves. The regularized NLL never increases by more
/// than the slack; a larger increase raises MonotonicityError.
inline FitReport fit(const ModelParams& model0, const Vector& alpha0_in, const Trajectory& traj, const Regularizer& reg,
                     const FitOptions& opts) {
  opts.validate();
  reg.validate();
  model0.validate();
  traj.validate();
  if (opts.fixed_lambda && !model0.family.gaussian_like())
    throw ConfigError("fixed covariance requires a Gaussian or StudentT family");
  check_simplex(alpha0_in, model0.d);

  FitReport rep;
  rep.model = model0;
  rep.alpha0 = alpha0_in;
  if (opts.fixed_lambda)
    for (auto& b : rep.model.beta) std::get<GaussianParams>(b).Lambda = *opts.fixed_lambda;
  const RegressionData data = RegressionData::from(rep.model, traj);
  MStepOptions mopts{opts.solver, opts.fixed_lambda.has_value()};
  std::vector<bool> frozen;
  if (opts.fixed_lambda) frozen = covariance_mask(rep.model);

  for (int k = 0;; ++k) {
    IterationRecord rec;
    auto t0 = std::chrono::steady_clock::now();
    const Posteriors post = e_step(rep.model, traj, rep.alpha0);
    rec.reg_nll = -post.loglik + regularizer_value(rep.model, reg);
    if (!std::isfinite(rec.reg_nll)) throw NumericError("non-finite regularized NLL at iteration " + std::to_string(k));
    const SurrogateWeights w = build_weights(rep.model, post, traj);
    if (rep.model.family.smooth()) {
      Vector g = surrogate_gradient_at_base(rep.model, w, traj, reg);
      for (std::size_t i = 0; i < frozen.size(); ++i)
        if (frozen[i]) g[static_cast<Eigen::Index>(i)] = 0.0;
      rec.grad_norm = g.norm();
    }
    rec.e_seconds = detail::seconds_since(t0);
    if (opts.on_iteration) opts.on_iteration(k, rec.reg_nll, rec.grad_norm);

    if (k > 0) {
      const double prev = rep.iterations.back().reg_nll;
      if (rec.reg_nll > prev + opts.monotonicity_slack)
        throw MonotonicityError("regularized NLL increased from " + std::to_string(prev) + " to " +
                                std::to_string(rec.reg_nll) + " at iteration " + std::to_string(k));
    }
    rep.iterations.push_back(rec);
    if (rec.grad_norm <= opts.grad_stop) {
      rep.stop = StopReason::Gradient;
      break;
    }
    if (k > 0) {
      const double prev = rep.iterations[rep.iterations.size() - 2].reg_nll;
      if ((prev - rec.reg_nll) < opts.rel_decrease_stop * std::max(1.0, std::abs(rec.reg_nll))) {
        rep.stop = StopReason::RelativeDecrease;
        break;
      }
    }
    if (k == opts.max_iters) {
      rep.stop = StopReason::MaxIters;
      break;
    }

    t0 = std::chrono::steady_clock::now();
    // pi_0 minimizes the cross entropy -sum pi_0 ln alpha0 over the simplex
    rep.alpha0 = w.gamma0 / w.gamma0.sum();
    MStepResult ms = m_step(rep.model, w, data, reg, mopts);
    rep.iterations.back().param_step = detail::max_abs_diff(ms.model, rep.model);
    rep.iterations.back().m_exact = ms.exact;
    rep.iterations.back().m_seconds = detail::seconds_since(t0);
    rep.model = std::move(ms.model);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Multi-start

/// Seed of restart r; independent of the number of restarts.
inline std::uint64_t restart_seed(std::uint64_t base, int r) { return derive_seed(base, static_cast<std::uint64_t>(r)); }

/// n_restarts independent fits from initialize(); the winner has the lowest
/// validation reg_nll when a validation trajectory is given, else the lowest
/// training reg_nll. Restarts run concurrently.
inline FitReport multistart_fit(const ModelSpec& spec, const Trajectory& traj, const Regularizer& reg,
                                const FitOptions& opts, const std::optional<Trajectory>& validation = std::nullopt) {
  opts.validate();
  spec.validate();
  const int n = opts.n_restarts;
  std::vector<std::optional<FitReport>> reports(static_cast<std::size_t>(n));
  std::vector<RestartSummary> summaries(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> fatal(static_cast<std::size_t>(n));
  FitOptions inner = opts;
  inner.on_iteration = nullptr;
  parallel_for(
      n,
      [&](std::int64_t r) {
        auto& s = summaries[static_cast<std::size_t>(r)];
        s.seed = restart_seed(opts.seed, static_cast<int>(r));
        try {
          const Initialization init = initialize(spec, traj, s.seed, opts.fixed_lambda);
          FitReport rep = fit(init.model, init.alpha0, traj, reg, inner);
          s.train_reg_nll = rep.final_reg_nll();
          s.iterations = rep.m_steps();
          s.stop = rep.stop;
          if (validation) s.validation_nll = reg_nll(rep.model, *validation, reg);
          reports[static_cast<std::size_t>(r)] = std::move(rep);
        } catch (const MonotonicityError&) {
          fatal[static_cast<std::size_t>(r)] = std::current_exception();
        } catch (const std::exception& e) {
          s.failed = true;
          s.error = e.what();
        }
      },
      1);
  for (const auto& e : fatal)
    if (e) std::rethrow_exception(e);

  int best = -1;
  std::string errors;
  for (int r = 0; r < n; ++r) {
    const auto& s = summaries[static_cast<std::size_t>(r)];
    if (s.failed) {
      errors += "\n  restart " + std::to_string(r) + ": " + s.error;
      continue;
    }
    const double score = validation ? s.validation_nll : s.train_reg_nll;
    if (!std::isfinite(score)) continue;
    if (best < 0) {
      best = r;
      continue;
    }
    const auto& b = summaries[static_cast<std::size_t>(best)];
    if (score < (validation ? b.validation_nll : b.train_reg_nll)) best = r;
  }
  if (best < 0) throw NumericError("all " + std::to_string(n) + " restarts failed:" + errors);

  FitReport out = std::move(*reports[static_cast<std::size_t>(best)]);
  out.best_restart = best;
  out.restarts = std::move(summaries);
  if (opts.on_iteration)
    for (std::size_t k = 0; k < out.iterations.size(); ++k)
      opts.on_iteration(static_cast<int>(k), out.iterations[k].reg_nll, out.iterations[k].grad_norm);
  return out;
}

}  // namespace swid

#endif  // SWID_DRIVER_HPP
