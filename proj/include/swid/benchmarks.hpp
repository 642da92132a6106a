#ifndef SWID_BENCHMARKS_HPP
#define SWID_BENCHMARKS_HPP

/// Synthetic systems used in the experiments, with their true parameters.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "swid/likelihood.hpp"

namespace swid {

struct Benchmark {
  Trajectory traj;
  ModelParams truth;
  std::vector<int> modes;  // xi_0..xi_T
};

namespace bench {

inline Matrix synthetic_A(int i) {
  Matrix A(2, 3);
  switch (i) {
    case 0: A << 0.9912, 0.1307, 0.2, -0.1305, 0.9914, 0.06; break;
    case 1: A << 0.94, 0.15, -0.01, -0.15, 0.94, -0.13; break;
    default: A << 0.97, 0.4, 0.1, -0.4, 0.97, 0.1;
  }
  return A;
}

inline Matrix synthetic_Theta(int i) {
  Matrix Th(3, 2);
  switch (i) {
    case 0: Th << 30, 10, 1, -16.07, -10, 10; break;
    case 1: Th << 30, 30, 20, -10, 0, 0; break;
    default: Th << 24.8, 0, 11.38, -28.62, -57.73, 7.07;
  }
  return Th;
}

inline constexpr double kSyntheticNoiseVar = 1e-3;

inline Vector marx_beta(int i) {
  Vector b(4);
  switch (i) {
    case 0: b << 1.143, -0.4346, 0.0572, 0.2415; break;
    case 1: b << 0.9534, -0.0475, 0.0618, 0.0336; break;
    default: b << 1.178, -0.09, 0.089, 0.15;
  }
  return b;
}

inline Matrix marx_P() {
  Matrix P(3, 3);
  P << 0.25, 0.1, 0.65, 0.55, 0.35, 0.1, 0.15, 0.15, 0.7;
  return P;
}

inline constexpr double kMarxNoiseVar = 0.025;

inline Vector pwa_beta(int i) {
  Vector b(5);
  switch (i) {
    case 0: b << 0.5, 1, 2, -0.3, 0.2; break;  // guard
    case 1: b << 0.1, 0.5, -0.4, 0.3, 0; break;
    default: b << 0.2, 0.4, 0.1, 0.4, 0;
  }
  return b;
}

inline constexpr double kPwaNoiseVar = 1e-4;
inline constexpr double kPwaInputVar = 0.25;
/// Gain turning the guard into a softmax logit for the reference model.
inline constexpr double kPwaGuardGain = 1e4;

inline GaussianParams gaussian_from_regression(const Matrix& L, double noise_var) {
  const auto ny = L.rows();
  const Matrix Lambda = Matrix::Identity(ny, ny) / noise_var;
  return {Lambda * L, Lambda};
}

}  // namespace bench

/// Two-state, three-mode system with full-dependence switching.
inline Benchmark gen_synthetic_3mode(int T, std::uint64_t seed) {
  if (T < 1) throw ConfigError("gen_synthetic_3mode: T must be >= 1");
  std::vector<EmissionParams> beta;
  for (int i = 0; i < 3; ++i) beta.emplace_back(bench::gaussian_from_regression(bench::synthetic_A(i), bench::kSyntheticNoiseVar));
  ModelParams m = ModelParams::make(SwitchStructure::Full, FamilyKind::gaussian(), {1, 0, true}, 2, 0, std::move(beta));
  for (int i = 0; i < 3; ++i) m.theta[static_cast<std::size_t>(i)] = bench::synthetic_Theta(i);
  Simulation sim = simulate(m, T, uniform_simplex(3), seed);
  return {std::move(sim.traj), std::move(m), std::move(sim.modes)};
}

/// Markov-jump ARX system, z_{t-1} = (y_{t-1}, y_{t-2}, u_{t-1}, u_{t-2}), u ~ U[-1, 1].
inline Benchmark gen_markov_arx(int T, std::uint64_t seed) {
  if (T < 1) throw ConfigError("gen_markov_arx: T must be >= 1");
  std::vector<EmissionParams> beta;
  for (int i = 0; i < 3; ++i)
    beta.emplace_back(bench::gaussian_from_regression(bench::marx_beta(i).transpose(), bench::kMarxNoiseVar));
  ModelParams m =
      ModelParams::make(SwitchStructure::ModeDependent, FamilyKind::gaussian(), {2, 2, false}, 1, 1, std::move(beta));
  const Matrix P = bench::marx_P();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) m.theta[static_cast<std::size_t>(i)](0, j) = std::log(P(i, j) / P(i, 2));
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Matrix u(T + 1, 1);
  for (int t = 0; t <= T; ++t) u(t, 0) = unif(rng);
  Simulation sim = simulate(m, T, uniform_simplex(3), rng(), {}, u);
  return {std::move(sim.traj), std::move(m), std::move(sim.modes)};
}

/// Piecewise affine system switching on the sign of beta_0^T z. The returned
/// reference model approximates the guard with a steep state-dependent softmax.
inline Benchmark gen_pwa(int T, std::uint64_t seed) {
  if (T < 1) throw ConfigError("gen_pwa: T must be >= 1");
  const RegressorConfig cfg{2, 2, true};
  std::vector<EmissionParams> beta;
  for (int i = 1; i <= 2; ++i)
    beta.emplace_back(bench::gaussian_from_regression(bench::pwa_beta(i).transpose(), bench::kPwaNoiseVar));
  ModelParams m = ModelParams::make(SwitchStructure::StateDependent, FamilyKind::gaussian(), cfg, 1, 1, std::move(beta));
  m.theta[0] = bench::kPwaGuardGain * bench::pwa_beta(0);

  Rng rng(seed);
  std::normal_distribution<double> input(0.0, std::sqrt(bench::kPwaInputVar));
  std::normal_distribution<double> noise(0.0, std::sqrt(bench::kPwaNoiseVar));
  Benchmark out;
  out.traj.y = Matrix::Zero(T + 1, 1);
  out.traj.u = Matrix(T + 1, 1);
  for (int t = 0; t <= T; ++t) (*out.traj.u)(t, 0) = input(rng);
  out.modes.assign(static_cast<std::size_t>(T + 1), 0);
  const Vector guard = bench::pwa_beta(0);
  for (int t = 0; t < T; ++t) {
    const Vector z = build_regressor(out.traj, cfg, t);
    const int mode = guard.dot(z) >= 0.0 ? 0 : 1;
    out.modes[static_cast<std::size_t>(t + 1)] = mode;
    out.traj.y(t + 1, 0) = bench::pwa_beta(mode + 1).dot(z) + noise(rng);
  }
  out.truth = std::move(m);
  return out;
}

struct OutlierResult {
  Trajectory traj;
  int perturbed = 0;
};

/// Adds uniform noise on [-max|y|, max|y|] (per component) to each observation
/// in the range independently with probability p. The maximum is taken over the range.
inline OutlierResult inject_outliers(const Trajectory& traj, double p, std::uint64_t seed,
                                     std::optional<IndexRange> range = std::nullopt) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("inject_outliers: p must lie in [0, 1]");
  const IndexRange r = range.value_or(IndexRange{0, traj.horizon()});
  if (r.first < 0 || r.last > traj.horizon() || r.first > r.last) throw ConfigError("inject_outliers: invalid range");
  OutlierResult out{traj, 0};
  const Vector bound = traj.y.middleRows(r.first, r.size()).cwiseAbs().colwise().maxCoeff().transpose();
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int t = r.first; t <= r.last; ++t) {
    if (!(unit(rng) < p)) continue;
    for (int c = 0; c < traj.n_y(); ++c) out.traj.y(t, c) += bound[c] * (2.0 * unit(rng) - 1.0);
    ++out.perturbed;
  }
  return out;
}

}  // namespace swid

#endif  // SWID_BENCHMARKS_HPP
