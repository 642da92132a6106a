#include <chrono>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace swid;
using namespace swid::testing;

namespace {

double max_diff(const Posteriors& a, const Posteriors& b) {
  double m = (a.gamma - b.gamma).cwiseAbs().maxCoeff();
  for (std::size_t t = 0; t < a.xi.size(); ++t) m = std::max(m, (a.xi[t] - b.xi[t]).cwiseAbs().maxCoeff());
  return m;
}

template <typename F>
double seconds(F&& f, int reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TEST(ForwardBackward, SingleModeIsCertain) {
  const Instance inst = random_instance(FamilyTag::Gaussian, SwitchStructure::Full, 1, 20, 1);
  const Posteriors p = forward_backward(inst.model, inst.traj, Vector::Ones(1));
  EXPECT_LE((p.gamma.array() - 1.0).abs().maxCoeff(), 1e-12);
  for (const auto& x : p.xi) EXPECT_NEAR(x(0, 0), 1.0, 1e-12);
}

TEST(ForwardBackward, IdenticalModesGiveUniformPosterior) {
  Instance inst = random_instance(FamilyTag::Gaussian, SwitchStructure::Full, 3, 30, 2);
  for (auto& b : inst.model.theta) b.setZero();
  inst.model.beta[1] = inst.model.beta[2] = inst.model.beta[0];
  const Posteriors p = forward_backward(inst.model, inst.traj, uniform_simplex(3));
  EXPECT_LE((p.gamma.array() - 1.0 / 3).abs().maxCoeff(), 1e-12);
}

TEST(ForwardBackward, MatchesEnumeration) {
  std::uint64_t seed = 10;
  for (FamilyTag tag : all_families())
    for (auto s : {SwitchStructure::ModeDependent, SwitchStructure::Full, SwitchStructure::StateDependent})
      for (int d : {2, 3}) {
        const Instance inst = random_instance(tag, s, d, 6, seed++);
        const Posteriors a = forward_backward(inst.model, inst.traj, inst.alpha0);
        const Posteriors b = brute_force_posterior(inst.model, inst.traj, inst.alpha0);
        EXPECT_LE(max_diff(a, b), 1e-10) << family_name(tag) << " " << structure_name(s) << " d=" << d;
        EXPECT_NEAR(a.loglik, b.loglik, 1e-10 * std::max(1.0, std::abs(b.loglik)));
      }
}

TEST(ForwardBackward, MarginalConsistency) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Instance inst = random_instance(FamilyTag::StudentT, SwitchStructure::Full, 3, 80, 100 + seed);
    const Posteriors p = forward_backward(inst.model, inst.traj, inst.alpha0);
    for (int t = 0; t < p.horizon(); ++t) {
      const Matrix& x = p.xi[static_cast<std::size_t>(t)];
      EXPECT_NEAR(x.sum(), 1.0, 1e-10);
      EXPECT_GE(x.minCoeff(), 0.0);
      EXPECT_LE((x.rowwise().sum() - p.gamma.row(t).transpose()).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LE((x.colwise().sum() - p.gamma.row(t + 1)).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(ForwardBackward, LoglikIsMinusNll) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Instance inst = random_instance(FamilyTag::Laplace, SwitchStructure::ModeDependent, 3, 300, 200 + seed);
    const Posteriors p = forward_backward(inst.model, inst.traj, inst.alpha0);
    EXPECT_NEAR(p.loglik, -nll(inst.model, inst.traj, inst.alpha0), 1e-10 * std::abs(p.loglik));
  }
}

// the pairwise ratio cancels any positive per-step scale of the backward messages
TEST(ForwardBackward, BackwardScalingCancels) {
  const Instance inst = random_instance(FamilyTag::Gaussian, SwitchStructure::Full, 3, 50, 3);
  const LogTerms terms = compute_log_terms(inst.model, inst.traj);
  Rng rng(4);
  BackwardScaling sc{randn(50, 1, rng, 30.0)};
  const Posteriors a = forward_backward_from_terms(terms, inst.alpha0);
  const Posteriors b = forward_backward_from_terms(terms, inst.alpha0, sc);
  EXPECT_LE(max_diff(a, b), 1e-12);
}

TEST(ForwardBackward, LongSequenceStaysFinite) {
  const Benchmark b = gen_markov_arx(20000, 5);
  const Posteriors p = forward_backward(b.truth, b.traj, uniform_simplex(3));
  EXPECT_TRUE(p.gamma.allFinite());
  EXPECT_TRUE(std::isfinite(p.loglik));
}

// an unreduced softmax shifted by a constant column gives the same posterior
TEST(ForwardBackward, SoftmaxTranslationInvariance) {
  Instance inst = random_instance(FamilyTag::Gaussian, SwitchStructure::Full, 3, 6, 6);
  Rng rng(7);
  const int nz = inst.model.n_z();
  ModelParams shifted = inst.model;
  for (int i = 0; i < 3; ++i) {
    const Matrix full = randn(nz, 3, rng);
    const Matrix moved = full.colwise() + randn(nz, 1, rng).col(0);
    inst.model.theta[static_cast<std::size_t>(i)] = full.leftCols(2).colwise() - full.col(2);
    shifted.theta[static_cast<std::size_t>(i)] = moved.leftCols(2).colwise() - moved.col(2);
  }
  EXPECT_LE(max_diff(forward_backward(inst.model, inst.traj, inst.alpha0),
                     forward_backward(shifted, inst.traj, inst.alpha0)),
            1e-12);
}

TEST(ForwardBackward, RejectsBadAlpha0) {
  const Instance inst = random_instance(FamilyTag::Gaussian, SwitchStructure::Full, 2, 5, 8);
  EXPECT_THROW(forward_backward(inst.model, inst.traj, Vector::Constant(2, 0.6)), ConfigError);
  EXPECT_THROW(forward_backward(inst.model, inst.traj, Vector::Ones(3) / 3), ConfigError);
}

TEST(StateDependent, AgreesWithForwardBackward) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Instance inst = random_instance(FamilyTag::Gaussian, SwitchStructure::StateDependent, 4, 200, 300 + seed);
    const Posteriors a = posterior_state_dependent(inst.model, inst.traj, inst.alpha0);
    const Posteriors b = forward_backward(inst.model, inst.traj, inst.alpha0);
    EXPECT_LE(max_diff(a, b), 1e-10);
    EXPECT_NEAR(a.loglik, b.loglik, 1e-9 * std::abs(b.loglik));
  }
}

TEST(StateDependent, StaticStructureAlsoQualifies) {
  const Instance inst = random_instance(FamilyTag::Logistic, SwitchStructure::Static, 3, 50, 9);
  EXPECT_LE(max_diff(posterior_state_dependent(inst.model, inst.traj, inst.alpha0),
                     forward_backward(inst.model, inst.traj, inst.alpha0)),
            1e-10);
  const Instance full = random_instance(FamilyTag::Gaussian, SwitchStructure::Full, 2, 5, 9);
  EXPECT_THROW(posterior_state_dependent(full.model, full.traj), ConfigError);
}

TEST(StateDependent, UniformCase) {
  Instance inst = random_instance(FamilyTag::Gaussian, SwitchStructure::StateDependent, 3, 30, 10);
  for (auto& b : inst.model.theta) b.setZero();
  inst.model.beta[1] = inst.model.beta[2] = inst.model.beta[0];
  const Posteriors p = posterior_state_dependent(inst.model, inst.traj, uniform_simplex(3));
  EXPECT_LE((p.gamma.array() - 1.0 / 3).abs().maxCoeff(), 1e-12);
}

TEST(StateDependent, FasterAtManyModes) {
  const Instance inst = random_instance(FamilyTag::Gaussian, SwitchStructure::StateDependent, 32, 2000, 11, 1);
  const double fast = seconds([&] { posterior_state_dependent(inst.model, inst.traj, inst.alpha0); }, 3);
  const double slow = seconds([&] { forward_backward(inst.model, inst.traj, inst.alpha0); }, 3);
  EXPECT_GT(slow / fast, 1.0) << "fast " << fast << " s, general " << slow << " s";
}

TEST(BruteForce, SingleStepTwoModes) {
  const Instance inst = random_instance(FamilyTag::Gaussian, SwitchStructure::Full, 2, 1, 12);
  const Posteriors p = brute_force_posterior(inst.model, inst.traj, inst.alpha0);
  double w[2][2], total = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      w[a][b] = inst.alpha0[a] * std::exp(log_joint_fixed_modes(inst.model, inst.traj, {a, b}));
      total += w[a][b];
    }
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) EXPECT_NEAR(p.xi[0](a, b), w[a][b] / total, 1e-12);
  EXPECT_NEAR(p.gamma.row(0).sum(), 1.0, 1e-12);
  EXPECT_NEAR(p.gamma.row(1).sum(), 1.0, 1e-12);
}
