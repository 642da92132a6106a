#ifndef SWID_NUMERIC_HPP
#define SWID_NUMERIC_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <thread>
#include <vector>

#include "swid/error.hpp"

namespace swid {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Seedable generator used everywhere randomness is consumed.
using Rng = std::mt19937_64;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// ln(sum(exp(x))) with max-subtraction; returns -inf for an all -inf input.
template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  if (x.size() == 0) return kNegInf;
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.derived().array() - m).exp().sum());
}

inline double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

template <typename Derived>
Vector softmax(const Eigen::DenseBase<Derived>& x) {
  Vector out = x.derived();
  const double m = out.maxCoeff();
  out = (out.array() - m).exp();
  out /= out.sum();
  return out;
}

/// Log-determinant of a symmetric positive definite matrix; throws if not SPD.
inline double log_det_spd(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericError("matrix is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline bool is_spd(const Matrix& a) {
  if (a.rows() != a.cols()) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  return es.info() == Eigen::Success && es.eigenvalues().minCoeff() > 0.0;
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Draws one index from a probability vector.
inline int sample_index(const Vector& probs, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng) * probs.sum();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // u landed on the rounding tail: last index with positive mass
  for (Eigen::Index i = probs.size() - 1; i >= 0; --i)
    if (probs[i] > 0.0) return static_cast<int>(i);
  return static_cast<int>(probs.size() - 1);
}

/// Point drawn uniformly from the probability simplex.
/// Seed of stream k derived from a base seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t k) {
  std::uint64_t x = base + 0x9E3779B97F4A7C15ULL * (k + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline Vector random_simplex(int d, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = expo(rng);
  return v / v.sum();
}

/// Runs body(i) for i in [0, n). Iterations must be independent.
template <typename Body>
void parallel_for(std::int64_t n, Body&& body, std::int64_t min_chunk = 1024) {
  const auto hw = static_cast<std::int64_t>(std::max(1u, std::thread::hardware_concurrency()));
  const std::int64_t workers = std::min<std::int64_t>(hw, std::max<std::int64_t>(1, n / min_chunk));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (std::int64_t w = 0; w < workers; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min(n, lo + chunk);
    pool.emplace_back([lo, hi, &body] {
      for (std::int64_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace swid

#endif  // SWID_NUMERIC_HPP
