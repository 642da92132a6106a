#ifndef SWID_FAMILIES_HPP
#define SWID_FAMILIES_HPP

/// \file
/// Emission families p(y | z, beta) = C exp(-f(l(y, z, beta)) - g(y, z, beta)).
///
/// Each family is the quadruple (C, f, l, g) with f concave, increasing and
/// continuously differentiable, and beta -> l, beta -> g convex. Parameters are
/// stored in the coordinates in which l and g are convex:
///
///   Gaussian, StudentT   B = Lambda L, Lambda = Sigma^-1     (n_y x n_z, n_y x n_y)
///   Laplace              M = R L, R = Sigma^-1/2 (diagonal)  (n_y x n_z, n_y)
///   Logistic, Gumbel     b = lambda a, lambda = 1 / scale    (n_z, scalar)
///   Categorical          Theta (n_z x n_classes), y holds a class index
///
/// Flattened parameter layout (used by gradients and packing): matrices are
/// written row-major, Gaussian/StudentT as [B, Lambda], Laplace as [M, diag R],
/// scalar families as [b, lambda], Categorical as [Theta].

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>

#include "swid/error.hpp"
#include "swid/numeric.hpp"

namespace swid {

enum class FamilyTag { Gaussian, StudentT, Laplace, Logistic, Gumbel, Categorical };

struct FamilyKind {
  FamilyTag tag = FamilyTag::Gaussian;
  double nu = 0.0;     // StudentT degrees of freedom, fixed
  int n_classes = 0;   // Categorical only

  static FamilyKind gaussian() { return {FamilyTag::Gaussian, 0.0, 0}; }
  static FamilyKind student_t(double nu) { return {FamilyTag::StudentT, nu, 0}; }
  static FamilyKind laplace() { return {FamilyTag::Laplace, 0.0, 0}; }
  static FamilyKind logistic() { return {FamilyTag::Logistic, 0.0, 0}; }
  static FamilyKind gumbel() { return {FamilyTag::Gumbel, 0.0, 0}; }
  static FamilyKind categorical(int n) { return {FamilyTag::Categorical, 0.0, n}; }

  bool operator==(const FamilyKind&) const = default;

  bool gaussian_like() const { return tag == FamilyTag::Gaussian || tag == FamilyTag::StudentT; }
  bool scalar_output() const {
    return tag == FamilyTag::Logistic || tag == FamilyTag::Gumbel || tag == FamilyTag::Categorical;
  }
  bool smooth() const { return tag != FamilyTag::Laplace; }

  void validate() const {
    if (tag == FamilyTag::StudentT && !(nu > 0.0 && std::isfinite(nu)))
      throw ConfigError("StudentT requires nu > 0");
    if (tag == FamilyTag::Categorical && n_classes < 2)
      throw ConfigError("Categorical requires n_classes >= 2");
  }
};

inline std::string_view family_name(FamilyTag tag) {
  switch (tag) {
    case FamilyTag::Gaussian: return "gaussian";
    case FamilyTag::StudentT: return "student_t";
    case FamilyTag::Laplace: return "laplace";
    case FamilyTag::Logistic: return "logistic";
    case FamilyTag::Gumbel: return "gumbel";
    case FamilyTag::Categorical: return "categorical";
  }
  return "unknown";
}

inline FamilyTag family_from_name(std::string_view name) {
  for (auto tag : {FamilyTag::Gaussian, FamilyTag::StudentT, FamilyTag::Laplace, FamilyTag::Logistic,
                   FamilyTag::Gumbel, FamilyTag::Categorical})
    if (family_name(tag) == name) return tag;
  throw ConfigError("unknown family '" + std::string(name) + "'");
}

struct GaussianParams {
  Matrix B;       // n_y x n_z
  Matrix Lambda;  // n_y x n_y, SPD
};

struct LaplaceParams {
  Matrix M;  // n_y x n_z
  Vector R;  // diagonal of R, strictly positive
};

struct ScalarParams {
  Vector b;             // n_z
  double lambda = 1.0;  // > 0
};

struct CategoricalParams {
  Matrix Theta;  // n_z x n_classes
};

using EmissionParams = std::variant<GaussianParams, LaplaceParams, ScalarParams, CategoricalParams>;

// ---------------------------------------------------------------------------
// f and its derivative

struct FValue {
  double value;
  double derivative;
};

/// Upper bound of f' over the range l actually takes for the family.
inline double f_derivative_bound(const FamilyKind& kind, int n_y = 1) {
  switch (kind.tag) {
    case FamilyTag::StudentT: return (kind.nu + n_y) / kind.nu;
    case FamilyTag::Laplace: return std::numbers::sqrt2;
    case FamilyTag::Logistic: return 2.0;  // l = cosh(.) >= 1
    default: return 1.0;
  }
}

inline FValue f_value_and_derivative(const FamilyKind& kind, double x, int n_y = 1) {
  if (std::isnan(x)) throw DomainError("f: argument is NaN");
  switch (kind.tag) {
    case FamilyTag::StudentT: {
      const double lower = -kind.nu / 2.0;
      if (!(x > lower)) {
        std::ostringstream os;
        os << "f: StudentT argument " << x << " violates x > -nu/2 = " << lower;
        throw DomainError(os.str());
      }
      const double k = 0.5 * (kind.nu + n_y);
      return {k * std::log1p(2.0 * x / kind.nu), (kind.nu + n_y) / (kind.nu + 2.0 * x)};
    }
    case FamilyTag::Laplace:
      return {std::numbers::sqrt2 * x, std::numbers::sqrt2};
    case FamilyTag::Logistic: {
      if (!(x > 0.0)) {
        std::ostringstream os;
        os << "f: Logistic argument " << x << " violates x > 0";
        throw DomainError(os.str());
      }
      return {2.0 * std::log(x), 2.0 / x};
    }
    default:
      return {x, 1.0};
  }
}

inline constexpr double kDomainMargin = 1e-12;

/// Pulls l into the open domain of f; round-off can push it onto the boundary.
inline double clamp_to_f_domain(const FamilyKind& kind, double x) {
  switch (kind.tag) {
    case FamilyTag::StudentT: return std::max(x, -kind.nu / 2.0 + kDomainMargin);
    case FamilyTag::Logistic: return std::max(x, kDomainMargin);
    default: return x;
  }
}

/// ln C.
inline double log_normalizer(const FamilyKind& kind, int n_y) {
  const double n = n_y;
  switch (kind.tag) {
    case FamilyTag::Gaussian: return -0.5 * n * std::log(2.0 * std::numbers::pi);
    case FamilyTag::StudentT:
      return std::lgamma(0.5 * (kind.nu + n)) - std::lgamma(0.5 * kind.nu) -
             0.5 * n * std::log(std::numbers::pi * kind.nu);
    case FamilyTag::Laplace: return -0.5 * n * std::log(2.0);
    case FamilyTag::Logistic: return std::log(0.25);
    case FamilyTag::Gumbel:
    case FamilyTag::Categorical: return 0.0;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Parameter shapes

struct EmissionDims {
  int n_y = 1;
  int n_z = 1;
};

inline int param_count(const FamilyKind& kind, EmissionDims dims) {
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT: return dims.n_y * dims.n_z + dims.n_y * dims.n_y;
    case FamilyTag::Laplace: return dims.n_y * dims.n_z + dims.n_y;
    case FamilyTag::Logistic:
    case FamilyTag::Gumbel: return dims.n_z + 1;
    case FamilyTag::Categorical: return dims.n_z * kind.n_classes;
  }
  return 0;
}

inline EmissionDims emission_dims(const EmissionParams& p) {
  return std::visit(
      [](const auto& q) -> EmissionDims {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, GaussianParams>)
          return {static_cast<int>(q.B.rows()), static_cast<int>(q.B.cols())};
        else if constexpr (std::is_same_v<T, LaplaceParams>)
          return {static_cast<int>(q.M.rows()), static_cast<int>(q.M.cols())};
        else if constexpr (std::is_same_v<T, ScalarParams>)
          return {1, static_cast<int>(q.b.size())};
        else
          return {1, static_cast<int>(q.Theta.rows())};
      },
      p);
}

namespace detail {

inline void append_row_major(Vector& out, Eigen::Index& pos, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[pos++] = m(i, j);
}

inline Matrix read_row_major(const Vector& in, Eigen::Index& pos, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = in[pos++];
  return m;
}

template <typename T>
const T& expect_variant(const EmissionParams& p, const FamilyKind& kind) {
  const T* q = std::get_if<T>(&p);
  if (!q) throw ConfigError("emission parameters do not match family " + std::string(family_name(kind.tag)));
  return *q;
}

}  // namespace detail

inline Vector flatten(const FamilyKind& kind, const EmissionParams& p) {
  const EmissionDims dims = emission_dims(p);
  Vector out(param_count(kind, dims));
  Eigen::Index pos = 0;
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT: {
      const auto& q = detail::expect_variant<GaussianParams>(p, kind);
      detail::append_row_major(out, pos, q.B);
      detail::append_row_major(out, pos, q.Lambda);
      break;
    }
    case FamilyTag::Laplace: {
      const auto& q = detail::expect_variant<LaplaceParams>(p, kind);
      detail::append_row_major(out, pos, q.M);
      out.segment(pos, q.R.size()) = q.R;
      break;
    }
    case FamilyTag::Logistic:
    case FamilyTag::Gumbel: {
      const auto& q = detail::expect_variant<ScalarParams>(p, kind);
      out.head(q.b.size()) = q.b;
      out[q.b.size()] = q.lambda;
      break;
    }
    case FamilyTag::Categorical:
      detail::append_row_major(out, pos, detail::expect_variant<CategoricalParams>(p, kind).Theta);
      break;
  }
  return out;
}

inline EmissionParams unflatten(const FamilyKind& kind, EmissionDims dims, const Vector& v) {
  if (v.size() != param_count(kind, dims)) throw ConfigError("unflatten: parameter vector has wrong length");
  Eigen::Index pos = 0;
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT: {
      GaussianParams q;
      q.B = detail::read_row_major(v, pos, dims.n_y, dims.n_z);
      q.Lambda = detail::read_row_major(v, pos, dims.n_y, dims.n_y);
      return q;
    }
    case FamilyTag::Laplace: {
      LaplaceParams q;
      q.M = detail::read_row_major(v, pos, dims.n_y, dims.n_z);
      q.R = v.segment(pos, dims.n_y);
      return q;
    }
    case FamilyTag::Logistic:
    case FamilyTag::Gumbel: return ScalarParams{v.head(dims.n_z), v[dims.n_z]};
    case FamilyTag::Categorical:
      return CategoricalParams{detail::read_row_major(v, pos, dims.n_z, kind.n_classes)};
  }
  throw ConfigError("unflatten: unknown family");
}

/// Checks shapes and the positivity constraints (SPD Lambda, R > 0, lambda > 0).
inline void validate_params(const FamilyKind& kind, const EmissionParams& p, EmissionDims dims) {
  kind.validate();
  auto fail = [&](const std::string& what) {
    throw ConfigError(std::string(family_name(kind.tag)) + " parameters: " + what);
  };
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT: {
      const auto& q = detail::expect_variant<GaussianParams>(p, kind);
      if (q.B.rows() != dims.n_y || q.B.cols() != dims.n_z) fail("B has wrong shape");
      if (q.Lambda.rows() != dims.n_y || q.Lambda.cols() != dims.n_y) fail("Lambda has wrong shape");
      if (!q.B.allFinite() || !q.Lambda.allFinite()) fail("non-finite entries");
      if (!is_spd(q.Lambda)) fail("Lambda is not positive definite");
      break;
    }
    case FamilyTag::Laplace: {
      const auto& q = detail::expect_variant<LaplaceParams>(p, kind);
      if (q.M.rows() != dims.n_y || q.M.cols() != dims.n_z) fail("M has wrong shape");
      if (q.R.size() != dims.n_y) fail("R has wrong shape");
      if (!q.M.allFinite() || !q.R.allFinite()) fail("non-finite entries");
      if (q.R.minCoeff() <= 0.0) fail("R diagonal must be positive");
      break;
    }
    case FamilyTag::Logistic:
    case FamilyTag::Gumbel: {
      const auto& q = detail::expect_variant<ScalarParams>(p, kind);
      if (dims.n_y != 1) fail("scalar family requires n_y = 1");
      if (q.b.size() != dims.n_z) fail("b has wrong length");
      if (!q.b.allFinite() || !std::isfinite(q.lambda)) fail("non-finite entries");
      if (!(q.lambda > 0.0)) fail("lambda must be positive");
      break;
    }
    case FamilyTag::Categorical: {
      const auto& q = detail::expect_variant<CategoricalParams>(p, kind);
      if (dims.n_y != 1) fail("categorical family requires n_y = 1");
      if (q.Theta.rows() != dims.n_z || q.Theta.cols() != kind.n_classes) fail("Theta has wrong shape");
      if (!q.Theta.allFinite()) fail("non-finite entries");
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Natural parameter conversion

/// Location matrix L and covariance Sigma (scale for scalar families, 1 x 1).
struct NaturalParams {
  Matrix L;
  Matrix Sigma;
};

inline NaturalParams to_natural(const FamilyKind& kind, const EmissionParams& p) {
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT: {
      const auto& q = detail::expect_variant<GaussianParams>(p, kind);
      Eigen::LLT<Matrix> llt(q.Lambda);
      if (llt.info() != Eigen::Success) throw NumericError("Lambda is not positive definite");
      const Matrix sigma = llt.solve(Matrix::Identity(q.Lambda.rows(), q.Lambda.cols()));
      return {llt.solve(q.B), symmetrize(sigma)};
    }
    case FamilyTag::Laplace: {
      const auto& q = detail::expect_variant<LaplaceParams>(p, kind);
      const Vector inv = q.R.cwiseInverse();
      return {inv.asDiagonal() * q.M, inv.cwiseProduct(inv).asDiagonal()};
    }
    case FamilyTag::Logistic:
    case FamilyTag::Gumbel: {
      const auto& q = detail::expect_variant<ScalarParams>(p, kind);
      Matrix sigma(1, 1);
      sigma(0, 0) = 1.0 / q.lambda;
      return {(q.b / q.lambda).transpose(), sigma};
    }
    case FamilyTag::Categorical: break;
  }
  throw ConfigError("natural parameters are not defined for the categorical family");
}

inline EmissionParams from_natural(const FamilyKind& kind, const NaturalParams& nat) {
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT: {
      Eigen::LLT<Matrix> llt(nat.Sigma);
      if (llt.info() != Eigen::Success) throw NumericError("Sigma is not positive definite");
      const Matrix lambda = symmetrize(llt.solve(Matrix::Identity(nat.Sigma.rows(), nat.Sigma.cols())));
      return GaussianParams{lambda * nat.L, lambda};
    }
    case FamilyTag::Laplace: {
      const Vector r = nat.Sigma.diagonal().cwiseSqrt().cwiseInverse();
      return LaplaceParams{r.asDiagonal() * nat.L, r};
    }
    case FamilyTag::Logistic:
    case FamilyTag::Gumbel: {
      const double lambda = 1.0 / nat.Sigma(0, 0);
      return ScalarParams{lambda * nat.L.row(0).transpose(), lambda};
    }
    case FamilyTag::Categorical: break;
  }
  throw ConfigError("natural parameters are not defined for the categorical family");
}

// ---------------------------------------------------------------------------
// l and g

struct EllG {
  double ell = 0.0;
  double g = 0.0;
  Vector grad_ell;  // flattened layout, empty unless requested
  Vector grad_g;
  bool subgradient = false;  // grad_ell is one element of a subdifferential
};

namespace detail {

inline int class_index(double y, const FamilyKind& kind) {
  const double r = std::round(y);
  if (r != y || r < 0 || r >= kind.n_classes) {
    std::ostringstream os;
    os << "categorical observation " << y << " is not a class index in [0, " << kind.n_classes << ")";
    throw DataError(os.str());
  }
  return static_cast<int>(r);
}

inline void check_dims(const FamilyKind& kind, const EmissionParams& p, const Vector& y, const Vector& z) {
  const EmissionDims dims = emission_dims(p);
  if (y.size() != dims.n_y || z.size() != dims.n_z) {
    std::ostringstream os;
    os << family_name(kind.tag) << ": dimension mismatch (y " << y.size() << " vs " << dims.n_y << ", z "
       << z.size() << " vs " << dims.n_z << ")";
    throw ConfigError(os.str());
  }
}

}  // namespace detail

/// l(y, z, beta), g(y, z, beta) and optionally their gradients in beta.
inline EllG ell_g_with_grads(const FamilyKind& kind, const EmissionParams& p, const Vector& y, const Vector& z,
                             bool with_grads = true) {
  detail::check_dims(kind, p, y, z);
  const EmissionDims dims = emission_dims(p);
  EllG out;
  if (with_grads) {
    out.grad_ell = Vector::Zero(param_count(kind, dims));
    out.grad_g = Vector::Zero(param_count(kind, dims));
  }
  const int ny = dims.n_y;
  const int nz = dims.n_z;
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT: {
      const auto& q = detail::expect_variant<GaussianParams>(p, kind);
      Eigen::LLT<Matrix> llt(q.Lambda);
      if (llt.info() != Eigen::Success) throw NumericError("Lambda is not positive definite");
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      const Vector bz = q.B * z;
      const Vector lam_inv_bz = llt.solve(bz);
      const double quad_y = 0.5 * y.dot(q.Lambda * y);
      const double cross = y.dot(bz);
      const double quad_z = 0.5 * bz.dot(lam_inv_bz);
      if (kind.tag == FamilyTag::Gaussian) {
        out.ell = quad_y - cross;
        out.g = quad_z - 0.5 * logdet;
      } else {
        out.ell = quad_y - cross + quad_z;
        out.g = -0.5 * logdet;
      }
      if (with_grads) {
        const Matrix lam_inv = llt.solve(Matrix::Identity(ny, ny));
        const Matrix dB_cross = -y * z.transpose();
        const Matrix dB_quad = lam_inv_bz * z.transpose();
        const Matrix dL_quad_y = 0.5 * y * y.transpose();
        const Matrix dL_quad_z = -0.5 * lam_inv_bz * lam_inv_bz.transpose();
        const Matrix dL_logdet = -0.5 * lam_inv;
        Eigen::Index pos = 0;
        Matrix gb_ell = dB_cross;
        Matrix gl_ell = dL_quad_y;
        Matrix gb_g = Matrix::Zero(ny, nz);
        Matrix gl_g = dL_logdet;
        if (kind.tag == FamilyTag::Gaussian) {
          gb_g = dB_quad;
          gl_g += dL_quad_z;
        } else {
          gb_ell += dB_quad;
          gl_ell += dL_quad_z;
        }
        detail::append_row_major(out.grad_ell, pos, gb_ell);
        detail::append_row_major(out.grad_ell, pos, gl_ell);
        pos = 0;
        detail::append_row_major(out.grad_g, pos, gb_g);
        detail::append_row_major(out.grad_g, pos, gl_g);
      }
      break;
    }
    case FamilyTag::Laplace: {
      const auto& q = detail::expect_variant<LaplaceParams>(p, kind);
      const Vector resid = q.R.cwiseProduct(y) - q.M * z;
      out.ell = resid.lpNorm<1>();
      out.g = -q.R.array().log().sum();
      out.subgradient = true;
      if (with_grads) {
        for (int i = 0; i < ny; ++i) {
          const double s = resid[i] > 0 ? 1.0 : (resid[i] < 0 ? -1.0 : 0.0);
          out.grad_ell.segment(i * nz, nz) = -s * z;
          out.grad_ell[ny * nz + i] = s * y[i];
          out.grad_g[ny * nz + i] = -1.0 / q.R[i];
        }
      }
      break;
    }
    case FamilyTag::Logistic: {
      const auto& q = detail::expect_variant<ScalarParams>(p, kind);
      const double u = q.lambda * y[0] - q.b.dot(z);
      out.ell = std::cosh(0.5 * u);
      out.g = -std::log(q.lambda);
      if (with_grads) {
        const double dl_du = 0.5 * std::sinh(0.5 * u);
        out.grad_ell.head(nz) = -dl_du * z;
        out.grad_ell[nz] = dl_du * y[0];
        out.grad_g[nz] = -1.0 / q.lambda;
      }
      break;
    }
    case FamilyTag::Gumbel: {
      const auto& q = detail::expect_variant<ScalarParams>(p, kind);
      const double u = q.lambda * y[0] - q.b.dot(z);
      const double e = std::exp(-u);
      out.ell = e;
      out.g = -std::log(q.lambda) + u;
      if (with_grads) {
        out.grad_ell.head(nz) = e * z;
        out.grad_ell[nz] = -e * y[0];
        out.grad_g.head(nz) = -z;
        out.grad_g[nz] = -1.0 / q.lambda + y[0];
      }
      break;
    }
    case FamilyTag::Categorical: {
      const auto& q = detail::expect_variant<CategoricalParams>(p, kind);
      const int cls = detail::class_index(y[0], kind);
      const Vector logits = q.Theta.transpose() * z;
      out.ell = -logits[cls];
      out.g = log_sum_exp(logits);
      if (with_grads) {
        const int k = kind.n_classes;
        const Vector sm = softmax(logits);
        for (int r = 0; r < nz; ++r) {
          out.grad_ell[r * k + cls] = -z[r];
          for (int c = 0; c < k; ++c) out.grad_g[r * k + c] = z[r] * sm[c];
        }
      }
      break;
    }
  }
  return out;
}

/// l_t and g_t for every row of (Y, Z): row t of Y is y_{t+1}, row t of Z is z_t.
struct EllGSeries {
  Vector ell;
  Vector g;
};

inline EllGSeries ell_g_series(const FamilyKind& kind, const EmissionParams& p, const Matrix& Y, const Matrix& Z) {
  const Eigen::Index n = Z.rows();
  if (Y.rows() != n) throw ConfigError("ell_g_series: Y and Z differ in length");
  const EmissionDims dims = emission_dims(p);
  if (Y.cols() != dims.n_y || Z.cols() != dims.n_z) throw ConfigError("ell_g_series: dimension mismatch");
  EllGSeries out{Vector(n), Vector(n)};
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT: {
      const auto& q = detail::expect_variant<GaussianParams>(p, kind);
      Eigen::LLT<Matrix> llt(q.Lambda);
      if (llt.info() != Eigen::Success) throw NumericError("Lambda is not positive definite");
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      const Matrix bz = Z * q.B.transpose();  // n x n_y
      const Matrix lam_inv_bz = llt.solve(bz.transpose()).transpose();
      const Vector quad_y = 0.5 * ((Y * q.Lambda).cwiseProduct(Y)).rowwise().sum();
      const Vector cross = Y.cwiseProduct(bz).rowwise().sum();
      const Vector quad_z = 0.5 * bz.cwiseProduct(lam_inv_bz).rowwise().sum();
      if (kind.tag == FamilyTag::Gaussian) {
        out.ell = quad_y - cross;
        out.g = quad_z.array() - 0.5 * logdet;
      } else {
        // evaluated from the residual to avoid cancellation for large Lambda
        const Matrix resid = Y - lam_inv_bz;
        out.ell = 0.5 * ((resid * q.Lambda).cwiseProduct(resid)).rowwise().sum();
        out.g.setConstant(-0.5 * logdet);
      }
      break;
    }
    case FamilyTag::Laplace: {
      const auto& q = detail::expect_variant<LaplaceParams>(p, kind);
      const Matrix resid = Y * q.R.asDiagonal() - Z * q.M.transpose();
      out.ell = resid.cwiseAbs().rowwise().sum();
      out.g.setConstant(-q.R.array().log().sum());
      break;
    }
    case FamilyTag::Logistic: {
      const auto& q = detail::expect_variant<ScalarParams>(p, kind);
      const Vector u = q.lambda * Y.col(0) - Z * q.b;
      out.ell = (0.5 * u.array()).cosh();
      out.g.setConstant(-std::log(q.lambda));
      break;
    }
    case FamilyTag::Gumbel: {
      const auto& q = detail::expect_variant<ScalarParams>(p, kind);
      const Vector u = q.lambda * Y.col(0) - Z * q.b;
      out.ell = (-u.array()).exp();
      out.g = u.array() - std::log(q.lambda);
      break;
    }
    case FamilyTag::Categorical: {
      const auto& q = detail::expect_variant<CategoricalParams>(p, kind);
      const Matrix logits = Z * q.Theta;
      for (Eigen::Index t = 0; t < n; ++t) {
        const int cls = detail::class_index(Y(t, 0), kind);
        out.ell[t] = -logits(t, cls);
        out.g[t] = log_sum_exp(logits.row(t));
      }
      break;
    }
  }
  return out;
}

/// ln p(y_{t+1} | z_t) for every row, = ln C - f(l_t) - g_t.
inline Vector log_density_series(const FamilyKind& kind, const EmissionParams& p, const Matrix& Y, const Matrix& Z) {
  const EllGSeries s = ell_g_series(kind, p, Y, Z);
  const int ny = static_cast<int>(Y.cols());
  const double log_c = log_normalizer(kind, ny);
  Vector out(s.ell.size());
  for (Eigen::Index t = 0; t < out.size(); ++t)
    out[t] = log_c - f_value_and_derivative(kind, clamp_to_f_domain(kind, s.ell[t]), ny).value - s.g[t];
  return out;
}

inline double log_density(const FamilyKind& kind, const EmissionParams& p, const Vector& y, const Vector& z) {
  const EllG lg = ell_g_with_grads(kind, p, y, z, false);
  const int ny = static_cast<int>(y.size());
  return log_normalizer(kind, ny) -
         f_value_and_derivative(kind, clamp_to_f_domain(kind, lg.ell), ny).value - lg.g;
}

// ---------------------------------------------------------------------------
// Sampling

inline Vector sample_emission(const FamilyKind& kind, const EmissionParams& p, const Vector& z, Rng& rng) {
  const EmissionDims dims = emission_dims(p);
  if (z.size() != dims.n_z) throw ConfigError("sample_emission: regressor has wrong dimension");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto open_uniform = [&] {
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    return u;
  };
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT: {
      const auto& q = detail::expect_variant<GaussianParams>(p, kind);
      Eigen::LLT<Matrix> llt(q.Lambda);
      if (llt.info() != Eigen::Success) throw NumericError("Lambda is not positive definite");
      const Vector mean = llt.solve(q.B * z);
      Vector e(dims.n_y);
      for (auto& v : e) v = normal(rng);
      // Lambda = U^T U  =>  U^-1 e has covariance Lambda^-1
      Vector dev = llt.matrixU().solve(e);
      if (kind.tag == FamilyTag::StudentT) {
        std::chi_squared_distribution<double> chi2(kind.nu);
        dev *= std::sqrt(kind.nu / chi2(rng));
      }
      return mean + dev;
    }
    case FamilyTag::Laplace: {
      const auto& q = detail::expect_variant<LaplaceParams>(p, kind);
      Vector y(dims.n_y);
      const Vector loc = q.R.cwiseInverse().asDiagonal() * (q.M * z);
      for (int i = 0; i < dims.n_y; ++i) {
        // standard variable with density 2^-1/2 exp(-sqrt2 |e|)
        const double u = open_uniform() - 0.5;
        const double e = -std::copysign(1.0, u) * std::log1p(-2.0 * std::abs(u)) / std::numbers::sqrt2;
        y[i] = loc[i] + e / q.R[i];
      }
      return y;
    }
    case FamilyTag::Logistic: {
      const auto& q = detail::expect_variant<ScalarParams>(p, kind);
      const double u = open_uniform();
      Vector y(1);
      y[0] = (q.b.dot(z) + std::log(u / (1.0 - u))) / q.lambda;
      return y;
    }
    case FamilyTag::Gumbel: {
      const auto& q = detail::expect_variant<ScalarParams>(p, kind);
      Vector y(1);
      y[0] = (q.b.dot(z) - std::log(-std::log(open_uniform()))) / q.lambda;
      return y;
    }
    case FamilyTag::Categorical: {
      const auto& q = detail::expect_variant<CategoricalParams>(p, kind);
      Vector y(1);
      y[0] = sample_index(softmax(q.Theta.transpose() * z), rng);
      return y;
    }
  }
  throw ConfigError("sample_emission: unknown family");
}

/// Conditional mean of y given z (class-probability-weighted index for Categorical).
inline Vector emission_mean(const FamilyKind& kind, const EmissionParams& p, const Vector& z) {
  switch (kind.tag) {
    case FamilyTag::Gumbel: {
      const auto& q = detail::expect_variant<ScalarParams>(p, kind);
      Vector y(1);
      y[0] = (q.b.dot(z) + std::numbers::egamma) / q.lambda;
      return y;
    }
    case FamilyTag::Categorical: {
      const auto& q = detail::expect_variant<CategoricalParams>(p, kind);
      const Vector sm = softmax(q.Theta.transpose() * z);
      Vector y(1);
      y[0] = sm.dot(Vector::LinSpaced(sm.size(), 0.0, static_cast<double>(sm.size() - 1)));
      return y;
    }
    default: return to_natural(kind, p).L * z;
  }
}

}  // namespace swid

#endif  // SWID_FAMILIES_HPP
