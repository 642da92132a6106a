#ifndef SWID_MODEL_HPP
#define SWID_MODEL_HPP

#include <string>
#include <string_view>
#include <vector>

#include "swid/data.hpp"
#include "swid/families.hpp"

namespace swid {

/// Which of (z_t, xi_t) the switching distribution depends on.
enum class SwitchStructure { Static, ModeDependent, StateDependent, Full };

inline std::string_view structure_name(SwitchStructure s) {
  switch (s) {
    case SwitchStructure::Static: return "static";
    case SwitchStructure::ModeDependent: return "mode_dependent";
    case SwitchStructure::StateDependent: return "state_dependent";
    case SwitchStructure::Full: return "full";
  }
  return "unknown";
}

inline SwitchStructure structure_from_name(std::string_view name) {
  for (auto s : {SwitchStructure::Static, SwitchStructure::ModeDependent, SwitchStructure::StateDependent,
                 SwitchStructure::Full})
    if (structure_name(s) == name) return s;
  throw ConfigError("unknown switching structure '" + std::string(name) + "'");
}

inline bool depends_on_mode(SwitchStructure s) {
  return s == SwitchStructure::ModeDependent || s == SwitchStructure::Full;
}
inline bool depends_on_state(SwitchStructure s) {
  return s == SwitchStructure::StateDependent || s == SwitchStructure::Full;
}

/// Nonnegative weights of r(theta) = r1(Theta) + r2(beta).
///
/// r1 = gamma1/2 sum_i ||Theta_i||_F^2. r2 per mode:
///   Gaussian, StudentT  1/2 [gamma2 (tr Lambda - ln det Lambda) + gamma3 ||B||^2_{Lambda^-1}]
///   Laplace             gamma2 sum_i (R_ii - ln R_ii) + gamma3 ||M||_F^2
///   Logistic, Gumbel    gamma2 (lambda - ln lambda) + gamma3 ||b||^2 / lambda
///   Categorical         gamma3/2 ||Theta_cat||_F^2
struct Regularizer {
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double gamma3 = 0.0;

  void validate() const {
    if (gamma1 < 0 || gamma2 < 0 || gamma3 < 0) throw ConfigError("regularizer weights must be nonnegative");
  }
};

/// theta = (Theta, beta) plus the structural metadata fixing its layout.
///
/// Theta holds one block per previous mode when the switching depends on the
/// mode, otherwise a single block; each block has d-1 columns (the logit of the
/// last mode is pinned to zero) and n_z rows when it depends on the state,
/// otherwise one row acting on a constant 1.
struct ModelParams {
  SwitchStructure structure = SwitchStructure::Full;
  FamilyKind family;
  int d = 1;
  RegressorConfig cfg;
  int n_y = 1;
  int n_u = 0;
  std::vector<Matrix> theta;
  std::vector<EmissionParams> beta;

  int n_z() const { return cfg.n_z(n_y, cfg.t_u > 0 ? n_u : 0); }
  int theta_blocks() const { return depends_on_mode(structure) ? d : 1; }
  int theta_rows() const { return depends_on_state(structure) ? n_z() : 1; }
  const Matrix& theta_block(int prev_mode) const {
    return theta[depends_on_mode(structure) ? static_cast<std::size_t>(prev_mode) : 0];
  }
  EmissionDims emission_dims() const { return {n_y, n_z()}; }

  void validate() const {
    if (d < 1) throw ConfigError("mode count d must be >= 1");
    family.validate();
    cfg.validate();
    if (family.scalar_output() && n_y != 1) throw ConfigError("scalar families require n_y = 1");
    if (static_cast<int>(theta.size()) != theta_blocks())
      throw ConfigError("Theta has " + std::to_string(theta.size()) + " blocks, structure requires " +
                        std::to_string(theta_blocks()));
    for (const auto& block : theta) {
      if (block.rows() != theta_rows() || block.cols() != d - 1) throw ConfigError("Theta block has wrong shape");
      if (!block.allFinite()) throw ConfigError("Theta has non-finite entries");
    }
    if (static_cast<int>(beta.size()) != d) throw ConfigError("beta must hold exactly d emission blocks");
    for (const auto& b : beta) validate_params(family, b, emission_dims());
  }

  /// Model with all-zero Theta and the given emission blocks.
  static ModelParams make(SwitchStructure s, FamilyKind fam, RegressorConfig cfg, int n_y, int n_u,
                          std::vector<EmissionParams> beta) {
    ModelParams m;
    m.structure = s;
    m.family = fam;
    m.d = static_cast<int>(beta.size());
    m.cfg = cfg;
    m.n_y = n_y;
    m.n_u = n_u;
    m.beta = std::move(beta);
    m.theta.assign(static_cast<std::size_t>(m.theta_blocks()), Matrix::Zero(m.theta_rows(), m.d - 1));
    return m;
  }
};

/// Logits of p(xi_{t+1} = . | z, xi_t = prev_mode); the last entry is 0.
inline Vector switch_logits(const ModelParams& m, const Vector& z, int prev_mode) {
  if (prev_mode < 0 || prev_mode >= m.d) throw ConfigError("switch_logits: mode index out of range");
  Vector out = Vector::Zero(m.d);
  const Matrix& block = m.theta_block(prev_mode);
  if (depends_on_state(m.structure)) {
    if (z.size() != m.n_z()) throw ConfigError("switch_logits: regressor has wrong dimension");
    out.head(m.d - 1) = block.transpose() * z;
  } else {
    out.head(m.d - 1) = block.row(0).transpose();
  }
  return out;
}

/// Row-stochastic transition matrix in log domain: entry (i, j) = ln p(j | z, i).
inline Matrix log_transition(const ModelParams& m, const Vector& z) {
  Matrix out(m.d, m.d);
  if (!depends_on_mode(m.structure)) {
    const Vector l = switch_logits(m, z, 0);
    const Vector row = l.array() - log_sum_exp(l);
    for (int i = 0; i < m.d; ++i) out.row(i) = row.transpose();
    return out;
  }
  for (int i = 0; i < m.d; ++i) {
    const Vector l = switch_logits(m, z, i);
    out.row(i) = (l.array() - log_sum_exp(l)).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regularizer

inline double switch_regularizer(const ModelParams& m, const Regularizer& reg) {
  double r = 0.0;
  for (const auto& block : m.theta) r += 0.5 * reg.gamma1 * block.squaredNorm();
  return r;
}

inline double emission_regularizer(const FamilyKind& kind, const EmissionParams& p, const Regularizer& reg) {
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT: {
      if (reg.gamma2 == 0.0 && reg.gamma3 == 0.0) return 0.0;
      const auto& q = std::get<GaussianParams>(p);
      Eigen::LLT<Matrix> llt(q.Lambda);
      if (llt.info() != Eigen::Success) throw NumericError("Lambda is not positive definite");
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      const double b_norm = (q.B.transpose() * llt.solve(q.B)).trace();
      return 0.5 * (reg.gamma2 * (q.Lambda.trace() - logdet) + reg.gamma3 * b_norm);
    }
    case FamilyTag::Laplace: {
      const auto& q = std::get<LaplaceParams>(p);
      return reg.gamma2 * (q.R.array() - q.R.array().log()).sum() + reg.gamma3 * q.M.squaredNorm();
    }
    case FamilyTag::Logistic:
    case FamilyTag::Gumbel: {
      const auto& q = std::get<ScalarParams>(p);
      return reg.gamma2 * (q.lambda - std::log(q.lambda)) + reg.gamma3 * q.b.squaredNorm() / q.lambda;
    }
    case FamilyTag::Categorical:
      return 0.5 * reg.gamma3 * std::get<CategoricalParams>(p).Theta.squaredNorm();
  }
  return 0.0;
}

/// Gradient of emission_regularizer in the flattened layout.
inline Vector emission_regularizer_gradient(const FamilyKind& kind, const EmissionParams& p, const Regularizer& reg) {
  const EmissionDims dims = emission_dims(p);
  Vector out = Vector::Zero(param_count(kind, dims));
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT: {
      const auto& q = std::get<GaussianParams>(p);
      Eigen::LLT<Matrix> llt(q.Lambda);
      const Matrix lam_inv = llt.solve(Matrix::Identity(dims.n_y, dims.n_y));
      const Matrix lam_inv_b = llt.solve(q.B);
      const Matrix gb = reg.gamma3 * lam_inv_b;
      const Matrix gl = 0.5 * reg.gamma2 * (Matrix::Identity(dims.n_y, dims.n_y) - lam_inv) -
                        0.5 * reg.gamma3 * lam_inv_b * lam_inv_b.transpose();
      Eigen::Index pos = 0;
      detail::append_row_major(out, pos, gb);
      detail::append_row_major(out, pos, gl);
      break;
    }
    case FamilyTag::Laplace: {
      const auto& q = std::get<LaplaceParams>(p);
      Eigen::Index pos = 0;
      detail::append_row_major(out, pos, 2.0 * reg.gamma3 * q.M);
      out.tail(dims.n_y) = reg.gamma2 * (1.0 - q.R.cwiseInverse().array()).matrix();
      break;
    }
    case FamilyTag::Logistic:
    case FamilyTag::Gumbel: {
      const auto& q = std::get<ScalarParams>(p);
      out.head(dims.n_z) = 2.0 * reg.gamma3 * q.b / q.lambda;
      out[dims.n_z] = reg.gamma2 * (1.0 - 1.0 / q.lambda) - reg.gamma3 * q.b.squaredNorm() / (q.lambda * q.lambda);
      break;
    }
    case FamilyTag::Categorical: {
      Eigen::Index pos = 0;
      detail::append_row_major(out, pos, reg.gamma3 * std::get<CategoricalParams>(p).Theta);
      break;
    }
  }
  return out;
}

inline double regularizer_value(const ModelParams& m, const Regularizer& reg) {
  double r = switch_regularizer(m, reg);
  for (const auto& b : m.beta) r += emission_regularizer(m.family, b, reg);
  return r;
}

// ---------------------------------------------------------------------------
// Packing theta into one vector: Theta blocks (row-major) then beta blocks.

inline int theta_param_count(const ModelParams& m) { return m.theta_blocks() * m.theta_rows() * (m.d - 1); }

inline int total_param_count(const ModelParams& m) {
  return theta_param_count(m) + m.d * param_count(m.family, m.emission_dims());
}

inline Vector pack(const ModelParams& m) {
  Vector out(total_param_count(m));
  Eigen::Index pos = 0;
  for (const auto& block : m.theta) detail::append_row_major(out, pos, block);
  for (const auto& b : m.beta) {
    const Vector f = flatten(m.family, b);
    out.segment(pos, f.size()) = f;
    pos += f.size();
  }
  return out;
}

inline ModelParams unpack(const ModelParams& skeleton, const Vector& v) {
  if (v.size() != total_param_count(skeleton)) throw ConfigError("unpack: parameter vector has wrong length");
  ModelParams m = skeleton;
  Eigen::Index pos = 0;
  for (auto& block : m.theta) block = detail::read_row_major(v, pos, skeleton.theta_rows(), skeleton.d - 1);
  const int per = param_count(m.family, m.emission_dims());
  for (auto& b : m.beta) {
    b = unflatten(m.family, m.emission_dims(), v.segment(pos, per));
    pos += per;
  }
  return m;
}

/// Mask over pack(m) marking the entries of Lambda (Gaussian/StudentT).
inline std::vector<bool> covariance_mask(const ModelParams& m) {
  std::vector<bool> mask(static_cast<std::size_t>(total_param_count(m)), false);
  if (!m.family.gaussian_like()) return mask;
  const int per = param_count(m.family, m.emission_dims());
  const int nb = m.n_y * m.n_z();
  for (int j = 0; j < m.d; ++j)
    for (int k = nb; k < per; ++k) mask[static_cast<std::size_t>(theta_param_count(m) + j * per + k)] = true;
  return mask;
}

}  // namespace swid

#endif  // SWID_MODEL_HPP
