#ifndef SWID_MODEL_IO_HPP
#define SWID_MODEL_IO_HPP

/// JSON model files and fit reports. Matrices are nested row-major arrays;
/// doubles are written with round-trip precision.

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swid/driver.hpp"

namespace swid {

using Json = nlohmann::ordered_json;

inline constexpr int kModelFileVersion = 1;

struct ModelFile {
  ModelParams model;
  Vector alpha0;
  Regularizer reg;
  std::uint64_t seed = 0;
  std::string data_hash;
};

/// FNV-1a over the bytes of the observations and inputs.
inline std::string trajectory_hash(const Trajectory& traj) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const Matrix& m) {
    const auto* p = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  feed(traj.y);
  if (traj.u) feed(*traj.u);
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

namespace detail {

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline const Json& field(const Json& j, const std::string& name, const std::string& where) {
  if (!j.is_object() || !j.contains(name)) throw ConfigError(where + ": missing field '" + name + "'");
  return j.at(name);
}

template <typename T>
T get_field(const Json& j, const std::string& name, const std::string& where) {
  const Json& v = field(j, name, where);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + ": field '" + name + "' has the wrong type");
  }
}

inline Matrix matrix_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected a matrix (array of rows)");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw ConfigError(where + ": ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!row[static_cast<std::size_t>(c)].is_number()) throw ConfigError(where + ": non-numeric matrix entry");
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

inline Vector vector_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(where + ": non-numeric entry");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Json emission_to_json(const EmissionParams& p) {
  return std::visit(
      [](const auto& q) -> Json {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, GaussianParams>)
          return {{"B", matrix_to_json(q.B)}, {"Lambda", matrix_to_json(q.Lambda)}};
        else if constexpr (std::is_same_v<T, LaplaceParams>)
          return {{"M", matrix_to_json(q.M)}, {"R", vector_to_json(q.R)}};
        else if constexpr (std::is_same_v<T, ScalarParams>)
          return {{"b", vector_to_json(q.b)}, {"lambda", q.lambda}};
        else
          return {{"Theta", matrix_to_json(q.Theta)}};
      },
      p);
}

inline EmissionParams emission_from_json(const FamilyKind& kind, const Json& j, const std::string& where) {
  switch (kind.tag) {
    case FamilyTag::Gaussian:
    case FamilyTag::StudentT:
      return GaussianParams{matrix_from_json(field(j, "B", where), where + ".B"),
                            matrix_from_json(field(j, "Lambda", where), where + ".Lambda")};
    case FamilyTag::Laplace:
      return LaplaceParams{matrix_from_json(field(j, "M", where), where + ".M"),
                           vector_from_json(field(j, "R", where), where + ".R")};
    case FamilyTag::Logistic:
    case FamilyTag::Gumbel:
      return ScalarParams{vector_from_json(field(j, "b", where), where + ".b"), get_field<double>(j, "lambda", where)};
    case FamilyTag::Categorical:
      return CategoricalParams{matrix_from_json(field(j, "Theta", where), where + ".Theta")};
  }
  throw ConfigError(where + ": unknown family");
}

inline Json family_to_json(const FamilyKind& f) {
  Json j = {{"name", std::string(family_name(f.tag))}};
  if (f.tag == FamilyTag::StudentT) j["nu"] = f.nu;
  if (f.tag == FamilyTag::Categorical) j["n_classes"] = f.n_classes;
  return j;
}

inline FamilyKind family_from_json(const Json& j, const std::string& where) {
  FamilyKind f;
  f.tag = family_from_name(get_field<std::string>(j, "name", where));
  if (f.tag == FamilyTag::StudentT) f.nu = get_field<double>(j, "nu", where);
  if (f.tag == FamilyTag::Categorical) f.n_classes = get_field<int>(j, "n_classes", where);
  f.validate();
  return f;
}

}  // namespace detail

inline Json regressor_to_json(const RegressorConfig& c) {
  return {{"t_y", c.t_y}, {"t_u", c.t_u}, {"include_bias", c.include_bias}};
}

inline Json model_to_json(const ModelFile& f) {
  const ModelParams& m = f.model;
  Json theta = Json::array();
  for (const auto& block : m.theta) theta.push_back(detail::matrix_to_json(block));
  Json beta = Json::array();
  for (const auto& b : m.beta) beta.push_back(detail::emission_to_json(b));
  return {{"version", kModelFileVersion},
          {"structure", std::string(structure_name(m.structure))},
          {"family", detail::family_to_json(m.family)},
          {"d", m.d},
          {"n_y", m.n_y},
          {"n_u", m.n_u},
          {"regressor", regressor_to_json(m.cfg)},
          {"Theta", std::move(theta)},
          {"beta", std::move(beta)},
          {"alpha0", detail::vector_to_json(f.alpha0)},
          {"regularizer", {{"gamma1", f.reg.gamma1}, {"gamma2", f.reg.gamma2}, {"gamma3", f.reg.gamma3}}},
          {"provenance", {{"seed", f.seed}, {"data_hash", f.data_hash}}}};
}

inline ModelFile model_from_json(const Json& j) {
  const std::string w = "model file";
  const int version = detail::get_field<int>(j, "version", w);
  if (version != kModelFileVersion) throw ConfigError(w + ": unsupported version " + std::to_string(version));
  ModelFile f;
  ModelParams& m = f.model;
  m.structure = structure_from_name(detail::get_field<std::string>(j, "structure", w));
  m.family = detail::family_from_json(detail::field(j, "family", w), w + ".family");
  m.d = detail::get_field<int>(j, "d", w);
  m.n_y = detail::get_field<int>(j, "n_y", w);
  m.n_u = detail::get_field<int>(j, "n_u", w);
  const Json& rc = detail::field(j, "regressor", w);
  m.cfg.t_y = detail::get_field<int>(rc, "t_y", w + ".regressor");
  m.cfg.t_u = detail::get_field<int>(rc, "t_u", w + ".regressor");
  m.cfg.include_bias = detail::get_field<bool>(rc, "include_bias", w + ".regressor");
  const Json& theta = detail::field(j, "Theta", w);
  if (!theta.is_array()) throw ConfigError(w + ": field 'Theta' must be an array of matrices");
  for (std::size_t k = 0; k < theta.size(); ++k)
    m.theta.push_back(detail::matrix_from_json(theta[k], w + ".Theta[" + std::to_string(k) + "]"));
  const Json& beta = detail::field(j, "beta", w);
  if (!beta.is_array()) throw ConfigError(w + ": field 'beta' must be an array");
  for (std::size_t k = 0; k < beta.size(); ++k)
    m.beta.push_back(detail::emission_from_json(m.family, beta[k], w + ".beta[" + std::to_string(k) + "]"));
  m.validate();
  f.alpha0 = detail::vector_from_json(detail::field(j, "alpha0", w), w + ".alpha0");
  check_simplex(f.alpha0, m.d);
  const Json& reg = detail::field(j, "regularizer", w);
  f.reg = {detail::get_field<double>(reg, "gamma1", w + ".regularizer"),
           detail::get_field<double>(reg, "gamma2", w + ".regularizer"),
           detail::get_field<double>(reg, "gamma3", w + ".regularizer")};
  if (j.contains("provenance")) {
    const Json& p = j.at("provenance");
    f.seed = p.value("seed", std::uint64_t{0});
    f.data_hash = p.value("data_hash", std::string{});
  }
  return f;
}

inline void save_model(const ModelFile& f, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write model file '" + path + "'");
  out << model_to_json(f).dump(2) << '\n';
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("model file '" + path + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

inline Json report_to_json(const FitReport& r) {
  Json iters = Json::array();
  for (const auto& it : r.iterations) {
    Json row = {{"reg_nll", it.reg_nll}, {"e_seconds", it.e_seconds}, {"m_seconds", it.m_seconds},
                {"param_step", it.param_step}};
    row["grad_norm"] = std::isfinite(it.grad_norm) ? Json(it.grad_norm) : Json(nullptr);
    iters.push_back(std::move(row));
  }
  Json restarts = Json::array();
  for (const auto& s : r.restarts) {
    Json row = {{"seed", s.seed}, {"failed", s.failed}, {"iterations", s.iterations},
                {"stop", std::string(stop_reason_name(s.stop))}};
    row["train_reg_nll"] = std::isfinite(s.train_reg_nll) ? Json(s.train_reg_nll) : Json(nullptr);
    row["validation_nll"] = std::isfinite(s.validation_nll) ? Json(s.validation_nll) : Json(nullptr);
    if (s.failed) row["error"] = s.error;
    restarts.push_back(std::move(row));
  }
  return {{"stop", std::string(stop_reason_name(r.stop))},
          {"best_restart", r.best_restart},
          {"iterations", std::move(iters)},
          {"restarts", std::move(restarts)},
          {"alpha0", detail::vector_to_json(r.alpha0)}};
}

// ---------------------------------------------------------------------------
// Fit configuration

/// Contents of the `fit` configuration document.
struct FitConfig {
  ModelSpec spec;
  std::vector<Regularizer> grid;  // every combination of the listed weights
  FitOptions options;
  int n_train = 0;  // 0: every row
  int n_validation = 0;
};

namespace detail {

inline std::vector<double> number_list(const Json& j, const std::string& name) {
  if (!j.contains(name)) return {0.0};
  const Json& v = j.at(name);
  std::vector<double> out;
  if (v.is_number()) {
    out.push_back(v.get<double>());
  } else if (v.is_array() && !v.empty()) {
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError("config: field 'regularizer." + name + "' must hold numbers");
      out.push_back(e.get<double>());
    }
  } else {
    throw ConfigError("config: field 'regularizer." + name + "' must be a number or a non-empty list");
  }
  return out;
}

}  // namespace detail

inline FitConfig fit_config_from_json(const Json& j) {
  const std::string w = "config";
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  FitConfig c;
  try {
    c.spec.structure = structure_from_name(detail::get_field<std::string>(j, "structure", w));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: field 'structure': ") + e.what());
  }
  const std::string fam = detail::get_field<std::string>(j, "family", w);
  try {
    c.spec.family.tag = family_from_name(fam);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: field 'family': ") + e.what());
  }
  if (c.spec.family.tag == FamilyTag::StudentT) c.spec.family.nu = detail::get_field<double>(j, "nu", w);
  if (c.spec.family.tag == FamilyTag::Categorical) c.spec.family.n_classes = detail::get_field<int>(j, "n_classes", w);
  c.spec.d = detail::get_field<int>(j, "d", w);
  if (j.contains("regressor")) {
    const Json& rc = j.at("regressor");
    c.spec.cfg.t_y = rc.contains("t_y") ? detail::get_field<int>(rc, "t_y", w + ".regressor") : 1;
    c.spec.cfg.t_u = rc.contains("t_u") ? detail::get_field<int>(rc, "t_u", w + ".regressor") : 0;
    c.spec.cfg.include_bias =
        rc.contains("include_bias") ? detail::get_field<bool>(rc, "include_bias", w + ".regressor") : true;
  }
  try {
    c.spec.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  const Json reg = j.contains("regularizer") ? j.at("regularizer") : Json::object();
  if (!reg.is_object()) throw ConfigError("config: field 'regularizer' must be an object");
  for (double g1 : detail::number_list(reg, "gamma1"))
    for (double g2 : detail::number_list(reg, "gamma2"))
      for (double g3 : detail::number_list(reg, "gamma3")) {
        const Regularizer r{g1, g2, g3};
        try {
          r.validate();
        } catch (const ConfigError& e) {
          throw ConfigError(std::string("config: field 'regularizer': ") + e.what());
        }
        c.grid.push_back(r);
      }

  FitOptions& o = c.options;
  if (j.contains("restarts")) o.n_restarts = detail::get_field<int>(j, "restarts", w);
  if (j.contains("seed")) o.seed = detail::get_field<std::uint64_t>(j, "seed", w);
  if (j.contains("max_iters")) o.max_iters = detail::get_field<int>(j, "max_iters", w);
  if (j.contains("grad_stop")) o.grad_stop = detail::get_field<double>(j, "grad_stop", w);
  if (j.contains("rel_decrease_stop")) o.rel_decrease_stop = detail::get_field<double>(j, "rel_decrease_stop", w);
  if (j.contains("inner_tol")) o.solver.grad_tol = detail::get_field<double>(j, "inner_tol", w);
  if (j.contains("fixed_lambda")) o.fixed_lambda = detail::matrix_from_json(j.at("fixed_lambda"), w + ".fixed_lambda");
  try {
    o.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (j.contains("split")) {
    const Json& sp = j.at("split");
    c.n_train = detail::get_field<int>(sp, "train", w + ".split");
    if (sp.contains("validation")) c.n_validation = detail::get_field<int>(sp, "validation", w + ".split");
    if (c.n_train < 2 || c.n_validation < 0) throw ConfigError("config: field 'split' has invalid row counts");
  }
  if (c.grid.size() > 1 && c.n_validation == 0)
    throw ConfigError("config: a regularizer grid needs 'split.validation' rows to select from");
  return c;
}

inline FitConfig load_fit_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return fit_config_from_json(j);
}

}  // namespace swid

#endif  // SWID_MODEL_IO_HPP
