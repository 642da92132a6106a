#ifndef SWID_DATA_HPP
#define SWID_DATA_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "swid/error.hpp"
#include "swid/numeric.hpp"

namespace swid {

/// Observed sequence y_0..y_T (rows) with optional exogenous inputs.
struct Trajectory {
  Matrix y;                 // (T+1) x n_y
  std::optional<Matrix> u;  // (T+1) x n_u
  Vector z0;                // regressor at t = 0 supplying the pre-history; empty means zeros

  int horizon() const { return static_cast<int>(y.rows()) - 1; }  // T
  int n_y() const { return static_cast<int>(y.cols()); }
  int n_u() const { return u ? static_cast<int>(u->cols()) : 0; }

  void validate() const {
    if (y.rows() < 2) throw DataError("trajectory needs at least two observations (T >= 1)");
    if (y.cols() < 1) throw DataError("trajectory has no output columns");
    for (Eigen::Index t = 0; t < y.rows(); ++t)
      if (!y.row(t).allFinite()) throw DataError("non-finite observation at t=" + std::to_string(t));
    if (u) {
      if (u->rows() != y.rows()) throw DataError("input and output sequences differ in length");
      for (Eigen::Index t = 0; t < u->rows(); ++t)
        if (!u->row(t).allFinite()) throw DataError("non-finite input at t=" + std::to_string(t));
    }
    if (z0.size() > 0 && !z0.allFinite()) throw DataError("non-finite z0");
  }
};

/// The window map z_t = (y_t, .., y_{t-t_y+1}, u_t, .., u_{t-t_u+1}, [1]).
struct RegressorConfig {
  int t_y = 1;
  int t_u = 0;
  bool include_bias = true;

  int n_z(int n_y, int n_u) const { return t_y * n_y + t_u * n_u + (include_bias ? 1 : 0); }

  void validate() const {
    if (t_y < 0 || t_u < 0) throw ConfigError("regressor lags must be nonnegative");
    if (t_y + t_u < 1 && !include_bias) throw ConfigError("regressor is empty: set a lag or the bias");
  }

  bool operator==(const RegressorConfig&) const = default;
};

struct IndexRange {
  int first = 0;
  int last = 0;  // inclusive
  int size() const { return last - first + 1; }
};

/// Contiguous, disjoint, ordered train / validation / test row ranges.
struct DatasetSplit {
  IndexRange train;
  std::optional<IndexRange> validation;
  std::optional<IndexRange> test;

  void validate(int horizon) const {
    auto check = [&](const IndexRange& r, const char* name) {
      if (r.first < 0 || r.last > horizon || r.first >= r.last)
        throw ConfigError(std::string("split range '") + name + "' is outside [0, T] or empty");
    };
    check(train, "train");
    int prev = train.last;
    for (const auto& [r, name] : {std::pair{validation, "validation"}, std::pair{test, "test"}}) {
      if (!r) continue;
      check(*r, name);
      if (r->first <= prev) throw ConfigError(std::string("split range '") + name + "' overlaps or is out of order");
      prev = r->last;
    }
  }

  /// Rows [0, n_train), [n_train, n_train + n_val), [.., .. + n_test).
  static DatasetSplit consecutive(int n_train, int n_val, int n_test) {
    DatasetSplit s;
    s.train = {0, n_train - 1};
    if (n_val > 0) s.validation = IndexRange{n_train, n_train + n_val - 1};
    if (n_test > 0) s.test = IndexRange{n_train + n_val, n_train + n_val + n_test - 1};
    return s;
  }
};

inline int regressor_dim(const Trajectory& traj, const RegressorConfig& cfg) {
  return cfg.n_z(traj.n_y(), traj.n_u());
}

/// z_t. Lags reaching before t = 0 are read from traj.z0 (zeros when absent).
inline Vector build_regressor(const Trajectory& traj, const RegressorConfig& cfg, int t) {
  if (t < 0 || t > traj.horizon()) throw ConfigError("build_regressor: t=" + std::to_string(t) + " out of range");
  if (cfg.t_u > 0 && !traj.u) throw ConfigError("build_regressor: config uses inputs but trajectory has none");
  const int ny = traj.n_y();
  const int nu = traj.n_u();
  const int nz = cfg.n_z(ny, cfg.t_u > 0 ? nu : 0);
  const bool have_z0 = traj.z0.size() > 0;
  if (have_z0 && traj.z0.size() != nz) throw ConfigError("build_regressor: z0 has wrong dimension");
  Vector z(nz);
  int pos = 0;
  for (int k = 0; k < cfg.t_y; ++k, pos += ny) {
    const int s = t - k;
    if (s >= 0)
      z.segment(pos, ny) = traj.y.row(s).transpose();
    else
      z.segment(pos, ny) = have_z0 ? Vector(traj.z0.segment((-s) * ny, ny)) : Vector::Zero(ny);
  }
  const int u_base = cfg.t_y * ny;
  for (int k = 0; k < cfg.t_u; ++k, pos += nu) {
    const int s = t - k;
    if (s >= 0)
      z.segment(pos, nu) = traj.u->row(s).transpose();
    else
      z.segment(pos, nu) = have_z0 ? Vector(traj.z0.segment(u_base + (-s) * nu, nu)) : Vector::Zero(nu);
  }
  if (cfg.include_bias) z[pos] = 1.0;
  return z;
}

/// Rows z_0..z_T stacked, (T+1) x n_z.
inline Matrix regressor_matrix(const Trajectory& traj, const RegressorConfig& cfg) {
  const int T = traj.horizon();
  Matrix Z(T + 1, cfg.n_z(traj.n_y(), cfg.t_u > 0 ? traj.n_u() : 0));
  for (int t = 0; t <= T; ++t) Z.row(t) = build_regressor(traj, cfg, t).transpose();
  return Z;
}

/// Rows [first, last] as a trajectory of its own; z0 carries the true pre-history.
inline Trajectory slice(const Trajectory& traj, const RegressorConfig& cfg, IndexRange r) {
  if (r.first < 0 || r.last > traj.horizon() || r.first >= r.last) throw ConfigError("slice: invalid range");
  Trajectory out;
  out.y = traj.y.middleRows(r.first, r.size());
  if (traj.u) out.u = traj.u->middleRows(r.first, r.size());
  out.z0 = build_regressor(traj, cfg, r.first);
  return out;
}

/// Trajectory whose predicted rows are r.first..r.last; row r.first - 1 (if
/// any) only conditions. Consecutive ranges thus score every row exactly once.
inline Trajectory scored_slice(const Trajectory& traj, const RegressorConfig& cfg, IndexRange r) {
  return slice(traj, cfg, {std::max(r.first - 1, 0), r.last});
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Reads a trajectory. Header names the columns y1..y{n_y}, then optionally u1..u{n_u}.
inline Trajectory load_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  int line_no = 0;
  auto error = [&](const std::string& what) {
    throw DataError(source + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) break;
  }
  if (detail::trim(line).empty()) throw DataError(source + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // UTF-8 BOM
  const auto header = detail::split_csv_line(line);
  int n_y = 0;
  int n_u = 0;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = detail::trim(header[c]);
    const std::string expect_y = "y" + std::to_string(n_y + 1);
    const std::string expect_u = "u" + std::to_string(n_u + 1);
    if (n_u == 0 && name == expect_y)
      ++n_y;
    else if (n_y > 0 && name == expect_u)
      ++n_u;
    else
      error("unexpected header column '" + name + "' (expected " + (n_u == 0 ? expect_y + " or " : "") + expect_u +
            ")");
  }
  if (n_y == 0) error("header declares no y columns");
  const std::size_t width = static_cast<std::size_t>(n_y + n_u);
  std::vector<double> values;
  int rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != width)
      error("row has " + std::to_string(cells.size()) + " columns, header has " + std::to_string(width));
    for (std::size_t c = 0; c < width; ++c) {
      const std::string cell = detail::trim(cells[c]);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (cell.empty() || used != cell.size()) error("non-numeric cell '" + cell + "' in column " + header[c]);
      if (!std::isfinite(v)) error("non-finite cell in column " + header[c]);
      values.push_back(v);
    }
    ++rows;
  }
  Trajectory traj;
  traj.y.resize(rows, n_y);
  if (n_u > 0) traj.u = Matrix(rows, n_u);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < n_y; ++c) traj.y(r, c) = values[static_cast<std::size_t>(r) * width + c];
    for (int c = 0; c < n_u; ++c) (*traj.u)(r, c) = values[static_cast<std::size_t>(r) * width + n_y + c];
  }
  if (rows < 2) throw DataError(source + ": need at least two data rows");
  return traj;
}

inline Trajectory load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_csv(in, path);
}

inline void save_csv(const Trajectory& traj, std::ostream& out) {
  const int ny = traj.n_y();
  const int nu = traj.n_u();
  for (int c = 0; c < ny; ++c) out << (c ? "," : "") << 'y' << c + 1;
  for (int c = 0; c < nu; ++c) out << ",u" << c + 1;
  out << '\n' << std::setprecision(17);
  for (Eigen::Index r = 0; r < traj.y.rows(); ++r) {
    for (int c = 0; c < ny; ++c) out << (c ? "," : "") << traj.y(r, c);
    for (int c = 0; c < nu; ++c) out << ',' << (*traj.u)(r, c);
    out << '\n';
  }
}

inline void save_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  save_csv(traj, out);
}

}  // namespace swid

#endif  // SWID_DATA_HPP
