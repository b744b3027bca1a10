#include "fnp/var.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "fnp/error.hpp"

namespace fnp {

namespace {

Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw ConfigError(std::string(what) + " is not positive definite");
  return llt;
}

void check_symmetric(const Eigen::MatrixXd& m, const char* what) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) throw ConfigError(std::string(what) + " is not symmetric");
}

double great_circle_km(GeoPoint a, GeoPoint b) {
  constexpr double kEarthRadiusKm = 6371.0;
  const double d2r = std::numbers::pi / 180.0;
  const double p1 = a.lat * d2r, p2 = b.lat * d2r;
  const double dl = (b.lon - a.lon) * d2r;
  const double c = std::sin(p1) * std::sin(p2) + std::cos(p1) * std::cos(p2) * std::cos(dl);
  return kEarthRadiusKm * std::acos(std::clamp(c, -1.0, 1.0));
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const char* name) {
  if (!j.is_array()) throw ConfigError(std::string("problem field '") + name + "' must be a matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw ConfigError(std::string("ragged matrix '") + name + "'");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j, const char* name) {
  if (!j.is_array()) throw ConfigError(std::string("problem field '") + name + "' must be a vector");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = j[k].get<double>();
  return v;
}

nlohmann::json to_json(const Eigen::MatrixXd& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(std::move(row));
  }
  return j;
}

nlohmann::json to_json(const Eigen::VectorXd& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(v(k));
  return j;
}

}  // namespace

void VarProblem::validate() const {
  const auto nn = x_b.size(), mm = y.size();
  if (nn == 0) throw ConfigError("variational problem has an empty state");
  if (static_cast<std::size_t>(nn) > kMaxVarState) throw ConfigError("variational state exceeds the dense-solver cap");
  if (B.rows() != nn || B.cols() != nn) throw ConfigError("B must be n x n");
  if (R.rows() != mm || R.cols() != mm) throw ConfigError("R must be m x m");
  if (H_op.rows() != mm || H_op.cols() != nn) throw ConfigError("H must be m x n");
  if (!x_b.allFinite() || !y.allFinite() || !B.allFinite() || !R.allFinite() || !H_op.allFinite())
    throw NumericError("variational problem contains non-finite entries");
  check_symmetric(B, "B");
  check_symmetric(R, "R");
  factor(B, "B");
  if (mm > 0) factor(R, "R");
}

double cost(const Eigen::VectorXd& x, const VarProblem& p) {
  if (x.size() != p.x_b.size()) throw ConfigError("cost: state dimension mismatch");
  const Eigen::VectorXd db = x - p.x_b;
  double j = 0.5 * db.dot(factor(p.B, "B").solve(db));
  if (p.m() > 0) {
    const Eigen::VectorXd dy = p.y - p.H_op * x;
    j += 0.5 * dy.dot(factor(p.R, "R").solve(dy));
  }
  return j;
}

Eigen::VectorXd cost_gradient(const Eigen::VectorXd& x, const VarProblem& p) {
  Eigen::VectorXd g = factor(p.B, "B").solve(x - p.x_b);
  if (p.m() > 0) g -= p.H_op.transpose() * factor(p.R, "R").solve(p.y - p.H_op * x);
  return g;
}

Eigen::VectorXd analytic_analysis(const VarProblem& p) {
  p.validate();
  if (p.m() == 0) return p.x_b;
  const Eigen::MatrixXd bht = p.B * p.H_op.transpose();
  const Eigen::MatrixXd innovation_cov = p.H_op * bht + p.R;
  if (!innovation_cov.allFinite()) throw NumericError("innovation covariance overflows");
  Eigen::LLT<Eigen::MatrixXd> llt(innovation_cov);
  if (llt.info() != Eigen::Success) throw NumericError("innovation covariance is singular");
  Eigen::VectorXd x_a = p.x_b + bht * llt.solve(p.y - p.H_op * p.x_b);
  if (!x_a.allFinite()) throw NumericError("analysis is not finite");
  return x_a;
}

VarProblem make_var_problem(const Field& background, const ObservationSet& obs, double sigma_b, double sigma_o,
                            double correlation_km) {
  background.validate();
  obs.validate();
  if (obs.n_channels != background.n_channels()) throw ConfigError("observation/background channel mismatch");
  if (!(sigma_b > 0.0) || !(sigma_o > 0.0) || !(correlation_km > 0.0))
    throw ConfigError("covariance parameters must be positive");
  const std::size_t np = background.grid.size(), nc = background.n_channels();
  VarProblem p;
  p.x_b = Eigen::Map<const Eigen::VectorXd>(background.values.data(), static_cast<Eigen::Index>(np * nc));
  if (p.n() > kMaxVarState) throw ConfigError("variational state exceeds the dense-solver cap");

  const auto pts = grid_points(background.grid);
  Eigen::MatrixXd corr(np, np);
  for (std::size_t a = 0; a < np; ++a)
    for (std::size_t b = 0; b < np; ++b) {
      const double d = great_circle_km(pts[a], pts[b]) / correlation_km;
      corr(a, b) = std::exp(-0.5 * d * d);
    }
  corr.diagonal().array() += 1e-8;  // keeps B numerically SPD
  p.B = Eigen::MatrixXd::Zero(p.x_b.size(), p.x_b.size());
  for (std::size_t c = 0; c < nc; ++c)
    p.B.block(c * np, c * np, np, np) = sigma_b * sigma_b * corr;

  std::vector<std::pair<std::size_t, std::size_t>> entries;  // (point, channel)
  for (std::size_t i = 0; i < obs.size(); ++i)
    for (std::size_t c = 0; c < nc; ++c)
      if (obs.present(i, c)) entries.emplace_back(i, c);
  const auto m = static_cast<Eigen::Index>(entries.size());
  p.y.resize(m);
  p.H_op = Eigen::MatrixXd::Zero(m, p.x_b.size());
  p.R = Eigen::MatrixXd::Identity(m, m) * sigma_o * sigma_o;
  const std::size_t w = background.grid.n_lon();
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto [i, c] = entries[r];
    p.y(r) = obs.value(i, c);
    const BilinearStencil s = bilinear_stencil(background.grid, obs.coords[i]);
    const double top = 1.0 - s.fy, bot = s.fy;
    auto add = [&](std::size_t ii, std::size_t jj, double wgt) { p.H_op(r, c * np + ii * w + jj) += wgt; };
    add(s.i0, s.j0, top * (1.0 - s.fx));
    add(s.i0, s.j1, top * s.fx);
    add(s.i1, s.j0, bot * (1.0 - s.fx));
    add(s.i1, s.j1, bot * s.fx);
  }
  return p;
}

VarProblem read_var_problem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open problem file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("json", std::string("problem file: ") + e.what());
  }
  for (const char* key : {"x_b", "y", "B", "R", "H"})
    if (!j.contains(key)) throw FormatError(key, std::string("problem file lacks '") + key + "'");
  VarProblem p;
  try {
    p.x_b = vector_from_json(j["x_b"], "x_b");
    p.y = vector_from_json(j["y"], "y");
    p.B = matrix_from_json(j["B"], "B");
    p.R = matrix_from_json(j["R"], "R");
    p.H_op = matrix_from_json(j["H"], "H");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("problem file: ") + e.what());
  }
  if (p.m() == 0) {
    p.R.resize(0, 0);
    p.H_op.resize(0, p.x_b.size());
  }
  p.validate();
  return p;
}

void write_var_problem(const VarProblem& p, const std::filesystem::path& path) {
  nlohmann::json j;
  j["x_b"] = to_json(p.x_b);
  j["y"] = to_json(p.y);
  j["B"] = to_json(p.B);
  j["R"] = to_json(p.R);
  j["H"] = to_json(p.H_op);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

void write_var_solution(const VarProblem& p, const Eigen::VectorXd& x_a, const std::filesystem::path& path) {
  nlohmann::json j;
  j["x_a"] = to_json(x_a);
  j["cost_background"] = cost(p.x_b, p);
  j["cost_analysis"] = cost(x_a, p);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

}  // namespace fnp
