#pragma once

// Three-dimensional variational analysis on small dense problems:
//   J(x) = 1/2 (x - xb)^T B^-1 (x - xb) + 1/2 (y - H x)^T R^-1 (y - H x)

#include <filesystem>

#include <Eigen/Dense>

#include "fnp/grid.hpp"

namespace fnp {

inline constexpr std::size_t kMaxVarState = 4096;

struct VarProblem {
  Eigen::VectorXd x_b;    // n
  Eigen::VectorXd y;      // m
  Eigen::MatrixXd B;      // n x n, SPD
  Eigen::MatrixXd R;      // m x m, SPD
  Eigen::MatrixXd H_op;   // m x n

  std::size_t n() const { return static_cast<std::size_t>(x_b.size()); }
  std::size_t m() const { return static_cast<std::size_t>(y.size()); }

  /// Throws ConfigError on inconsistent dimensions, asymmetric or non-SPD
  /// covariances, or n above kMaxVarState.
  void validate() const;
};

double cost(const Eigen::VectorXd& x, const VarProblem& p);
Eigen::VectorXd cost_gradient(const Eigen::VectorXd& x, const VarProblem& p);

/// x_b + B H^T (H B H^T + R)^-1 (y - H x_b), via Cholesky.
Eigen::VectorXd analytic_analysis(const VarProblem& p);

/// Gaussian-correlated background covariance over the points of `grid`
/// (great-circle distance, `correlation_km` length), variance sigma_b^2 per
/// channel; observation operator = bilinear reads at observation points;
/// R = sigma_o^2 I. State is the channel-major flattening of the field.
VarProblem make_var_problem(const Field& background, const ObservationSet& obs, double sigma_b, double sigma_o,
                            double correlation_km);

/// JSON problem file: {"x_b": [...], "y": [...], "B": [[...]...], "R": [[...]...], "H": [[...]...]}.
VarProblem read_var_problem(const std::filesystem::path& path);
void write_var_problem(const VarProblem& p, const std::filesystem::path& path);
/// {"x_a": [...], "cost_background": J(x_b), "cost_analysis": J(x_a)}
void write_var_solution(const VarProblem& p, const Eigen::VectorXd& x_a, const std::filesystem::path& path);

}  // namespace fnp
