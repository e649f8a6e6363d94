#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rkbf/errors.hpp"

namespace rkbf {

// Uniform grid t_k = k*dt on [0, T] with t_{n_steps} == horizon exactly.
struct TimeGrid {
  double horizon = 1.0;
  int n_steps = 1;

  double dt() const { return horizon / n_steps; }
  int n_nodes() const { return n_steps + 1; }
  double node(int k) const { return k == n_steps ? horizon : k * dt(); }
};

enum class Interp { PiecewiseConstantLeft, PiecewiseLinear };

// One sample of every model coefficient per grid node.
struct CoefficientTable {
  std::vector<Eigen::MatrixXd> F;  // n x n, 1/time
  std::vector<Eigen::VectorXd> f;  // n
  std::vector<Eigen::MatrixXd> G;  // m x n
  std::vector<Eigen::VectorXd> g;  // m
  std::vector<Eigen::MatrixXd> Q;  // n x n, signal noise covariance rate
  std::vector<Eigen::MatrixXd> R;  // m x m, observation noise covariance rate
  Interp interp = Interp::PiecewiseConstantLeft;
};

// Linear signal/observation model
//   dx = (F x + f) dt + dw,   x(0) = x0,   Cov dw = Q dt
//   dm = (G x + g) dt + dv,   m(0) = 0,    Cov dv = R dt
// with componentwise drift-perturbation bound |theta| <= mu on the
// observation drift.
struct ModelSpec {
  int n = 0;  // signal dimension
  int m = 0;  // observation dimension
  TimeGrid grid;
  CoefficientTable coeffs;
  Eigen::VectorXd x0;
  Eigen::VectorXd mu;

  // Validation knobs: minimum eigenvalue required of R, and the bound all
  // coefficient entries must respect.
  double r_min = 1e-8;
  double coeff_bound = 1e6;
};

struct Violation {
  ErrorCode code;
  int node;  // -1 when not tied to a grid node
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string summary() const;
};

// Checks every invariant: dimensions, finiteness and the entry bound,
// symmetry and positive semidefiniteness of Q, symmetry and uniform
// positive definiteness of R (min eigenvalue >= r_min), mu >= 0.
ValidationReport validate(const ModelSpec& spec);

// Throws Error(InvalidSpec) listing every violation if validate() fails.
void require_valid(const ModelSpec& spec);

// Coefficients interpolated at an arbitrary time.
struct Coeffs {
  Eigen::MatrixXd F, G, Q, R;
  Eigen::VectorXd f, g;
};

// Interpolates per the table's mode; exact at nodes. Throws OutOfRangeTime
// unless 0 <= t <= horizon.
Coeffs eval_coeffs(const ModelSpec& spec, double t);

// JSON (de)serialization. load(save(s)) reproduces every numeric field
// bit-exactly. Unknown or missing mandatory fields raise ParseError naming
// the field; filesystem problems raise IoError.
ModelSpec load_spec(const std::string& path);
void save_spec(const ModelSpec& spec, const std::string& path);
ModelSpec parse_spec_json(const std::string& text);
std::string spec_to_json(const ModelSpec& spec);

// Constant-coefficient model on a fresh grid; the common case in tests and
// benchmark configs.
ModelSpec make_constant_spec(int n, int m, double horizon, int n_steps, const Eigen::MatrixXd& F,
                             const Eigen::VectorXd& f, const Eigen::MatrixXd& G,
                             const Eigen::VectorXd& g, const Eigen::MatrixXd& Q,
                             const Eigen::MatrixXd& R, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& mu);

// Scalar (n = m = 1) convenience overload.
ModelSpec make_scalar_spec(double horizon, int n_steps, double F, double f, double G, double g,
                           double Q, double R, double x0, double mu);

}  // namespace rkbf
