#include "rkbf/riccati.hpp"

#include <cmath>

#include "rkbf/csv.hpp"

namespace rkbf {

namespace {

// F, Q and S = G' R^-1 G evaluated at one time.
struct Stage {
  Eigen::MatrixXd F, Q, S;
};

Stage stage_at(const ModelSpec& spec, double t) {
  Coeffs c = eval_coeffs(spec, t);
  Eigen::LLT<Eigen::MatrixXd> llt(c.R);
  if (llt.info() != Eigen::Success) fail(ErrorCode::SingularR, "R not positive definite at t = " + format_double(t));
  Stage s;
  s.F = std::move(c.F);
  s.Q = std::move(c.Q);
  s.S = c.G.transpose() * llt.solve(c.G);
  return s;
}

Eigen::MatrixXd riccati_rhs(const Stage& s, const Eigen::MatrixXd& P) {
  return s.F * P + P * s.F.transpose() - P * s.S * P + s.Q;
}

// Symmetrize, then clip tiny negative eigenvalues (discretization noise)
// to zero. Negative eigenvalues below -1e-10 are treated as a real failure.
Eigen::MatrixXd repair_psd(const Eigen::MatrixXd& P, double t) {
  if (!P.allFinite()) fail(ErrorCode::Blowup, "P not finite at t = " + format_double(t));
  Eigen::MatrixXd sym = 0.5 * (P + P.transpose());
  if (sym.rows() == 1) {
    double v = sym(0, 0);
    if (v < -1e-10) fail(ErrorCode::PsdViolation, "P = " + format_double(v) + " at t = " + format_double(t));
    sym(0, 0) = std::max(v, 0.0);
    return sym;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd& ev = es.eigenvalues();
  if (ev.minCoeff() < -1e-10)
    fail(ErrorCode::PsdViolation,
         "min eigenvalue of P = " + format_double(ev.minCoeff()) + " at t = " + format_double(t));
  if (ev.minCoeff() >= 0.0) return sym;
  Eigen::VectorXd clipped = ev.cwiseMax(0.0);
  sym = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (sym + sym.transpose());
}

}  // namespace

VariancePath solve_riccati(const ModelSpec& spec, int substeps) {
  require_valid(spec);
  if (substeps < 1) substeps = 1;
  VariancePath out;
  out.grid = spec.grid;
  out.substeps = substeps;
  const int n_fine = spec.grid.n_steps * substeps;
  const double h = spec.grid.dt() / substeps;
  out.fine.reserve(n_fine + 1);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(spec.n, spec.n);
  out.fine.push_back(P);
  for (int i = 0; i < n_fine; ++i) {
    const double t = i * h;
    const double t_mid = std::min(t + 0.5 * h, spec.grid.horizon);
    const double t_end = std::min(t + h, spec.grid.horizon);
    const Stage s1 = stage_at(spec, std::min(t, spec.grid.horizon));
    const Stage s2 = stage_at(spec, t_mid);
    const Stage s4 = stage_at(spec, t_end);
    const Eigen::MatrixXd k1 = riccati_rhs(s1, P);
    const Eigen::MatrixXd k2 = riccati_rhs(s2, P + 0.5 * h * k1);
    const Eigen::MatrixXd k3 = riccati_rhs(s2, P + 0.5 * h * k2);
    const Eigen::MatrixXd k4 = riccati_rhs(s4, P + h * k3);
    P = repair_psd(P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), t_end);
    out.fine.push_back(P);
  }
  return out;
}

GainPath kalman_gain(const ModelSpec& spec, const VariancePath& P) {
  if (P.grid.n_steps != spec.grid.n_steps)
    fail(ErrorCode::GridMismatch, "variance path grid does not match spec grid");
  GainPath out;
  out.nodes.reserve(spec.grid.n_nodes());
  for (int k = 0; k < spec.grid.n_nodes(); ++k) {
    const Coeffs c = eval_coeffs(spec, spec.grid.node(k));
    Eigen::LLT<Eigen::MatrixXd> llt(c.R);
    if (llt.info() != Eigen::Success)
      fail(ErrorCode::SingularR, "R not positive definite at node " + std::to_string(k));
    // K' = R^-1 G P'
    out.nodes.push_back(llt.solve(c.G * P.at_node(k).transpose()).transpose());
  }
  return out;
}

Eigen::MatrixXd closed_loop_step(const ModelSpec& spec, const VariancePath& P, int k) {
  const int substeps = P.substeps;
  const double h = P.grid.dt() / substeps;
  const int n = spec.n;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(n, n);
  for (int sub = 0; sub < substeps; ++sub) {
    const double t = P.grid.node(k) + sub * h;
    const double t_mid = std::min(t + 0.5 * h, P.grid.horizon);
    const double t_end = std::min(t + h, P.grid.horizon);
    const Stage s1 = stage_at(spec, std::min(t, P.grid.horizon));
    const Stage s2 = stage_at(spec, t_mid);
    const Stage s4 = stage_at(spec, t_end);
    const Eigen::MatrixXd& P0 = P.fine[static_cast<std::size_t>(k) * substeps + sub];
    // Joint RK4 of (P, Phi); the P stages reproduce the solve_riccati path.
    const Eigen::MatrixXd k1p = riccati_rhs(s1, P0);
    const Eigen::MatrixXd k1f = (s1.F - P0 * s1.S) * phi;
    const Eigen::MatrixXd P2 = P0 + 0.5 * h * k1p;
    const Eigen::MatrixXd k2p = riccati_rhs(s2, P2);
    const Eigen::MatrixXd k2f = (s2.F - P2 * s2.S) * (phi + 0.5 * h * k1f);
    const Eigen::MatrixXd P3 = P0 + 0.5 * h * k2p;
    const Eigen::MatrixXd k3p = riccati_rhs(s2, P3);
    const Eigen::MatrixXd k3f = (s2.F - P3 * s2.S) * (phi + 0.5 * h * k2f);
    const Eigen::MatrixXd P4 = P0 + h * k3p;
    const Eigen::MatrixXd k4f = (s4.F - P4 * s4.S) * (phi + h * k3f);
    phi += (h / 6.0) * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
  }
  return phi;
}

std::vector<Eigen::MatrixXd> closed_loop_steps(const ModelSpec& spec, const VariancePath& P) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(P.grid.n_steps);
  for (int k = 0; k < P.grid.n_steps; ++k) out.push_back(closed_loop_step(spec, P, k));
  return out;
}

Eigen::MatrixXd transition_matrix(const ModelSpec& spec, const VariancePath& P, int s_index,
                                  int t_index) {
  if (s_index > t_index)
    fail(ErrorCode::IndexOrder, "transition matrix needs s_index <= t_index, got " +
                                    std::to_string(s_index) + " > " + std::to_string(t_index));
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(spec.n, spec.n);
  for (int k = s_index; k < t_index; ++k) phi = closed_loop_step(spec, P, k) * phi;
  return phi;
}

Eigen::MatrixXd impulse_response(const ModelSpec& spec, const VariancePath& P, int s_index,
                                 int t_index) {
  const Coeffs c = eval_coeffs(spec, spec.grid.node(s_index));
  Eigen::LLT<Eigen::MatrixXd> llt(c.R);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::SingularR, "R not positive definite at node " + std::to_string(s_index));
  const Eigen::MatrixXd gain = llt.solve(c.G * P.at_node(s_index).transpose()).transpose();
  return transition_matrix(spec, P, s_index, t_index) * gain;
}

}  // namespace rkbf
