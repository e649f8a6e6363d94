#pragma once

#include <Eigen/Dense>
#include <vector>

#include "rkbf/model.hpp"

namespace rkbf {

// Error-variance path P_t of the filtering problem,
//   dP/dt = F P + P F' - P G' R^-1 G P + Q,   P(0) = 0,
// integrated with classical RK4 on a refinement of the observation grid
// (`substeps` RK4 steps per observation step). P is kept symmetric PSD:
// each step symmetrizes and clips eigenvalues in [-1e-10, 0) to zero;
// anything below that tolerance aborts with PsdViolation.
struct VariancePath {
  TimeGrid grid;
  int substeps = 4;
  // P at every fine node, grid.n_steps * substeps + 1 entries.
  std::vector<Eigen::MatrixXd> fine;

  const Eigen::MatrixXd& at_node(int k) const { return fine[static_cast<std::size_t>(k) * substeps]; }
  int n_nodes() const { return grid.n_nodes(); }
};

VariancePath solve_riccati(const ModelSpec& spec, int substeps = 4);

// Kalman gain K_k = P_k G_k' R_k^-1 at every observation node.
struct GainPath {
  std::vector<Eigen::MatrixXd> nodes;  // n x m
  const Eigen::MatrixXd& at(int k) const { return nodes[k]; }
};

GainPath kalman_gain(const ModelSpec& spec, const VariancePath& P);

// One-step propagator of the closed-loop deterministic system
//   dPhi/dr = (F_r - K_r G_r) Phi
// over observation step k, integrated jointly with P by RK4 on the same
// substep refinement used by solve_riccati.
Eigen::MatrixXd closed_loop_step(const ModelSpec& spec, const VariancePath& P, int k);

// All n_steps one-step propagators; transition matrices are their products.
std::vector<Eigen::MatrixXd> closed_loop_steps(const ModelSpec& spec, const VariancePath& P);

// Fundamental matrix Phi(t,s) of the closed-loop system, Phi(s,s) = I.
// Requires s_index <= t_index (IndexOrder otherwise).
Eigen::MatrixXd transition_matrix(const ModelSpec& spec, const VariancePath& P, int s_index,
                                  int t_index);

// Impulse response A(t,s) = Phi(t,s) K_s: the kernel through which a drift
// perturbation of the observation at time s moves the filter output at
// time t. Reduces to P_s G_s R_s^-1 exp(int_s^t (F - P G^2 / R) dr) in the
// scalar case.
Eigen::MatrixXd impulse_response(const ModelSpec& spec, const VariancePath& P, int s_index,
                                 int t_index);

}  // namespace rkbf
