#pragma once

#include <Eigen/Dense>

#include "rkbf/riccati.hpp"
#include "rkbf/sde.hpp"

namespace rkbf {

struct FilterOutput {
  Eigen::MatrixXd estimate;    // n x (n_steps+1), estimate.col(0) = x0
  Eigen::MatrixXd innovation;  // m x n_steps, increments
  Measure measure = Measure::P;
};

// Precomputed filter coefficients (step tables and Kalman gains), shared
// read-only across paths and threads. Construct once, run per path.
class FilterEngine {
 public:
  FilterEngine(const ModelSpec& spec, const VariancePath& variance);

  // Classical filter driven by an observation path on the model grid:
  //   dxbar = (F xbar + f) dt + K dI,   dI = dm - (G xbar + g) dt.
  FilterOutput classical(const Eigen::Ref<const Eigen::MatrixXd>& m_path) const;

  // Drift-corrected filter for a deterministic theta table:
  //   dxhat = (F xhat + f) dt + K dI1,  dI1 = dm - (G xhat + g + theta) dt.
  // The error variance stays the classical P_t: for deterministic theta
  // the conditional cross term E[x theta' | Z] - xhat theta' vanishes, so
  // the general filter collapses to this gain. With theta == 0 the output
  // is bitwise identical to classical().
  FilterOutput with_drift(const Eigen::Ref<const Eigen::MatrixXd>& m_path,
                          const Eigen::Ref<const Eigen::MatrixXd>& theta) const;

  const GainPath& gains() const { return gains_; }

 private:
  const ModelSpec* spec_;
  StepTables tab_;
  GainPath gains_;
};

// Convenience single-shot wrappers (solve the Riccati path internally).
FilterOutput classical_filter(const ModelSpec& spec,
                              const Eigen::Ref<const Eigen::MatrixXd>& m_path);
FilterOutput theta_filter(const ModelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& m_path,
                          const Eigen::Ref<const Eigen::MatrixXd>& theta);

// Path-independent correction column of the decomposition
//   xhat_t = xbar_t - int_0^t A(t,s) theta_s ds,
// evaluated by trapezoidal quadrature over grid nodes with A(t,s) advanced
// through the closed-loop one-step propagators. Returns n x (n_steps+1).
Eigen::MatrixXd decompose_correction(const ModelSpec& spec, const VariancePath& variance,
                                     const Eigen::Ref<const Eigen::MatrixXd>& theta);

// Applies the correction to a classical-filter trajectory.
Eigen::MatrixXd decompose(const ModelSpec& spec, const VariancePath& variance,
                          const Eigen::Ref<const Eigen::MatrixXd>& xbar,
                          const Eigen::Ref<const Eigen::MatrixXd>& theta);

// Innovation increments of an arbitrary estimate path:
//   dI_k = dm_k - (G_k est_k + g_k + theta_k) dt.
Eigen::MatrixXd innovation_path(const ModelSpec& spec,
                                const Eigen::Ref<const Eigen::MatrixXd>& m_path,
                                const Eigen::Ref<const Eigen::MatrixXd>& estimate,
                                const Eigen::Ref<const Eigen::MatrixXd>& theta);

}  // namespace rkbf
