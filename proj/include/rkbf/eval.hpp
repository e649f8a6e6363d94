#pragma once

#include <cstdint>
#include <vector>

#include "rkbf/robust.hpp"

namespace rkbf {

struct McEstimate {
  double mean = 0;
  double stderr_ = 0;
  int n_paths = 0;
  std::uint64_t seed = 0;
  Measure measure = Measure::PTheta;
  enum class Method { Direct, Importance } method = Method::Direct;
  double ess = 0;        // effective sample size (== n_paths for direct runs)
  bool low_ess = false;  // importance weights degenerate: ess < 10% of n_paths
};

// Mean square error of the estimator at the target node under P^theta by
// direct simulation.
McEstimate mc_mse(const ModelSpec& spec, const ThetaPolicy& policy, const EstimatorSpec& estimator,
                  int t_index, int n_paths, std::uint64_t seed, int threads = 1);

// Same expectation computed under P with Girsanov reweighting,
// E_Ptheta[.] = E_P[f_T .]. The policy is evaluated along each P-path's
// observation history; weight degeneracy is reported through ess/low_ess.
McEstimate is_mse(const ModelSpec& spec, const ThetaPolicy& policy, const EstimatorSpec& estimator,
                  int t_index, int n_paths, std::uint64_t seed, int threads = 1);

// Pooled whiteness statistics of innovation increments standardized by
// sqrt(R dt): mean within 4/sqrt(N), variance ratio in [0.95, 1.05], lag-1
// autocorrelation within 4/sqrt(N). Requires >= 10^4 pooled increments.
struct WhitenessReport {
  double mean_stat = 0;       // sample mean of the standardized increments
  double mean_band = 0;       // 4/sqrt(N)
  double variance_ratio = 0;  // sample variance / 1
  double lag1_autocorr = 0;
  double lag1_band = 0;
  long n = 0;
  bool mean_ok = false, variance_ok = false, autocorr_ok = false;
  bool pass() const { return mean_ok && variance_ok && autocorr_ok; }
};

WhitenessReport innovation_whiteness(const std::vector<Eigen::MatrixXd>& increments,
                                     const Eigen::MatrixXd& R, double dt);

// Simulation check of the convexity construction: mixes two deterministic
// strategies through their running (linear multiplicative) densities and
// verifies, per path, that the mixture density recomputed from theta^lam
// reproduces lam1 f1 + lam2 f2 node by node, that |theta^lam| <= mu, and
// that the terminal mixture density has mean one.
struct ConvexityReport {
  double max_rel_mismatch = 0;   // node-wise relative density mismatch
  double max_bound_excess = 0;   // max over nodes of |theta^lam| - mu
  double terminal_mean = 0;
  double terminal_stderr = 0;
  int n_paths = 0;
};

ConvexityReport convexity_martingale_check(const ModelSpec& spec, const ThetaPolicy& theta1,
                                           const ThetaPolicy& theta2, double lambda1, int n_paths,
                                           std::uint64_t seed, int threads = 1);

}  // namespace rkbf
