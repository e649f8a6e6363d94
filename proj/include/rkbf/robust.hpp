#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "rkbf/filter.hpp"

namespace rkbf {

// ---------------------------------------------------------------------------
// Estimator descriptions

// Estimator is the drift-corrected filter run with this deterministic
// theta table (|theta| <= mu).
struct FilterInduced {
  Eigen::MatrixXd theta;  // m x n_steps
};

// Estimator is xbar_t - sum_k c_k u_k: the classical filter shifted
// through the impulse-response weights by a deterministic table u
// (finite, not bound-constrained). u == 0 is the classical filter.
struct ShiftedFilter {
  Eigen::MatrixXd u;  // m x n_steps
};

// Arbitrary measurable rule on the observation history.
struct CustomEstimator {
  std::function<Eigen::VectorXd(const ModelSpec&, const Eigen::Ref<const Eigen::MatrixXd>&)> rule;
};

using EstimatorSpec = std::variant<FilterInduced, ShiftedFilter, CustomEstimator>;

EstimatorSpec classical_estimator(const ModelSpec& spec);  // ShiftedFilter with u = 0
std::string describe(const EstimatorSpec& estimator);
std::string describe(const ThetaPolicy& policy);

// Binds (model, variance path, estimator, target node) into a per-path
// evaluator. Construct once; apply() is const and thread-safe.
class EstimatorEngine {
 public:
  EstimatorEngine(const ModelSpec& spec, const VariancePath& variance,
                  const EstimatorSpec& estimator, int t_index);

  // Estimate of x at the target node from the path's observations.
  Eigen::VectorXd apply(const Path& path) const;

  int t_index() const { return t_index_; }

 private:
  const ModelSpec* spec_;
  FilterEngine filter_;
  int t_index_;
  Eigen::MatrixXd theta_;       // FilterInduced; zero table for ShiftedFilter
  Eigen::VectorXd shift_;       // ShiftedFilter offset at the target node
  const CustomEstimator* custom_ = nullptr;
};

// ---------------------------------------------------------------------------
// Deterministic worst case and minimax

// Bias weights c_k = A(t, s_k) ds of the decomposition at the target node:
// trapezoidal node weights folded onto step indices (when t is the final
// node, the terminal half-weight joins the last step). A deterministic
// drift table theta moves the filter output at t by sum_k c_k theta_k.
struct BiasWeights {
  int t_index = 0;
  std::vector<Eigen::MatrixXd> c;  // n x m, one per step index 0..min(t,K-1)
};

BiasWeights bias_weights(const ModelSpec& spec, const VariancePath& variance, int t_index);

// Mean square error of the shifted-filter estimator under one fixed
// deterministic theta: trace P_t + |sum_k c_k (u_k - theta_k)|^2.
double bias_variance_mse(const ModelSpec& spec, const VariancePath& variance,
                         const BiasWeights& weights, const Eigen::Ref<const Eigen::MatrixXd>& u,
                         const Eigen::Ref<const Eigen::MatrixXd>& theta);

struct WorstCaseResult {
  double value = 0;
  double trace_p = 0;
  Eigen::MatrixXd theta_star;  // m x n_steps, lexicographically smallest maximizer
};

// sup over deterministic |theta| <= mu of the mean square error of the
// shifted-filter estimator, via the bias-variance form maximized over the
// box (exact for scalar signals; by corner enumeration otherwise, with
// BudgetExceeded above 2^20 corners).
WorstCaseResult worst_case_mse_deterministic(const ModelSpec& spec, const VariancePath& variance,
                                             int t_index, const ShiftedFilter& estimator);

struct MinimaxSolution {
  double value = 0;    // trace P_t + sup-bias^2
  double trace_p = 0;  // inner variance term
  double bias_sup = 0; // sup_theta |sum_k c_k theta_k|
  Eigen::MatrixXd u_star;                    // m x n_steps
  std::vector<Eigen::MatrixXd> theta_corners;  // attaining corners, lex order
  BiasWeights weights;
};

// min over shifted-filter tables u of the worst case above. The bias term
// is symmetric in theta, so the optimal offset is zero and u* = 0; the
// value is trace P_t + (sup-bias)^2 with all attaining corners reported.
// With mu = 0 or vanishing weights the value is exactly trace P_t.
MinimaxSolution minimax_deterministic(const ModelSpec& spec, const VariancePath& variance,
                                      int t_index);

// ---------------------------------------------------------------------------
// Monte Carlo worst case over a finite candidate set

struct CandidateMse {
  std::string description;
  double mse = 0;
  double stderr_ = 0;
};

struct McWorstCase {
  std::vector<CandidateMse> candidates;
  int argmax = -1;
  double max_mse = 0;
};

// Simulates each candidate measure with common random numbers (identical
// seeds, hence identical noise streams) and returns per-candidate MSE of
// the estimator at the target node.
McWorstCase mc_worst_case(const ModelSpec& spec, int t_index, const EstimatorSpec& estimator,
                          const std::vector<ThetaPolicy>& candidates, int n_paths,
                          std::uint64_t seed, int threads = 1);

// ---------------------------------------------------------------------------
// Finite estimation game

// Fully discretized scalar game: K binary (+-1) noise increments for
// signal and observation, adversary drift values from a finite alphabet
// in [-mu, mu] applied as measure tilts
//   P^theta(dv = +sqrt(R dt)) = (1 + theta sqrt(dt/R)) / 2,
// estimator a table over observation histories estimating x_K.
struct GameSpec {
  int n_steps = 1;  // K, at most 3
  double dt = 0.04;
  double F = 0, f = 0, G = 1, g = 0;
  double Q = 1, R = 1, x0 = 0;
  double mu = 0;
  std::vector<double> alphabet;  // defaults to {-mu, 0, +mu}
  long budget = 1'000'000;       // cap on enumerated pure strategies
  double tol = 1e-7;             // duality-gap target for the convex search
  long max_iters = 100'000;      // iteration cap
  // When set, the adversary is restricted to open-loop pure strategies
  // (no dependence on history, no mixing) on the maximin side.
  bool open_loop = false;
};

struct GameSolution {
  double minimax = 0;  // min over estimator tables of max over pure strategies
  double maximin = 0;  // best mixture value (or best pure value when open_loop)
  double gap = 0;      // minimax - maximin, >= 0 by construction
  std::vector<double> mixture;    // weight per pure strategy
  std::vector<double> estimator;  // value per observation class
  int n_strategies = 0;
  int n_classes = 0;
  int n_outcomes = 0;
  long iterations = 0;
  double certified_gap = 0;  // solver duality-gap certificate
};

GameSolution discrete_game_oracle(const GameSpec& game);

// ---------------------------------------------------------------------------
// Orthogonality condition

struct OrthogonalityReport {
  double lhs = 0;  // inf over the zeta family of sup over the theta grid of E[(x - xhat)(x - zeta)]
  double rhs = 0;  // sup over the theta grid of E|x - xhat|^2
  double residual = 0;
  double stderr_combined = 0;
  int argmax_theta = -1;
  int argmin_zeta = -1;
};

// Grid approximation of the optimality condition
//   inf_zeta sup_theta E[(x - xhat)'(x - zeta)] = sup_theta E|x - xhat|^2:
// both sides estimated by Monte Carlo with common random numbers over the
// supplied finite grids. A necessary-condition check, not a certificate.
OrthogonalityReport orthogonality_check(const ModelSpec& spec, int t_index,
                                        const EstimatorSpec& xhat,
                                        const std::vector<ThetaPolicy>& theta_grid,
                                        const std::vector<EstimatorSpec>& zeta_family, int n_paths,
                                        std::uint64_t seed, int threads = 1);

}  // namespace rkbf
