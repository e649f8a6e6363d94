#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <variant>
#include <vector>

#include "rkbf/csv.hpp"
#include "rkbf/model.hpp"

namespace rkbf {

// Coefficients tabulated at the left endpoint of every observation step,
// plus the noise-scaling roots chol-like factors sqrt(Q dt), sqrt(R dt)
// and R^-1. Built once per model and shared read-only across threads.
struct StepTables {
  double dt = 0.0;
  int n_steps = 0;
  std::vector<Eigen::MatrixXd> F, G, sqrt_Q_dt, sqrt_R_dt, R_inv;
  std::vector<Eigen::VectorXd> f, g;
};

StepTables tabulate_steps(const ModelSpec& spec);

// Drift-perturbation strategy theta. Deterministic variants carry a value
// per step; the feedback variant maps the observation history seen so far
// (nodes 0..k, i.e. strictly before increment k) to a value. Every emitted
// value must satisfy |theta_i| <= mu_i componentwise: violations are
// clamped when `clamp` is set and rejected with PolicyBoundViolation
// otherwise.
struct ThetaPolicy {
  struct Constant {
    Eigen::VectorXd value;
  };
  struct Table {
    Eigen::MatrixXd values;  // m x n_steps
  };
  using FeedbackRule = std::function<Eigen::VectorXd(
      int k, double t, const Eigen::Ref<const Eigen::MatrixXd>& m_history)>;
  struct Feedback {
    FeedbackRule rule;
  };

  std::variant<Constant, Table, Feedback> shape = Constant{Eigen::VectorXd()};
  bool clamp = false;

  static ThetaPolicy zero();
  static ThetaPolicy constant(const Eigen::VectorXd& value, bool clamp = false);
  static ThetaPolicy constant(double value, bool clamp = false);
  static ThetaPolicy table(const Eigen::MatrixXd& values, bool clamp = false);
  static ThetaPolicy feedback(FeedbackRule rule, bool clamp = false);

  bool is_deterministic() const { return !std::holds_alternative<Feedback>(shape); }
};

// Expands a deterministic policy to its m x n_steps table (bound-checked).
// Throws UnsupportedEstimator for feedback policies.
Eigen::MatrixXd resolve_deterministic(const ThetaPolicy& policy, const ModelSpec& spec);

// One simulated trajectory on the model grid.
struct Path {
  std::uint64_t path_id = 0;
  Eigen::MatrixXd x;      // n x (n_steps+1), x.col(0) = x0
  Eigen::MatrixXd m;      // m x (n_steps+1), m.col(0) = 0
  Eigen::MatrixXd w_inc;  // n x n_steps
  Eigen::MatrixXd v_inc;  // m x n_steps (dv under P; dv^theta under P^theta)
  Eigen::MatrixXd theta;  // m x n_steps (values used; zero under P)
};

enum class Measure { P, PTheta };

struct PathBundle {
  Measure measure = Measure::P;
  std::uint64_t seed = 0;
  std::vector<Path> paths;
};

// Euler-Maruyama simulation under the reference measure P:
//   dx = (F x + f) dt + dw,  dm = (G x + g) dt + dv.
// Noise is drawn from a counter-based stream keyed on (seed, path_id), so
// results are bitwise reproducible for any thread count.
PathBundle simulate_p(const ModelSpec& spec, int n_paths, std::uint64_t seed, int threads = 1);

// Same grid and noise stream, observation drift shifted by theta:
//   dm = (G x + g + theta) dt + dv^theta.
// With theta == 0 the output is bitwise identical to simulate_p.
PathBundle simulate_theta(const ModelSpec& spec, const ThetaPolicy& policy, int n_paths,
                          std::uint64_t seed, int threads = 1);

// Streaming variants: visit(path) is invoked once per path id without
// retaining the bundle (the buffer is reused per worker). `visit` may be
// called concurrently; implementations must key any output on path_id.
void for_each_path_p(const ModelSpec& spec, int n_paths, std::uint64_t seed, int threads,
                     const std::function<void(const Path&)>& visit);
void for_each_path_theta(const ModelSpec& spec, const ThetaPolicy& policy, int n_paths,
                         std::uint64_t seed, int threads,
                         const std::function<void(const Path&)>& visit);

// Evaluates a policy along a fixed observation path (feedback rules see
// nodes 0..k at step k). Used to attach densities to P-paths.
Eigen::MatrixXd policy_values_along(const ThetaPolicy& policy, const ModelSpec& spec,
                                    const Eigen::Ref<const Eigen::MatrixXd>& m_path);

// Running Radon-Nikodym density of P^theta against P along one path, in
// the exponential form
//   f_k = exp( sum_{j<k} theta_j' R_j^-1 dv_j - 1/2 theta_j' R_j^-1 theta_j dt ).
// Returns n_steps+1 running values, f_0 = 1; strictly positive, and an
// exact martingale for Gaussian increments. With R = I this is the
// familiar exp(int theta dv - 1/2 int |theta|^2 dt).
Eigen::VectorXd girsanov_density(const ModelSpec& spec,
                                 const Eigen::Ref<const Eigen::MatrixXd>& theta,
                                 const Eigen::Ref<const Eigen::MatrixXd>& v_inc);
Eigen::VectorXd girsanov_density(const StepTables& tab,
                                 const Eigen::Ref<const Eigen::MatrixXd>& theta,
                                 const Eigen::Ref<const Eigen::MatrixXd>& v_inc);

// Linear multiplicative form f_{k+1} = f_k (1 + theta_k' R_k^-1 dv_k): the
// Euler discretization of df = f theta' R^-1 dv. Unlike the exponential
// form it is closed under convex mixing (see convex_mix_theta), which is
// what the mixture-martingale identity tests exercise. Throws
// NonPositiveDensity if a factor is <= 0.
Eigen::VectorXd incremental_density(const ModelSpec& spec,
                                    const Eigen::Ref<const Eigen::MatrixXd>& theta,
                                    const Eigen::Ref<const Eigen::MatrixXd>& v_inc);
Eigen::VectorXd incremental_density(const StepTables& tab,
                                    const Eigen::Ref<const Eigen::MatrixXd>& theta,
                                    const Eigen::Ref<const Eigen::MatrixXd>& v_inc);

// Density-weighted convex combination of two drift strategies,
//   theta^lam_k = (l1 f1_k theta1_k + l2 f2_k theta2_k) / (l1 f1_k + l2 f2_k),
// with l2 = 1 - l1 and f1, f2 running densities at the step's left node.
// The result satisfies the componentwise bound whenever both inputs do.
// Densities must be strictly positive (NonPositiveDensity otherwise).
Eigen::MatrixXd convex_mix_theta(const Eigen::Ref<const Eigen::MatrixXd>& theta1,
                                 const Eigen::Ref<const Eigen::MatrixXd>& theta2, double lambda1,
                                 const Eigen::Ref<const Eigen::VectorXd>& f1,
                                 const Eigen::Ref<const Eigen::VectorXd>& f2);

// Path dump: columns (path_id, k, t, x..., m..., theta...); one table per
// bundle, n_steps+1 rows per path (theta cells empty on the final row).
CsvWriter paths_to_csv(const ModelSpec& spec, const PathBundle& bundle);

}  // namespace rkbf
