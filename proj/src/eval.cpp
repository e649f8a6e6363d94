#include "rkbf/eval.hpp"

#include <cmath>
#include <limits>
#include <tuple>

namespace rkbf {

namespace {

std::pair<double, double> mean_and_stderr(const std::vector<double>& values) {
  const int n = static_cast<int>(values.size());
  double mean = 0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= std::max(1, n - 1);
  return {mean, std::sqrt(var / n)};
}

}  // namespace

McEstimate mc_mse(const ModelSpec& spec, const ThetaPolicy& policy, const EstimatorSpec& estimator,
                  int t_index, int n_paths, std::uint64_t seed, int threads) {
  require_valid(spec);
  const VariancePath variance = solve_riccati(spec);
  const EstimatorEngine engine(spec, variance, estimator, t_index);
  std::vector<double> sq(n_paths);
  for_each_path_theta(spec, policy, n_paths, seed, threads, [&](const Path& path) {
    sq[path.path_id] = (path.x.col(t_index) - engine.apply(path)).squaredNorm();
  });
  McEstimate out;
  std::tie(out.mean, out.stderr_) = mean_and_stderr(sq);
  out.n_paths = n_paths;
  out.seed = seed;
  out.measure = Measure::PTheta;
  out.method = McEstimate::Method::Direct;
  out.ess = n_paths;
  return out;
}

McEstimate is_mse(const ModelSpec& spec, const ThetaPolicy& policy, const EstimatorSpec& estimator,
                  int t_index, int n_paths, std::uint64_t seed, int threads) {
  require_valid(spec);
  const VariancePath variance = solve_riccati(spec);
  const EstimatorEngine engine(spec, variance, estimator, t_index);
  const StepTables tab = tabulate_steps(spec);
  std::vector<double> weighted(n_paths), weight(n_paths);
  for_each_path_p(spec, n_paths, seed, threads, [&](const Path& path) {
    const double sq = (path.x.col(t_index) - engine.apply(path)).squaredNorm();
    const Eigen::MatrixXd theta = policy_values_along(policy, spec, path.m);
    const double w = girsanov_density(tab, theta, path.v_inc)(spec.grid.n_steps);
    weighted[path.path_id] = w * sq;
    weight[path.path_id] = w;
  });
  McEstimate out;
  std::tie(out.mean, out.stderr_) = mean_and_stderr(weighted);
  out.n_paths = n_paths;
  out.seed = seed;
  out.measure = Measure::P;
  out.method = McEstimate::Method::Importance;
  double sum = 0, sum_sq = 0;
  for (double w : weight) {
    sum += w;
    sum_sq += w * w;
  }
  out.ess = sum_sq > 0 ? sum * sum / sum_sq : 0.0;
  out.low_ess = out.ess < 0.1 * n_paths;
  return out;
}

WhitenessReport innovation_whiteness(const std::vector<Eigen::MatrixXd>& increments,
                                     const Eigen::MatrixXd& R, double dt) {
  if (increments.empty()) fail(ErrorCode::InsufficientSample, "no increments supplied");
  const int m = static_cast<int>(R.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) fail(ErrorCode::SingularR, "R not positive definite");
  const double scale = 1.0 / std::sqrt(dt);

  // Standardize: z = L^-1 dI / sqrt(dt) has iid N(0,1) entries when the
  // increments are Brownian with covariance R dt.
  std::vector<Eigen::MatrixXd> z;
  z.reserve(increments.size());
  long n = 0;
  for (const auto& series : increments) {
    if (series.rows() != m) fail(ErrorCode::GridMismatch, "increment rows do not match R");
    z.push_back(llt.matrixL().solve(series) * scale);
    n += series.size();
  }
  if (n < 10000)
    fail(ErrorCode::InsufficientSample,
         "need at least 10^4 pooled increments, got " + std::to_string(n));

  WhitenessReport rep;
  rep.n = n;
  double sum = 0;
  for (const auto& s : z) sum += s.sum();
  rep.mean_stat = sum / n;
  rep.mean_band = 4.0 / std::sqrt(static_cast<double>(n));

  double ss = 0;
  for (const auto& s : z) ss += (s.array() - rep.mean_stat).square().sum();
  rep.variance_ratio = ss / (n - 1);

  double cross = 0;
  long n_pairs = 0;
  for (const auto& s : z)
    for (int i = 0; i < s.rows(); ++i)
      for (int k = 0; k + 1 < s.cols(); ++k) {
        cross += (s(i, k) - rep.mean_stat) * (s(i, k + 1) - rep.mean_stat);
        ++n_pairs;
      }
  rep.lag1_autocorr = ss > 0 ? cross / ss : 0.0;
  rep.lag1_band = 4.0 / std::sqrt(static_cast<double>(std::max<long>(1, n_pairs)));

  rep.mean_ok = std::abs(rep.mean_stat) < rep.mean_band;
  rep.variance_ok = rep.variance_ratio >= 0.95 && rep.variance_ratio <= 1.05;
  rep.autocorr_ok = std::abs(rep.lag1_autocorr) < rep.lag1_band;
  return rep;
}

ConvexityReport convexity_martingale_check(const ModelSpec& spec, const ThetaPolicy& theta1,
                                           const ThetaPolicy& theta2, double lambda1, int n_paths,
                                           std::uint64_t seed, int threads) {
  require_valid(spec);
  const StepTables tab = tabulate_steps(spec);
  const Eigen::MatrixXd t1 = resolve_deterministic(theta1, spec);
  const Eigen::MatrixXd t2 = resolve_deterministic(theta2, spec);
  const double lambda2 = 1.0 - lambda1;
  const int K = spec.grid.n_steps;

  std::vector<double> mismatch(n_paths), excess(n_paths), terminal(n_paths);
  for_each_path_p(spec, n_paths, seed, threads, [&](const Path& path) {
    const Eigen::VectorXd f1 = incremental_density(tab, t1, path.v_inc);
    const Eigen::VectorXd f2 = incremental_density(tab, t2, path.v_inc);
    const Eigen::MatrixXd mixed = convex_mix_theta(t1, t2, lambda1, f1, f2);
    const Eigen::VectorXd g = incremental_density(tab, mixed, path.v_inc);
    const Eigen::VectorXd target = lambda1 * f1 + lambda2 * f2;

    double worst = 0, bound = 0;
    for (int k = 0; k <= K; ++k)
      worst = std::max(worst, std::abs(g(k) - target(k)) / target(k));
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < spec.m; ++i)
        bound = std::max(bound, std::abs(mixed(i, k)) - spec.mu(i));
    mismatch[path.path_id] = worst;
    excess[path.path_id] = bound;
    terminal[path.path_id] = target(K);
  });

  ConvexityReport rep;
  rep.n_paths = n_paths;
  for (double v : mismatch) rep.max_rel_mismatch = std::max(rep.max_rel_mismatch, v);
  rep.max_bound_excess = -std::numeric_limits<double>::infinity();
  for (double v : excess) rep.max_bound_excess = std::max(rep.max_bound_excess, v);
  std::tie(rep.terminal_mean, rep.terminal_stderr) = mean_and_stderr(terminal);
  return rep;
}

}  // namespace rkbf
