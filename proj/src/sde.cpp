#include "rkbf/sde.hpp"

#include <cmath>

#include "rkbf/parallel.hpp"
#include "rkbf/rng.hpp"

namespace rkbf {

namespace {

// Symmetric PSD square root; Q may be singular.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  if (a.rows() == 1) return Eigen::MatrixXd::Constant(1, 1, std::sqrt(std::max(a(0, 0), 0.0)));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

void bound_theta(Eigen::VectorXd& value, const Eigen::VectorXd& mu, bool clamp, int k) {
  for (int i = 0; i < value.size(); ++i) {
    if (std::abs(value(i)) <= mu(i)) continue;
    if (clamp)
      value(i) = std::clamp(value(i), -mu(i), mu(i));
    else
      fail(ErrorCode::PolicyBoundViolation,
           "theta(" + std::to_string(i) + ") = " + format_double(value(i)) + " exceeds mu = " +
               format_double(mu(i)) + " at step " + std::to_string(k));
  }
}

}  // namespace

StepTables tabulate_steps(const ModelSpec& spec) {
  StepTables t;
  t.dt = spec.grid.dt();
  t.n_steps = spec.grid.n_steps;
  t.F.reserve(t.n_steps);
  for (int k = 0; k < t.n_steps; ++k) {
    Coeffs c = eval_coeffs(spec, spec.grid.node(k));
    Eigen::LLT<Eigen::MatrixXd> llt(c.R);
    if (llt.info() != Eigen::Success)
      fail(ErrorCode::SingularR, "R not positive definite at node " + std::to_string(k));
    t.R_inv.push_back(llt.solve(Eigen::MatrixXd::Identity(spec.m, spec.m)));
    t.sqrt_Q_dt.push_back(psd_sqrt(c.Q * t.dt));
    t.sqrt_R_dt.push_back(psd_sqrt(c.R * t.dt));
    t.F.push_back(std::move(c.F));
    t.G.push_back(std::move(c.G));
    t.f.push_back(std::move(c.f));
    t.g.push_back(std::move(c.g));
  }
  return t;
}

ThetaPolicy ThetaPolicy::zero() { return constant(0.0); }

ThetaPolicy ThetaPolicy::constant(const Eigen::VectorXd& value, bool clamp) {
  ThetaPolicy p;
  p.shape = Constant{value};
  p.clamp = clamp;
  return p;
}

ThetaPolicy ThetaPolicy::constant(double value, bool clamp) {
  return constant(Eigen::VectorXd::Constant(1, value), clamp);
}

ThetaPolicy ThetaPolicy::table(const Eigen::MatrixXd& values, bool clamp) {
  ThetaPolicy p;
  p.shape = Table{values};
  p.clamp = clamp;
  return p;
}

ThetaPolicy ThetaPolicy::feedback(FeedbackRule rule, bool clamp) {
  ThetaPolicy p;
  p.shape = Feedback{std::move(rule)};
  p.clamp = clamp;
  return p;
}

namespace {

// Uniform access to the three policy shapes during a single-path sweep.
class PolicyEval {
 public:
  PolicyEval(const ThetaPolicy& policy, const ModelSpec& spec) : policy_(policy), spec_(spec) {
    if (const auto* c = std::get_if<ThetaPolicy::Constant>(&policy.shape)) {
      Eigen::VectorXd v = c->value;
      if (v.size() == 0) v = Eigen::VectorXd::Zero(spec.m);
      if (v.size() != spec.m)
        fail(ErrorCode::GridMismatch, "constant theta has length " + std::to_string(v.size()) +
                                          ", model needs " + std::to_string(spec.m));
      bound_theta(v, spec.mu, policy.clamp, 0);
      constant_ = std::move(v);
    } else if (const auto* t = std::get_if<ThetaPolicy::Table>(&policy.shape)) {
      if (t->values.rows() != spec.m || t->values.cols() != spec.grid.n_steps)
        fail(ErrorCode::GridMismatch,
             "theta table is " + std::to_string(t->values.rows()) + "x" +
                 std::to_string(t->values.cols()) + ", model needs " + std::to_string(spec.m) +
                 "x" + std::to_string(spec.grid.n_steps));
    }
  }

  Eigen::VectorXd at(int k, const Eigen::Ref<const Eigen::MatrixXd>& m_history) const {
    if (constant_.size()) return constant_;
    if (const auto* t = std::get_if<ThetaPolicy::Table>(&policy_.shape)) {
      Eigen::VectorXd v = t->values.col(k);
      bound_theta(v, spec_.mu, policy_.clamp, k);
      return v;
    }
    const auto& fb = std::get<ThetaPolicy::Feedback>(policy_.shape);
    Eigen::VectorXd v = fb.rule(k, spec_.grid.node(k), m_history);
    if (v.size() != spec_.m)
      fail(ErrorCode::GridMismatch, "feedback rule returned wrong-length theta");
    bound_theta(v, spec_.mu, policy_.clamp, k);
    return v;
  }

 private:
  const ThetaPolicy& policy_;
  const ModelSpec& spec_;
  Eigen::VectorXd constant_;
};

void simulate_one(const ModelSpec& spec, const StepTables& tab, const PolicyEval& policy,
                  std::uint64_t seed, std::uint64_t path_id, Path& path) {
  const int n = spec.n, m = spec.m, K = tab.n_steps;
  const double dt = tab.dt;
  path.path_id = path_id;
  path.x.resize(n, K + 1);
  path.m.resize(m, K + 1);
  path.w_inc.resize(n, K);
  path.v_inc.resize(m, K);
  path.theta.resize(m, K);
  path.x.col(0) = spec.x0;
  path.m.col(0).setZero();

  const CounterRng rng(seed, path_id);
  Eigen::VectorXd zw(n), zv(m);
  std::uint64_t counter = 0;
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < n; ++i) zw(i) = rng.normal(counter++);
    for (int i = 0; i < m; ++i) zv(i) = rng.normal(counter++);
    path.w_inc.col(k).noalias() = tab.sqrt_Q_dt[k] * zw;
    path.v_inc.col(k).noalias() = tab.sqrt_R_dt[k] * zv;
    path.theta.col(k) = policy.at(k, path.m.leftCols(k + 1));
    path.x.col(k + 1) = path.x.col(k) + (tab.F[k] * path.x.col(k) + tab.f[k]) * dt + path.w_inc.col(k);
    path.m.col(k + 1) = path.m.col(k) +
                        (tab.G[k] * path.x.col(k) + tab.g[k] + path.theta.col(k)) * dt +
                        path.v_inc.col(k);
  }
}

void run_paths(const ModelSpec& spec, const ThetaPolicy& policy, int n_paths, std::uint64_t seed,
               int threads, const std::function<void(const Path&)>& visit) {
  require_valid(spec);
  const StepTables tab = tabulate_steps(spec);
  const PolicyEval eval(policy, spec);
  // One reusable buffer per worker; contiguous blocks keep reuse local.
  parallel_for(n_paths, threads, [&](long i) {
    thread_local Path buffer;
    simulate_one(spec, tab, eval, seed, static_cast<std::uint64_t>(i), buffer);
    visit(buffer);
  });
}

}  // namespace

void for_each_path_p(const ModelSpec& spec, int n_paths, std::uint64_t seed, int threads,
                     const std::function<void(const Path&)>& visit) {
  run_paths(spec, ThetaPolicy::zero(), n_paths, seed, threads, visit);
}

void for_each_path_theta(const ModelSpec& spec, const ThetaPolicy& policy, int n_paths,
                         std::uint64_t seed, int threads,
                         const std::function<void(const Path&)>& visit) {
  run_paths(spec, policy, n_paths, seed, threads, visit);
}

PathBundle simulate_p(const ModelSpec& spec, int n_paths, std::uint64_t seed, int threads) {
  PathBundle bundle;
  bundle.measure = Measure::P;
  bundle.seed = seed;
  bundle.paths.resize(n_paths);
  for_each_path_p(spec, n_paths, seed, threads,
                  [&](const Path& p) { bundle.paths[p.path_id] = p; });
  return bundle;
}

PathBundle simulate_theta(const ModelSpec& spec, const ThetaPolicy& policy, int n_paths,
                          std::uint64_t seed, int threads) {
  PathBundle bundle;
  bundle.measure = Measure::PTheta;
  bundle.seed = seed;
  bundle.paths.resize(n_paths);
  for_each_path_theta(spec, policy, n_paths, seed, threads,
                      [&](const Path& p) { bundle.paths[p.path_id] = p; });
  return bundle;
}

Eigen::MatrixXd resolve_deterministic(const ThetaPolicy& policy, const ModelSpec& spec) {
  if (!policy.is_deterministic())
    fail(ErrorCode::UnsupportedEstimator, "feedback policy has no deterministic table");
  const PolicyEval eval(policy, spec);
  Eigen::MatrixXd out(spec.m, spec.grid.n_steps);
  const Eigen::MatrixXd empty(spec.m, 0);
  for (int k = 0; k < spec.grid.n_steps; ++k) out.col(k) = eval.at(k, empty);
  return out;
}

Eigen::MatrixXd policy_values_along(const ThetaPolicy& policy, const ModelSpec& spec,
                                    const Eigen::Ref<const Eigen::MatrixXd>& m_path) {
  if (m_path.rows() != spec.m || m_path.cols() != spec.grid.n_nodes())
    fail(ErrorCode::GridMismatch, "observation path does not match the model grid");
  const PolicyEval eval(policy, spec);
  Eigen::MatrixXd out(spec.m, spec.grid.n_steps);
  for (int k = 0; k < spec.grid.n_steps; ++k) out.col(k) = eval.at(k, m_path.leftCols(k + 1));
  return out;
}

namespace {

void check_density_inputs(int m, int K, const Eigen::Ref<const Eigen::MatrixXd>& theta,
                          const Eigen::Ref<const Eigen::MatrixXd>& v_inc) {
  if (theta.rows() != m || theta.cols() != K || v_inc.rows() != m || v_inc.cols() != K)
    fail(ErrorCode::GridMismatch, "theta/v increments do not match the model grid");
}

}  // namespace

Eigen::VectorXd girsanov_density(const StepTables& tab,
                                 const Eigen::Ref<const Eigen::MatrixXd>& theta,
                                 const Eigen::Ref<const Eigen::MatrixXd>& v_inc) {
  const int K = tab.n_steps;
  check_density_inputs(static_cast<int>(tab.R_inv.empty() ? theta.rows() : tab.R_inv[0].rows()), K,
                       theta, v_inc);
  Eigen::VectorXd out(K + 1);
  out(0) = 1.0;
  double log_f = 0.0;
  for (int k = 0; k < K; ++k) {
    const Eigen::VectorXd weighted = tab.R_inv[k] * theta.col(k);
    log_f += weighted.dot(v_inc.col(k)) - 0.5 * weighted.dot(theta.col(k)) * tab.dt;
    out(k + 1) = std::exp(log_f);
  }
  return out;
}

Eigen::VectorXd girsanov_density(const ModelSpec& spec,
                                 const Eigen::Ref<const Eigen::MatrixXd>& theta,
                                 const Eigen::Ref<const Eigen::MatrixXd>& v_inc) {
  check_density_inputs(spec.m, spec.grid.n_steps, theta, v_inc);
  return girsanov_density(tabulate_steps(spec), theta, v_inc);
}

Eigen::VectorXd incremental_density(const StepTables& tab,
                                    const Eigen::Ref<const Eigen::MatrixXd>& theta,
                                    const Eigen::Ref<const Eigen::MatrixXd>& v_inc) {
  const int K = tab.n_steps;
  check_density_inputs(static_cast<int>(tab.R_inv.empty() ? theta.rows() : tab.R_inv[0].rows()), K,
                       theta, v_inc);
  Eigen::VectorXd out(K + 1);
  out(0) = 1.0;
  for (int k = 0; k < K; ++k) {
    const double factor = 1.0 + (tab.R_inv[k] * theta.col(k)).dot(v_inc.col(k));
    if (!(factor > 0.0))
      fail(ErrorCode::NonPositiveDensity,
           "multiplicative factor " + format_double(factor) + " at step " + std::to_string(k));
    out(k + 1) = out(k) * factor;
  }
  return out;
}

Eigen::VectorXd incremental_density(const ModelSpec& spec,
                                    const Eigen::Ref<const Eigen::MatrixXd>& theta,
                                    const Eigen::Ref<const Eigen::MatrixXd>& v_inc) {
  check_density_inputs(spec.m, spec.grid.n_steps, theta, v_inc);
  return incremental_density(tabulate_steps(spec), theta, v_inc);
}

Eigen::MatrixXd convex_mix_theta(const Eigen::Ref<const Eigen::MatrixXd>& theta1,
                                 const Eigen::Ref<const Eigen::MatrixXd>& theta2, double lambda1,
                                 const Eigen::Ref<const Eigen::VectorXd>& f1,
                                 const Eigen::Ref<const Eigen::VectorXd>& f2) {
  if (!(lambda1 >= 0.0 && lambda1 <= 1.0))
    fail(ErrorCode::GridMismatch, "lambda1 must lie in [0, 1]");
  const int K = static_cast<int>(theta1.cols());
  if (theta2.rows() != theta1.rows() || theta2.cols() != K || f1.size() < K || f2.size() < K)
    fail(ErrorCode::GridMismatch, "mixture inputs do not share a grid");
  for (int k = 0; k < K; ++k)
    if (!(f1(k) > 0.0) || !(f2(k) > 0.0))
      fail(ErrorCode::NonPositiveDensity, "running density not positive at node " + std::to_string(k));

  if (lambda1 == 1.0) return theta1;
  if (lambda1 == 0.0) return theta2;
  const double lambda2 = 1.0 - lambda1;
  Eigen::MatrixXd out(theta1.rows(), K);
  for (int k = 0; k < K; ++k) {
    // theta1 + w (theta2 - theta1) with w in (0,1): exact when inputs agree.
    const double w = lambda2 * f2(k) / (lambda1 * f1(k) + lambda2 * f2(k));
    out.col(k) = theta1.col(k) + w * (theta2.col(k) - theta1.col(k));
  }
  return out;
}

CsvWriter paths_to_csv(const ModelSpec& spec, const PathBundle& bundle) {
  std::vector<std::string> header{"path_id", "k", "t"};
  for (int i = 0; i < spec.n; ++i) header.push_back("x_" + std::to_string(i));
  for (int i = 0; i < spec.m; ++i) header.push_back("m_" + std::to_string(i));
  for (int i = 0; i < spec.m; ++i) header.push_back("theta_" + std::to_string(i));
  CsvWriter csv(std::move(header));
  for (const Path& p : bundle.paths) {
    for (int k = 0; k <= spec.grid.n_steps; ++k) {
      csv.begin_row();
      csv.add(static_cast<std::int64_t>(p.path_id));
      csv.add(static_cast<std::int64_t>(k));
      csv.add(spec.grid.node(k));
      for (int i = 0; i < spec.n; ++i) csv.add(p.x(i, k));
      for (int i = 0; i < spec.m; ++i) csv.add(p.m(i, k));
      for (int i = 0; i < spec.m; ++i) {
        if (k < spec.grid.n_steps)
          csv.add(p.theta(i, k));
        else
          csv.add_empty();
      }
      csv.end_row();
    }
  }
  return csv;
}

}  // namespace rkbf
