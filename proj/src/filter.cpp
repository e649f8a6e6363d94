#include "rkbf/filter.hpp"

namespace rkbf {

namespace {

void check_observation(const ModelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& m_path) {
  if (m_path.rows() != spec.m || m_path.cols() != spec.grid.n_nodes())
    fail(ErrorCode::GridMismatch, "observation path is " + std::to_string(m_path.rows()) + "x" +
                                      std::to_string(m_path.cols()) + ", expected " +
                                      std::to_string(spec.m) + "x" +
                                      std::to_string(spec.grid.n_nodes()));
}

void check_theta(const ModelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& theta) {
  if (theta.rows() != spec.m || theta.cols() != spec.grid.n_steps)
    fail(ErrorCode::GridMismatch, "theta table is " + std::to_string(theta.rows()) + "x" +
                                      std::to_string(theta.cols()) + ", expected " +
                                      std::to_string(spec.m) + "x" +
                                      std::to_string(spec.grid.n_steps));
  for (int k = 0; k < theta.cols(); ++k)
    for (int i = 0; i < theta.rows(); ++i)
      if (!(std::abs(theta(i, k)) <= spec.mu(i)))
        fail(ErrorCode::PolicyBoundViolation,
             "theta(" + std::to_string(i) + ") = " + format_double(theta(i, k)) +
                 " exceeds mu at step " + std::to_string(k));
}

}  // namespace

FilterEngine::FilterEngine(const ModelSpec& spec, const VariancePath& variance)
    : spec_(&spec), tab_(tabulate_steps(spec)), gains_(kalman_gain(spec, variance)) {}

FilterOutput FilterEngine::with_drift(const Eigen::Ref<const Eigen::MatrixXd>& m_path,
                                      const Eigen::Ref<const Eigen::MatrixXd>& theta) const {
  const ModelSpec& spec = *spec_;
  check_observation(spec, m_path);
  check_theta(spec, theta);
  const int K = spec.grid.n_steps;
  const double dt = tab_.dt;

  FilterOutput out;
  out.estimate.resize(spec.n, K + 1);
  out.innovation.resize(spec.m, K);
  out.estimate.col(0) = spec.x0;
  Eigen::VectorXd innov(spec.m);
  for (int k = 0; k < K; ++k) {
    const auto est = out.estimate.col(k);
    innov = m_path.col(k + 1) - m_path.col(k) - (tab_.G[k] * est + tab_.g[k] + theta.col(k)) * dt;
    out.innovation.col(k) = innov;
    out.estimate.col(k + 1) = est + (tab_.F[k] * est + tab_.f[k]) * dt + gains_.at(k) * innov;
  }
  return out;
}

FilterOutput FilterEngine::classical(const Eigen::Ref<const Eigen::MatrixXd>& m_path) const {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(spec_->m, spec_->grid.n_steps);
  FilterOutput out = with_drift(m_path, zero);
  out.measure = Measure::P;
  return out;
}

FilterOutput classical_filter(const ModelSpec& spec,
                              const Eigen::Ref<const Eigen::MatrixXd>& m_path) {
  return FilterEngine(spec, solve_riccati(spec)).classical(m_path);
}

FilterOutput theta_filter(const ModelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& m_path,
                          const Eigen::Ref<const Eigen::MatrixXd>& theta) {
  FilterOutput out = FilterEngine(spec, solve_riccati(spec)).with_drift(m_path, theta);
  out.measure = Measure::PTheta;
  return out;
}

Eigen::MatrixXd decompose_correction(const ModelSpec& spec, const VariancePath& variance,
                                     const Eigen::Ref<const Eigen::MatrixXd>& theta) {
  check_theta(spec, theta);
  const int K = spec.grid.n_steps;
  const double dt = spec.grid.dt();
  const GainPath gains = kalman_gain(spec, variance);
  const std::vector<Eigen::MatrixXd> steps = closed_loop_steps(spec, variance);

  // theta at node j; the table is per step, the last node reuses the final
  // step's (left-constant) value.
  auto theta_node = [&](int j) { return theta.col(std::min(j, K - 1)); };

  Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(spec.n, K + 1);
  // columns[k] holds A(t_j, s_k) theta_k for the current node j.
  std::vector<Eigen::VectorXd> columns;
  columns.reserve(K + 1);
  columns.push_back(gains.at(0) * theta_node(0));
  for (int j = 1; j <= K; ++j) {
    for (auto& col : columns) col = steps[j - 1] * col;
    columns.push_back(gains.at(j) * theta_node(j));
    Eigen::VectorXd sum = 0.5 * columns.front() + 0.5 * columns.back();
    for (int k = 1; k < j; ++k) sum += columns[k];
    corr.col(j) = dt * sum;
  }
  return corr;
}

Eigen::MatrixXd decompose(const ModelSpec& spec, const VariancePath& variance,
                          const Eigen::Ref<const Eigen::MatrixXd>& xbar,
                          const Eigen::Ref<const Eigen::MatrixXd>& theta) {
  if (xbar.rows() != spec.n || xbar.cols() != spec.grid.n_nodes())
    fail(ErrorCode::GridMismatch, "estimate path does not match the model grid");
  return xbar - decompose_correction(spec, variance, theta);
}

Eigen::MatrixXd innovation_path(const ModelSpec& spec,
                                const Eigen::Ref<const Eigen::MatrixXd>& m_path,
                                const Eigen::Ref<const Eigen::MatrixXd>& estimate,
                                const Eigen::Ref<const Eigen::MatrixXd>& theta) {
  check_observation(spec, m_path);
  check_theta(spec, theta);
  if (estimate.rows() != spec.n || estimate.cols() != spec.grid.n_nodes())
    fail(ErrorCode::GridMismatch, "estimate path does not match the model grid");
  const StepTables tab = tabulate_steps(spec);
  Eigen::MatrixXd out(spec.m, spec.grid.n_steps);
  for (int k = 0; k < spec.grid.n_steps; ++k)
    out.col(k) = m_path.col(k + 1) - m_path.col(k) -
                 (tab.G[k] * estimate.col(k) + tab.g[k] + theta.col(k)) * tab.dt;
  return out;
}

}  // namespace rkbf
