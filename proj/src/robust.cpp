#include "rkbf/robust.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

#include "rkbf/eval.hpp"
#include "rkbf/parallel.hpp"

namespace rkbf {

// ---------------------------------------------------------------------------
// Estimator descriptions

EstimatorSpec classical_estimator(const ModelSpec& spec) {
  return ShiftedFilter{Eigen::MatrixXd::Zero(spec.m, spec.grid.n_steps)};
}

namespace {

std::string row_summary(const Eigen::MatrixXd& table) {
  // Constant tables print their value, anything else its shape.
  bool constant = true;
  for (int k = 1; k < table.cols() && constant; ++k)
    if ((table.col(k) - table.col(0)).cwiseAbs().maxCoeff() != 0.0) constant = false;
  std::ostringstream oss;
  if (constant && table.cols() > 0) {
    oss << "const[";
    for (int i = 0; i < table.rows(); ++i) {
      if (i) oss << ",";
      oss << format_double(table(i, 0));
    }
    oss << "]";
  } else {
    oss << "table(" << table.rows() << "x" << table.cols() << ")";
  }
  return oss.str();
}

}  // namespace

std::string describe(const EstimatorSpec& estimator) {
  if (const auto* fi = std::get_if<FilterInduced>(&estimator))
    return "filter_induced:" + row_summary(fi->theta);
  if (const auto* sf = std::get_if<ShiftedFilter>(&estimator)) {
    if (sf->u.size() == 0 || sf->u.cwiseAbs().maxCoeff() == 0.0) return "classical";
    return "shifted_filter:" + row_summary(sf->u);
  }
  return "custom";
}

std::string describe(const ThetaPolicy& policy) {
  if (const auto* c = std::get_if<ThetaPolicy::Constant>(&policy.shape)) {
    Eigen::MatrixXd t = c->value.size() ? Eigen::MatrixXd(c->value) : Eigen::MatrixXd::Zero(1, 1);
    return "theta_" + row_summary(t);
  }
  if (const auto* t = std::get_if<ThetaPolicy::Table>(&policy.shape))
    return "theta_" + row_summary(t->values);
  return "theta_feedback";
}

// ---------------------------------------------------------------------------
// Bias weights and the estimator engine

BiasWeights bias_weights(const ModelSpec& spec, const VariancePath& variance, int t_index) {
  const int K = spec.grid.n_steps;
  if (t_index < 0 || t_index > K)
    fail(ErrorCode::IndexOrder, "t_index " + std::to_string(t_index) + " outside [0, " +
                                    std::to_string(K) + "]");
  BiasWeights out;
  out.t_index = t_index;
  if (t_index == 0) return out;

  const double dt = spec.grid.dt();
  const GainPath gains = kalman_gain(spec, variance);
  // c over nodes 0..t: trapezoid weights, A(t,s_k) = Phi(t,s_k) K_k built
  // backwards through the one-step propagators.
  std::vector<Eigen::MatrixXd> node_c(t_index + 1);
  node_c[t_index] = 0.5 * dt * gains.at(t_index);
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(spec.n, spec.n);
  for (int k = t_index - 1; k >= 0; --k) {
    phi = phi * closed_loop_step(spec, variance, k);
    const double w = (k == 0) ? 0.5 : 1.0;
    node_c[k] = w * dt * (phi * gains.at(k));
  }
  // Fold node weights onto step indices: node j belongs to step min(j, K-1).
  const int n_entries = std::min(t_index, K - 1) + 1;
  out.c.assign(n_entries, Eigen::MatrixXd::Zero(spec.n, spec.m));
  for (int j = 0; j <= t_index; ++j) out.c[std::min(j, K - 1)] += node_c[j];
  return out;
}

namespace {

Eigen::VectorXd weighted_sum(const BiasWeights& weights,
                             const Eigen::Ref<const Eigen::MatrixXd>& table, int n) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < weights.c.size(); ++k) sum += weights.c[k] * table.col(k);
  return sum;
}

}  // namespace

EstimatorEngine::EstimatorEngine(const ModelSpec& spec, const VariancePath& variance,
                                 const EstimatorSpec& estimator, int t_index)
    : spec_(&spec), filter_(spec, variance), t_index_(t_index) {
  if (t_index < 0 || t_index > spec.grid.n_steps)
    fail(ErrorCode::IndexOrder, "t_index outside the grid");
  if (const auto* fi = std::get_if<FilterInduced>(&estimator)) {
    theta_ = fi->theta;
  } else if (const auto* sf = std::get_if<ShiftedFilter>(&estimator)) {
    if (sf->u.rows() != spec.m || sf->u.cols() != spec.grid.n_steps)
      fail(ErrorCode::GridMismatch, "shift table does not match the model grid");
    if (!sf->u.allFinite()) fail(ErrorCode::NonFiniteEntry, "shift table has non-finite entries");
    shift_ = weighted_sum(bias_weights(spec, variance, t_index), sf->u, spec.n);
    theta_ = Eigen::MatrixXd::Zero(spec.m, spec.grid.n_steps);
  } else {
    custom_ = std::get_if<CustomEstimator>(&estimator);
  }
}

Eigen::VectorXd EstimatorEngine::apply(const Path& path) const {
  if (custom_) return custom_->rule(*spec_, path.m);
  Eigen::VectorXd est = filter_.with_drift(path.m, theta_).estimate.col(t_index_);
  if (shift_.size()) est -= shift_;
  return est;
}

// ---------------------------------------------------------------------------
// Deterministic worst case / minimax

double bias_variance_mse(const ModelSpec& spec, const VariancePath& variance,
                         const BiasWeights& weights, const Eigen::Ref<const Eigen::MatrixXd>& u,
                         const Eigen::Ref<const Eigen::MatrixXd>& theta) {
  const double trace_p = variance.at_node(weights.t_index).trace();
  const Eigen::VectorXd bias = weighted_sum(weights, u, spec.n) - weighted_sum(weights, theta, spec.n);
  return trace_p + bias.squaredNorm();
}

namespace {

// Entries (k, i) of the theta box that actually move the bias.
struct BoxEntry {
  int k, i;
  Eigen::VectorXd column;  // c_k.col(i) * mu_i
};

std::vector<BoxEntry> active_entries(const ModelSpec& spec, const BiasWeights& weights) {
  std::vector<BoxEntry> out;
  for (std::size_t k = 0; k < weights.c.size(); ++k)
    for (int i = 0; i < spec.m; ++i) {
      Eigen::VectorXd col = weights.c[k].col(i) * spec.mu(i);
      if (col.cwiseAbs().maxCoeff() > 0.0) out.push_back({static_cast<int>(k), i, std::move(col)});
    }
  return out;
}

bool lex_less(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  for (int k = 0; k < a.cols(); ++k)
    for (int i = 0; i < a.rows(); ++i) {
      if (a(i, k) < b(i, k)) return true;
      if (a(i, k) > b(i, k)) return false;
    }
  return false;
}

// Maximizes |b - sum_e sigma_e col_e|^2 over sign patterns by a Gray-code
// walk; used for non-scalar signals where no closed form applies.
struct CornerMax {
  double value = 0;
  std::vector<int> signs;
};

CornerMax corner_enumerate(const Eigen::VectorXd& b, const std::vector<BoxEntry>& entries) {
  const std::size_t e = entries.size();
  if (e > 20) fail(ErrorCode::BudgetExceeded, "corner enumeration needs 2^" + std::to_string(e) + " points");
  std::vector<int> signs(e, 1);
  Eigen::VectorXd w = b;
  for (const auto& en : entries) w -= en.column;
  CornerMax best{w.squaredNorm(), signs};
  const std::uint64_t total = 1ULL << e;
  for (std::uint64_t g = 1; g < total; ++g) {
    // Gray-code walk: flip the lowest set bit's position.
    int bit = 0;
    while ((g >> bit & 1) == 0) ++bit;
    signs[bit] = -signs[bit];
    w += (signs[bit] > 0 ? -2.0 : 2.0) * entries[bit].column;
    const double v = w.squaredNorm();
    if (v > best.value) best = {v, signs};
  }
  return best;
}

Eigen::MatrixXd corner_table(const ModelSpec& spec, const std::vector<BoxEntry>& entries,
                             const std::vector<int>& signs) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(spec.m, spec.grid.n_steps);
  for (std::size_t e = 0; e < entries.size(); ++e)
    out(entries[e].i, entries[e].k) = signs[e] * spec.mu(entries[e].i);
  return out;
}

}  // namespace

WorstCaseResult worst_case_mse_deterministic(const ModelSpec& spec, const VariancePath& variance,
                                             int t_index, const ShiftedFilter& estimator) {
  require_valid(spec);
  if (estimator.u.rows() != spec.m || estimator.u.cols() != spec.grid.n_steps)
    fail(ErrorCode::GridMismatch, "shift table does not match the model grid");
  const BiasWeights weights = bias_weights(spec, variance, t_index);
  WorstCaseResult out;
  out.trace_p = variance.at_node(t_index).trace();
  const Eigen::VectorXd b = weighted_sum(weights, estimator.u, spec.n);
  const std::vector<BoxEntry> entries = active_entries(spec, weights);

  if (spec.n == 1) {
    // Scalar bias: sup over the box of (b - L)^2 = (|b| + sum |col|)^2,
    // attained with every entry at the sign opposing b.
    double reach = 0;
    for (const auto& e : entries) reach += std::abs(e.column(0));
    out.value = out.trace_p + (std::abs(b(0)) + reach) * (std::abs(b(0)) + reach);
    std::vector<int> signs;
    signs.reserve(entries.size());
    const double dir = b(0) >= 0.0 ? -1.0 : 1.0;
    for (const auto& e : entries) signs.push_back(e.column(0) * dir > 0.0 ? 1 : -1);
    Eigen::MatrixXd star = corner_table(spec, entries, signs);
    if (b(0) == 0.0 && reach > 0.0) {
      // Both sign families attain; report the lexicographically smaller.
      for (auto& s : signs) s = -s;
      Eigen::MatrixXd mirror = corner_table(spec, entries, signs);
      if (lex_less(mirror, star)) star = mirror;
    }
    out.theta_star = star;
    return out;
  }

  const CornerMax best = corner_enumerate(b, entries);
  out.value = out.trace_p + best.value;
  out.theta_star = corner_table(spec, entries, best.signs);
  return out;
}

MinimaxSolution minimax_deterministic(const ModelSpec& spec, const VariancePath& variance,
                                      int t_index) {
  require_valid(spec);
  MinimaxSolution out;
  out.weights = bias_weights(spec, variance, t_index);
  out.trace_p = variance.at_node(t_index).trace();
  out.u_star = Eigen::MatrixXd::Zero(spec.m, spec.grid.n_steps);
  const std::vector<BoxEntry> entries = active_entries(spec, out.weights);

  // The reachable bias set is symmetric about the origin, so the optimal
  // offset of the estimator is zero and the value is trace P + (sup |w|)^2.
  if (entries.empty()) {
    out.value = out.trace_p;
    out.bias_sup = 0.0;
    return out;
  }
  if (spec.n == 1) {
    double reach = 0;
    for (const auto& e : entries) reach += std::abs(e.column(0));
    out.bias_sup = reach;
    std::vector<int> signs;
    for (const auto& e : entries) signs.push_back(e.column(0) > 0.0 ? 1 : -1);
    Eigen::MatrixXd plus = corner_table(spec, entries, signs);
    for (auto& s : signs) s = -s;
    Eigen::MatrixXd minus = corner_table(spec, entries, signs);
    if (lex_less(minus, plus)) {
      out.theta_corners = {minus, plus};
    } else {
      out.theta_corners = {plus, minus};
    }
  } else {
    const CornerMax best = corner_enumerate(Eigen::VectorXd::Zero(spec.n), entries);
    out.bias_sup = std::sqrt(best.value);
    Eigen::MatrixXd star = corner_table(spec, entries, best.signs);
    std::vector<int> mirrored = best.signs;
    for (auto& s : mirrored) s = -s;
    Eigen::MatrixXd mirror = corner_table(spec, entries, mirrored);
    if (lex_less(mirror, star)) std::swap(star, mirror);
    out.theta_corners = {star, mirror};
  }
  out.value = out.trace_p + out.bias_sup * out.bias_sup;
  return out;
}

McWorstCase mc_worst_case(const ModelSpec& spec, int t_index, const EstimatorSpec& estimator,
                          const std::vector<ThetaPolicy>& candidates, int n_paths,
                          std::uint64_t seed, int threads) {
  McWorstCase out;
  for (const ThetaPolicy& policy : candidates) {
    const McEstimate est = mc_mse(spec, policy, estimator, t_index, n_paths, seed, threads);
    out.candidates.push_back({describe(policy), est.mean, est.stderr_});
    if (out.argmax < 0 || est.mean > out.max_mse) {
      out.argmax = static_cast<int>(out.candidates.size()) - 1;
      out.max_mse = est.mean;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite estimation game

namespace {

struct GameTables {
  int n_outcomes = 0;
  int n_classes = 0;
  int n_strategies = 0;
  // Per strategy s and class z: probability mass C, first moment B and
  // second moment A of x_K restricted to the class.
  std::vector<double> C, B, A;  // indexed s * n_classes + z
  std::vector<double> phi_pure;  // Bayes risk of each pure strategy alone
};

int sign_bit(std::uint32_t outcome, int bit) { return (outcome >> bit & 1u) ? 1 : -1; }

GameTables build_tables(const GameSpec& game) {
  const int K = game.n_steps;
  if (K < 1 || K > 3)
    fail(ErrorCode::BudgetExceeded, "game supports 1 to 3 steps, got " + std::to_string(K));
  if (!(game.dt > 0) || !(game.R > 0) || !(game.Q >= 0) || !(game.mu >= 0))
    fail(ErrorCode::InvalidSpec, "game needs dt > 0, R > 0, Q >= 0, mu >= 0");

  std::vector<double> alphabet = game.alphabet;
  if (alphabet.empty()) alphabet = {-game.mu, 0.0, game.mu};
  std::sort(alphabet.begin(), alphabet.end());
  alphabet.erase(std::unique(alphabet.begin(), alphabet.end()), alphabet.end());
  const double tilt_scale = std::sqrt(game.dt / game.R);
  std::vector<double> tau;
  for (double a : alphabet) {
    if (std::abs(a) > game.mu)
      fail(ErrorCode::PolicyBoundViolation, "alphabet value " + format_double(a) + " exceeds mu");
    if (std::abs(a) * tilt_scale >= 1.0)
      fail(ErrorCode::InvalidTilt, "theta*sqrt(dt/R) = " + format_double(std::abs(a) * tilt_scale) +
                                       " >= 1 makes the tilted step distribution invalid");
    tau.push_back(a * tilt_scale);
  }
  const int n_alpha = static_cast<int>(alphabet.size());

  // Decision points: one per (step, adversary history); history is the
  // full (signal, observation) sign record, 4^k states at step k. The
  // open-loop restriction keeps a single decision per step.
  std::vector<int> offset(K + 1, 0);
  for (int k = 0; k < K; ++k) offset[k + 1] = offset[k] + (game.open_loop ? 1 : (1 << (2 * k)));
  const int n_decisions = offset[K];
  double strategies = 1;
  for (int d = 0; d < n_decisions; ++d) {
    strategies *= n_alpha;
    if (strategies > static_cast<double>(game.budget))
      fail(ErrorCode::BudgetExceeded,
           "pure adversary strategies " + std::to_string(n_alpha) + "^" +
               std::to_string(n_decisions) + " exceed budget " + std::to_string(game.budget));
  }

  GameTables t;
  t.n_outcomes = 1 << (2 * K);
  t.n_strategies = static_cast<int>(strategies);

  // Sample paths: bit 2k is the signal sign, bit 2k+1 the observation sign.
  const double sq = std::sqrt(game.Q * game.dt);
  const double sr = std::sqrt(game.R * game.dt);
  std::vector<double> x_terminal(t.n_outcomes);
  std::vector<std::vector<double>> dm(K, std::vector<double>(t.n_outcomes));
  double dm_scale = 1.0;
  for (int w = 0; w < t.n_outcomes; ++w) {
    double x = game.x0;
    for (int k = 0; k < K; ++k) {
      dm[k][w] = (game.G * x + game.g) * game.dt + sr * sign_bit(w, 2 * k + 1);
      dm_scale = std::max(dm_scale, std::abs(dm[k][w]));
      x = x + (game.F * x + game.f) * game.dt + sq * sign_bit(w, 2 * k);
    }
    x_terminal[w] = x;
  }

  // Observation classes: outcomes with the same increment history are
  // indistinguishable to the estimator. Engineered coincidences are merged
  // by quantizing at 1e-9 of the increment scale.
  const double quantum = 1e-9 * dm_scale;
  std::map<std::vector<long long>, int> class_ids;
  std::vector<int> class_of(t.n_outcomes);
  for (int w = 0; w < t.n_outcomes; ++w) {
    std::vector<long long> key(K);
    for (int k = 0; k < K; ++k) key[k] = std::llround(dm[k][w] / quantum);
    auto [it, inserted] = class_ids.try_emplace(key, static_cast<int>(class_ids.size()));
    class_of[w] = it->second;
  }
  t.n_classes = static_cast<int>(class_ids.size());

  // Moment tables per pure strategy. A strategy is a base-|alphabet|
  // number with one digit per decision point, in (step, history) order.
  std::vector<int> digit_div(n_decisions, 1);
  for (int d = 1; d < n_decisions; ++d) digit_div[d] = digit_div[d - 1] * n_alpha;
  t.C.assign(static_cast<std::size_t>(t.n_strategies) * t.n_classes, 0.0);
  t.B.assign(t.C.size(), 0.0);
  t.A.assign(t.C.size(), 0.0);
  const double base = 1.0 / t.n_outcomes;
  for (int s = 0; s < t.n_strategies; ++s) {
    for (int w = 0; w < t.n_outcomes; ++w) {
      double p = base;
      for (int k = 0; k < K; ++k) {
        const int history = game.open_loop ? 0 : (w & ((1 << (2 * k)) - 1));
        const int a_idx = (s / digit_div[offset[k] + history]) % n_alpha;
        p *= 1.0 + sign_bit(w, 2 * k + 1) * tau[a_idx];
      }
      const std::size_t idx = static_cast<std::size_t>(s) * t.n_classes + class_of[w];
      t.C[idx] += p;
      t.B[idx] += p * x_terminal[w];
      t.A[idx] += p * x_terminal[w] * x_terminal[w];
    }
  }

  t.phi_pure.resize(t.n_strategies);
  for (int s = 0; s < t.n_strategies; ++s) {
    double phi = 0;
    for (int z = 0; z < t.n_classes; ++z) {
      const std::size_t idx = static_cast<std::size_t>(s) * t.n_classes + z;
      if (t.C[idx] > 0) phi += t.A[idx] - t.B[idx] * t.B[idx] / t.C[idx];
    }
    t.phi_pure[s] = phi;
  }
  return t;
}

// Saddle solver: pairwise Frank-Wolfe ascent on the concave Bayes risk
// phi(pi) = sum_z [A_z(pi) - B_z(pi)^2 / C_z(pi)] over the strategy
// simplex, with exact line search. The Frank-Wolfe gap equals
// max_s q_s(e(pi)) - phi(pi), which certifies |minimax - maximin|.
struct SaddleResult {
  std::vector<double> pi;
  std::vector<double> estimator;
  double maximin = 0;       // phi at the final mixture
  double minimax_bound = 0; // max_s q_s at the final estimator
  long iterations = 0;
};

SaddleResult solve_saddle(const GameTables& t, double tol, long max_iters) {
  const int S = t.n_strategies;
  const int Z = t.n_classes;
  SaddleResult res;
  res.pi.assign(S, 1.0 / S);

  std::vector<double> Ca(Z, 0), Ba(Z, 0), Aa(Z, 0);  // mixture moments
  for (int s = 0; s < S; ++s)
    for (int z = 0; z < Z; ++z) {
      const std::size_t idx = static_cast<std::size_t>(s) * Z + z;
      Ca[z] += res.pi[s] * t.C[idx];
      Ba[z] += res.pi[s] * t.B[idx];
      Aa[z] += res.pi[s] * t.A[idx];
    }

  std::vector<double> e(Z, 0), grad(S, 0);
  auto bayes = [&] {
    for (int z = 0; z < Z; ++z) e[z] = Ca[z] > 0 ? Ba[z] / Ca[z] : 0.0;
  };
  auto gradient = [&] {
    for (int s = 0; s < S; ++s) {
      double q = 0;
      const std::size_t row = static_cast<std::size_t>(s) * Z;
      for (int z = 0; z < Z; ++z)
        q += t.A[row + z] - 2.0 * t.B[row + z] * e[z] + t.C[row + z] * e[z] * e[z];
      grad[s] = q;
    }
  };

  double phi = 0, max_q = 0;
  for (long iter = 0;; ++iter) {
    bayes();
    gradient();
    phi = 0;
    for (int s = 0; s < S; ++s) phi += res.pi[s] * grad[s];
    int best = 0, worst = -1;
    for (int s = 0; s < S; ++s) {
      if (grad[s] > grad[best]) best = s;
      if (res.pi[s] > 1e-15 && (worst < 0 || grad[s] < grad[worst])) worst = s;
    }
    max_q = grad[best];
    res.iterations = iter;
    if (max_q - phi <= tol || iter >= max_iters || worst < 0 || best == worst) break;

    // Move mass from the worst supported strategy to the best vertex.
    const double gamma_max = res.pi[worst];
    const std::size_t rb = static_cast<std::size_t>(best) * Z;
    const std::size_t rw = static_cast<std::size_t>(worst) * Z;
    // phi along the segment is smooth concave; golden-section search.
    auto phi_at = [&](double gamma) {
      double v = 0;
      for (int z = 0; z < Z; ++z) {
        const double c = Ca[z] + gamma * (t.C[rb + z] - t.C[rw + z]);
        const double b = Ba[z] + gamma * (t.B[rb + z] - t.B[rw + z]);
        const double a = Aa[z] + gamma * (t.A[rb + z] - t.A[rw + z]);
        v += a - (c > 0 ? b * b / c : 0.0);
      }
      return v;
    };
    double lo = 0, hi = gamma_max;
    for (int it2 = 0; it2 < 60; ++it2) {
      const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
      if (phi_at(m1) < phi_at(m2))
        lo = m1;
      else
        hi = m2;
    }
    double gamma = 0.5 * (lo + hi);
    if (phi_at(gamma_max) >= phi_at(gamma)) gamma = gamma_max;  // drop the atom entirely
    if (gamma <= 0) break;
    for (int z = 0; z < Z; ++z) {
      Ca[z] += gamma * (t.C[rb + z] - t.C[rw + z]);
      Ba[z] += gamma * (t.B[rb + z] - t.B[rw + z]);
      Aa[z] += gamma * (t.A[rb + z] - t.A[rw + z]);
    }
    res.pi[best] += gamma;
    res.pi[worst] -= gamma;
    if (res.pi[worst] < 1e-15) res.pi[worst] = 0;
  }

  res.estimator = e;
  res.maximin = phi;
  res.minimax_bound = max_q;
  return res;
}

// Polishes the estimator side: subgradient steps on max_s q_s(e) with
// Polyak lengths towards the maximin lower bound. Keeps the best table.
double polish_minimax(const GameTables& t, std::vector<double>& e, double lower_bound,
                      long max_iters) {
  const int S = t.n_strategies;
  const int Z = t.n_classes;
  std::vector<double> cur = e, grad(Z);
  auto worst_q = [&](const std::vector<double>& table, int& arg) {
    double best = -1;
    arg = 0;
    for (int s = 0; s < S; ++s) {
      double q = 0;
      const std::size_t row = static_cast<std::size_t>(s) * Z;
      for (int z = 0; z < Z; ++z)
        q += t.A[row + z] - 2.0 * t.B[row + z] * table[z] + t.C[row + z] * table[z] * table[z];
      if (q > best) {
        best = q;
        arg = s;
      }
    }
    return best;
  };
  int arg = 0;
  double best_value = worst_q(cur, arg);
  for (long iter = 0; iter < max_iters; ++iter) {
    const double h = worst_q(cur, arg);
    if (h < best_value) {
      best_value = h;
      e = cur;
    }
    if (h - lower_bound <= 1e-12) break;
    const std::size_t row = static_cast<std::size_t>(arg) * Z;
    double norm2 = 0;
    for (int z = 0; z < Z; ++z) {
      grad[z] = -2.0 * t.B[row + z] + 2.0 * t.C[row + z] * cur[z];
      norm2 += grad[z] * grad[z];
    }
    if (norm2 <= 1e-30) break;
    const double step = (h - lower_bound) / norm2;
    for (int z = 0; z < Z; ++z) cur[z] -= step * grad[z];
  }
  return best_value;
}

}  // namespace

GameSolution discrete_game_oracle(const GameSpec& game) {
  const GameTables t = build_tables(game);
  GameSolution out;
  out.n_strategies = t.n_strategies;
  out.n_classes = t.n_classes;
  out.n_outcomes = t.n_outcomes;

  SaddleResult saddle = solve_saddle(t, game.tol, game.max_iters);
  out.iterations = saddle.iterations;

  // Estimator side: best response polish never hurts.
  std::vector<double> table = saddle.estimator;
  const double polished =
      polish_minimax(t, table, saddle.maximin, std::min<long>(game.max_iters, 5000));
  out.minimax = std::min(saddle.minimax_bound, polished);
  out.estimator = table;

  if (game.open_loop) {
    // No mixing: the adversary commits to one open-loop table.
    int best = 0;
    for (int s = 0; s < t.n_strategies; ++s)
      if (t.phi_pure[s] > t.phi_pure[best]) best = s;
    out.maximin = t.phi_pure[best];
    out.mixture.assign(t.n_strategies, 0.0);
    out.mixture[best] = 1.0;
  } else {
    out.maximin = saddle.maximin;
    out.mixture = saddle.pi;
  }
  out.gap = out.minimax - out.maximin;
  out.certified_gap = saddle.minimax_bound - saddle.maximin;
  return out;
}

// ---------------------------------------------------------------------------
// Orthogonality condition

OrthogonalityReport orthogonality_check(const ModelSpec& spec, int t_index,
                                        const EstimatorSpec& xhat,
                                        const std::vector<ThetaPolicy>& theta_grid,
                                        const std::vector<EstimatorSpec>& zeta_family, int n_paths,
                                        std::uint64_t seed, int threads) {
  require_valid(spec);
  if (theta_grid.empty() || zeta_family.empty())
    fail(ErrorCode::InvalidSpec, "orthogonality check needs non-empty theta and zeta grids");
  const VariancePath variance = solve_riccati(spec);
  const EstimatorEngine xhat_engine(spec, variance, xhat, t_index);
  std::vector<EstimatorEngine> zeta_engines;
  zeta_engines.reserve(zeta_family.size());
  for (const auto& z : zeta_family) zeta_engines.emplace_back(spec, variance, z, t_index);

  const int n_theta = static_cast<int>(theta_grid.size());
  const int n_zeta = static_cast<int>(zeta_family.size());
  // cross(i,j): E[(x - xhat)'(x - zeta_j)] under theta_i; sq(i): E|x - xhat|^2.
  Eigen::MatrixXd cross_mean(n_theta, n_zeta), cross_se(n_theta, n_zeta);
  Eigen::VectorXd sq_mean(n_theta), sq_se(n_theta);

  std::vector<double> sq(n_paths);
  Eigen::MatrixXd cross(n_paths, n_zeta);
  for (int i = 0; i < n_theta; ++i) {
    for_each_path_theta(spec, theta_grid[i], n_paths, seed, threads, [&](const Path& path) {
      const Eigen::VectorXd x = path.x.col(t_index);
      const Eigen::VectorXd dh = x - xhat_engine.apply(path);
      sq[path.path_id] = dh.squaredNorm();
      for (int j = 0; j < n_zeta; ++j)
        cross(path.path_id, j) = dh.dot(x - zeta_engines[j].apply(path));
    });
    auto mean_se = [&](auto&& get) {
      double mean = 0;
      for (int p = 0; p < n_paths; ++p) mean += get(p);
      mean /= n_paths;
      double var = 0;
      for (int p = 0; p < n_paths; ++p) var += (get(p) - mean) * (get(p) - mean);
      var /= std::max(1, n_paths - 1);
      return std::pair<double, double>(mean, std::sqrt(var / n_paths));
    };
    std::tie(sq_mean(i), sq_se(i)) = mean_se([&](int p) { return sq[p]; });
    for (int j = 0; j < n_zeta; ++j)
      std::tie(cross_mean(i, j), cross_se(i, j)) = mean_se([&](int p) { return cross(p, j); });
  }

  OrthogonalityReport out;
  // rhs = sup_theta E|x - xhat|^2
  sq_mean.maxCoeff(&out.argmax_theta);
  out.rhs = sq_mean(out.argmax_theta);
  // lhs = inf_zeta sup_theta E[(x - xhat)'(x - zeta)]
  double best = 0;
  int best_theta = -1;
  for (int j = 0; j < n_zeta; ++j) {
    int arg;
    const double worst = cross_mean.col(j).maxCoeff(&arg);
    if (out.argmin_zeta < 0 || worst < best) {
      best = worst;
      out.argmin_zeta = j;
      best_theta = arg;
    }
  }
  out.lhs = best;
  out.residual = std::abs(out.lhs - out.rhs);
  const double se_lhs = cross_se(best_theta, out.argmin_zeta);
  const double se_rhs = sq_se(out.argmax_theta);
  out.stderr_combined = std::sqrt(se_lhs * se_lhs + se_rhs * se_rhs);
  return out;
}

}  // namespace rkbf
