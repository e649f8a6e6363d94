#include <doctest.h>

#include <cmath>
#include <random>

#include "rkbf/sde.hpp"
#include "test_util.hpp"

using namespace rkbf;
using rkbf::testing::mean_stderr;

namespace {

bool bitwise_equal(const PathBundle& a, const PathBundle& b) {
  if (a.paths.size() != b.paths.size()) return false;
  for (std::size_t i = 0; i < a.paths.size(); ++i) {
    const Path& p = a.paths[i];
    const Path& q = b.paths[i];
    if ((p.x.array() != q.x.array()).any()) return false;
    if ((p.m.array() != q.m.array()).any()) return false;
    if ((p.w_inc.array() != q.w_inc.array()).any()) return false;
    if ((p.v_inc.array() != q.v_inc.array()).any()) return false;
    if ((p.theta.array() != q.theta.array()).any()) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("sde") {

TEST_CASE("zero-noise drift integrates the ODE and all paths coincide") {
  const ModelSpec spec = make_scalar_spec(1.0, 100, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.5);
  const PathBundle bundle = simulate_p(spec, 4, 99);
  for (int k = 0; k <= 100; ++k) {
    CHECK(std::abs(bundle.paths[0].x(0, k) - spec.grid.node(k)) < 1e-12);
    for (int p = 1; p < 4; ++p) CHECK(bundle.paths[p].x(0, k) == bundle.paths[0].x(0, k));
  }
}

TEST_CASE("driftless signal keeps its mean") {
  const ModelSpec spec = make_scalar_spec(1.0, 100, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.5);
  std::vector<double> xT(10000);
  for_each_path_p(spec, 10000, 11, 2, [&](const Path& p) { xT[p.path_id] = p.x(0, 100); });
  const auto [mean, se] = mean_stderr(xT);
  CHECK(std::abs(mean - 1.0) < 4 * se);
}

TEST_CASE("terminal variance matches Q*T within 5% at 1e5 paths") {
  const ModelSpec spec = testing::scalar_benchmark(100);
  std::vector<double> xT(100000);
  for_each_path_p(spec, 100000, 12, 2, [&](const Path& p) { xT[p.path_id] = p.x(0, 100); });
  double mean = 0;
  for (double v : xT) mean += v;
  mean /= xT.size();
  double var = 0;
  for (double v : xT) var += (v - mean) * (v - mean);
  var /= (xT.size() - 1);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("theta == 0 reproduces the reference-measure simulation bitwise") {
  const ModelSpec spec = testing::scalar_benchmark(64);
  const PathBundle base = simulate_p(spec, 16, 2024);
  const PathBundle shifted = simulate_theta(spec, ThetaPolicy::zero(), 16, 2024);
  CHECK(bitwise_equal(base, shifted));
}

TEST_CASE("constant drift shifts the observation mean by mu*T") {
  const ModelSpec spec = make_scalar_spec(1.0, 100, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.5);
  const ThetaPolicy policy = ThetaPolicy::constant(0.5);
  std::vector<double> mT(10000);
  for_each_path_theta(spec, policy, 10000, 5, 2, [&](const Path& p) { mT[p.path_id] = p.m(0, 100); });
  const auto [mean, se] = mean_stderr(mT);
  CHECK(std::abs(mean - 0.5) < 4 * se);
}

TEST_CASE("feedback rule sees only past observations and stays on the bound") {
  const ModelSpec spec = testing::scalar_benchmark(50);
  const ThetaPolicy policy = ThetaPolicy::feedback(
      [](int, double, const Eigen::Ref<const Eigen::MatrixXd>& m_history) {
        return Eigen::VectorXd::Constant(1, m_history(0, m_history.cols() - 1) >= 0 ? 0.5 : -0.5);
      });
  const PathBundle bundle = simulate_theta(spec, policy, 8, 77);
  for (const Path& p : bundle.paths)
    for (int k = 0; k < 50; ++k) CHECK(std::abs(p.theta(0, k)) == 0.5);
}

TEST_CASE("bound violations reject by default and clamp on request") {
  const ModelSpec spec = testing::scalar_benchmark(10);
  const Eigen::MatrixXd wild = Eigen::MatrixXd::Constant(1, 10, 1.0);  // mu = 0.5
  CHECK_THROWS_AS(simulate_theta(spec, ThetaPolicy::table(wild), 1, 1), Error);
  const PathBundle clamped = simulate_theta(spec, ThetaPolicy::table(wild, true), 1, 1);
  for (int k = 0; k < 10; ++k) CHECK(clamped.paths[0].theta(0, k) == 0.5);
}

TEST_CASE("zero drift has unit density on every node") {
  const ModelSpec spec = testing::scalar_benchmark(32);
  const PathBundle bundle = simulate_p(spec, 3, 9);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 32);
  for (const Path& p : bundle.paths) {
    const Eigen::VectorXd f = girsanov_density(spec, zero, p.v_inc);
    for (int k = 0; k <= 32; ++k) CHECK(f(k) == 1.0);
  }
}

TEST_CASE("exponential density is a mean-one martingale with known second moment") {
  const ModelSpec spec = testing::scalar_benchmark(250);
  const StepTables tab = tabulate_steps(spec);
  const Eigen::MatrixXd theta03 = Eigen::MatrixXd::Constant(1, 250, 0.3);
  const Eigen::MatrixXd theta05 = Eigen::MatrixXd::Constant(1, 250, 0.5);
  const int n = 100000;
  std::vector<double> f03(n), f05sq(n);
  for_each_path_p(spec, n, 31, 2, [&](const Path& p) {
    f03[p.path_id] = girsanov_density(tab, theta03, p.v_inc)(250);
    const double f = girsanov_density(tab, theta05, p.v_inc)(250);
    f05sq[p.path_id] = f * f;
  });
  const auto [mean, se] = mean_stderr(f03);
  CHECK(std::abs(mean - 1.0) < 3 * se);
  const auto [mean_sq, se_sq] = mean_stderr(f05sq);
  CHECK(mean_sq == doctest::Approx(std::exp(0.25)).epsilon(0.05));
}

TEST_CASE("reweighted P-paths match the shifted measure on observation functionals") {
  const ModelSpec spec = testing::scalar_benchmark(200);
  const StepTables tab = tabulate_steps(spec);
  const Eigen::MatrixXd theta = Eigen::MatrixXd::Constant(1, 200, 0.3);
  const int n = 20000;
  std::vector<double> direct1(n), direct2(n), weighted1(n), weighted2(n);
  for_each_path_theta(spec, ThetaPolicy::constant(0.3), n, 41, 2, [&](const Path& p) {
    direct1[p.path_id] = p.m(0, 200);
    direct2[p.path_id] = p.m(0, 200) * p.m(0, 200);
  });
  for_each_path_p(spec, n, 42, 2, [&](const Path& p) {
    const double f = girsanov_density(tab, theta, p.v_inc)(200);
    weighted1[p.path_id] = f * p.m(0, 200);
    weighted2[p.path_id] = f * p.m(0, 200) * p.m(0, 200);
  });
  const auto [d1, sd1] = mean_stderr(direct1);
  const auto [w1, sw1] = mean_stderr(weighted1);
  CHECK(std::abs(d1 - w1) < 3 * std::sqrt(sd1 * sd1 + sw1 * sw1));
  const auto [d2, sd2] = mean_stderr(direct2);
  const auto [w2, sw2] = mean_stderr(weighted2);
  CHECK(std::abs(d2 - w2) < 3 * std::sqrt(sd2 * sd2 + sw2 * sw2));
}

TEST_CASE("convex mixing: degenerate weights and symmetry are exact") {
  const int K = 6;
  const Eigen::MatrixXd t1 = Eigen::MatrixXd::Constant(1, K, 0.5);
  const Eigen::MatrixXd t2 = Eigen::MatrixXd::Constant(1, K, -0.5);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(K + 1);

  CHECK((convex_mix_theta(t1, t2, 1.0, ones, ones).array() == t1.array()).all());
  CHECK((convex_mix_theta(t1, t2, 0.0, ones, ones).array() == t2.array()).all());
  CHECK((convex_mix_theta(t1, t1, 0.37, ones, 2.0 * ones).array() == t1.array()).all());
  // Equal densities, symmetric strategies, lambda = 1/2: exact zero.
  const Eigen::MatrixXd mixed = convex_mix_theta(t1, t2, 0.5, ones, ones);
  for (int k = 0; k < K; ++k) CHECK(mixed(0, k) == 0.0);

  Eigen::VectorXd bad = ones;
  bad(3) = 0.0;
  CHECK_THROWS_AS(convex_mix_theta(t1, t2, 0.5, bad, ones), Error);
}

TEST_CASE("linear multiplicative density rejects nonpositive factors") {
  const ModelSpec spec = testing::scalar_benchmark(4, 1.0);
  const Eigen::MatrixXd theta = Eigen::MatrixXd::Constant(1, 4, 1.0);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(1, 4);
  v(0, 2) = -2.0;  // factor 1 + 1*(-2) = -1
  try {
    incremental_density(spec, theta, v);
    FAIL("expected NonPositiveDensity");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPositiveDensity);
  }
}

TEST_CASE("mixture of running densities is closed under the mixed strategy") {
  const ModelSpec spec = testing::scalar_benchmark(100);
  const StepTables tab = tabulate_steps(spec);
  const Eigen::MatrixXd t1 = Eigen::MatrixXd::Constant(1, 100, 0.5);
  Eigen::MatrixXd t2 = Eigen::MatrixXd::Constant(1, 100, -0.5);
  for (int k = 0; k < 100; k += 3) t2(0, k) = 0.25;  // break the symmetry
  const double lambda = 0.3;
  const PathBundle bundle = simulate_p(spec, 50, 17);
  for (const Path& p : bundle.paths) {
    const Eigen::VectorXd f1 = incremental_density(tab, t1, p.v_inc);
    const Eigen::VectorXd f2 = incremental_density(tab, t2, p.v_inc);
    const Eigen::MatrixXd mix = convex_mix_theta(t1, t2, lambda, f1, f2);
    for (int k = 0; k < 100; ++k) CHECK(std::abs(mix(0, k)) <= 0.5 + 1e-12);
    const Eigen::VectorXd g = incremental_density(tab, mix, p.v_inc);
    const Eigen::VectorXd target = lambda * f1 + (1.0 - lambda) * f2;
    for (int k = 0; k <= 100; ++k)
      CHECK(std::abs(g(k) - target(k)) <= 1e-10 * std::abs(target(k)));
  }
}

TEST_CASE("mixed strategies stay inside the componentwise bound") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  std::uniform_real_distribution<double> pos(0.1, 5.0);
  const int K = 20;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd t1(1, K), t2(1, K);
    Eigen::VectorXd f1(K + 1), f2(K + 1);
    for (int k = 0; k < K; ++k) {
      t1(0, k) = unif(gen);
      t2(0, k) = unif(gen);
    }
    for (int k = 0; k <= K; ++k) {
      f1(k) = pos(gen);
      f2(k) = pos(gen);
    }
    const double lambda = 0.5 * (unif(gen) + 0.5) + 0.25;
    const Eigen::MatrixXd mix = convex_mix_theta(t1, t2, lambda, f1, f2);
    for (int k = 0; k < K; ++k) CHECK(std::abs(mix(0, k)) <= 0.5 * (1.0 + 1e-12));
  }
}

TEST_CASE("identical seeds give bitwise-identical bundles for any thread count") {
  Eigen::MatrixXd F(2, 2), G(1, 2), Q(2, 2), R(1, 1);
  F << -0.1, 0.2, 0.0, -0.3;
  G << 1.0, 0.5;
  Q << 1.0, 0.2, 0.2, 0.8;
  R << 1.0;
  const ModelSpec spec =
      make_constant_spec(2, 1, 1.0, 80, F, Eigen::VectorXd::Zero(2), G, Eigen::VectorXd::Zero(1),
                         Q, R, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Constant(1, 0.5));
  const PathBundle a = simulate_p(spec, 33, 123, 1);
  const PathBundle b = simulate_p(spec, 33, 123, 4);
  CHECK(bitwise_equal(a, b));
  const PathBundle c = simulate_p(spec, 33, 124, 1);
  CHECK_FALSE(bitwise_equal(a, c));
}

}  // TEST_SUITE
