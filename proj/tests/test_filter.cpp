#include <doctest.h>

#include <cmath>

#include "rkbf/filter.hpp"
#include "test_util.hpp"

using namespace rkbf;
using rkbf::testing::mean_stderr;

TEST_SUITE("filter") {

TEST_CASE("perfect prior: zero gain, estimate pinned, innovations are the raw noise") {
  // Q = 0, x0 known, drift zero: the filter has nothing to learn.
  const ModelSpec spec = make_scalar_spec(1.0, 120, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.5);
  const PathBundle bundle = simulate_p(spec, 3, 15);
  for (const Path& p : bundle.paths) {
    const FilterOutput out = classical_filter(spec, p.m);
    for (int k = 0; k <= 120; ++k) CHECK(out.estimate(0, k) == 0.0);
    for (int k = 0; k < 120; ++k) CHECK(std::abs(out.innovation(0, k) - p.v_inc(0, k)) < 1e-13);
  }
}

TEST_CASE("uninformative observations: estimate solves the deterministic ODE") {
  const ModelSpec spec = make_scalar_spec(1.0, 100, 1.0, 0.2, 0.0, 0.0, 1.0, 1.0, 2.0, 0.5);
  const PathBundle bundle = simulate_p(spec, 2, 21);
  const FilterOutput a = classical_filter(spec, bundle.paths[0].m);
  const FilterOutput b = classical_filter(spec, bundle.paths[1].m);
  // Same trajectory whatever the observations...
  CHECK((a.estimate.array() == b.estimate.array()).all());
  // ...and it is the Euler solution of dx = (F x + f) dt.
  double x = 2.0;
  const double dt = spec.grid.dt();
  for (int k = 0; k < 100; ++k) {
    CHECK(a.estimate(0, k) == doctest::Approx(x).epsilon(1e-14));
    x = x + (1.0 * x + 0.2) * dt;
  }
}

TEST_CASE("Monte Carlo error variance of the classical filter matches tanh(1)") {
  const ModelSpec spec = testing::scalar_benchmark(500);
  const VariancePath P = solve_riccati(spec);
  const FilterEngine engine(spec, P);
  const int n = 20000;
  std::vector<double> sq(n);
  for_each_path_p(spec, n, 8, 2, [&](const Path& p) {
    const FilterOutput out = engine.classical(p.m);
    const double e = p.x(0, 500) - out.estimate(0, 500);
    sq[p.path_id] = e * e;
  });
  const auto [mean, se] = mean_stderr(sq);
  CHECK(std::abs(mean - std::tanh(1.0)) < 3 * se);
}

TEST_CASE("zero drift table reproduces the classical filter bitwise") {
  const ModelSpec spec = testing::scalar_benchmark(200);
  const PathBundle bundle = simulate_p(spec, 4, 33);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 200);
  for (const Path& p : bundle.paths) {
    const FilterOutput classical = classical_filter(spec, p.m);
    const FilterOutput drifted = theta_filter(spec, p.m, zero);
    CHECK((classical.estimate.array() == drifted.estimate.array()).all());
    CHECK((classical.innovation.array() == drifted.innovation.array()).all());
  }
}

TEST_CASE("zero gain makes the drift correction irrelevant") {
  const ModelSpec spec = make_scalar_spec(1.0, 150, -0.2, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.5);
  const PathBundle bundle = simulate_theta(spec, ThetaPolicy::constant(0.5), 2, 44);
  const Eigen::MatrixXd theta = Eigen::MatrixXd::Constant(1, 150, 0.5);
  for (const Path& p : bundle.paths) {
    const FilterOutput classical = classical_filter(spec, p.m);
    const FilterOutput drifted = theta_filter(spec, p.m, theta);
    CHECK((classical.estimate.array() == drifted.estimate.array()).all());
  }
}

TEST_CASE("decomposition: zero drift is the identity, correction is linear") {
  const ModelSpec spec = testing::scalar_benchmark(250);
  const VariancePath P = solve_riccati(spec);
  const PathBundle bundle = simulate_p(spec, 1, 55);
  const Eigen::MatrixXd xbar = classical_filter(spec, bundle.paths[0].m).estimate;

  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 250);
  CHECK((decompose(spec, P, xbar, zero).array() == xbar.array()).all());

  Eigen::MatrixXd t1 = Eigen::MatrixXd::Constant(1, 250, 0.2);
  Eigen::MatrixXd t2 = Eigen::MatrixXd::Constant(1, 250, -0.15);
  for (int k = 100; k < 250; ++k) t2(0, k) = 0.3;
  const Eigen::MatrixXd c1 = decompose_correction(spec, P, t1);
  const Eigen::MatrixXd c2 = decompose_correction(spec, P, t2);
  const Eigen::MatrixXd c12 = decompose_correction(spec, P, t1 + t2);
  CHECK((c12 - c1 - c2).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("drift-corrected filter and quadrature decomposition agree to O(dt)") {
  const ModelSpec spec = testing::scalar_benchmark(1000);
  const VariancePath P = solve_riccati(spec);
  const FilterEngine engine(spec, P);
  const PathBundle bundle = simulate_theta(spec, ThetaPolicy::constant(0.5), 1, 66);
  const Path& p = bundle.paths[0];

  Eigen::MatrixXd theta = Eigen::MatrixXd::Constant(1, 1000, 0.5);
  SUBCASE("constant drift") {}
  SUBCASE("sign-flipping drift") {
    for (int k = 0; k < 1000; ++k) theta(0, k) = (k / 100) % 2 ? -0.5 : 0.5;
  }

  const Eigen::MatrixXd xbar = engine.classical(p.m).estimate;
  const Eigen::MatrixXd xhat_sde = engine.with_drift(p.m, theta).estimate;
  const Eigen::MatrixXd xhat_quad = decompose(spec, P, xbar, theta);
  const double gap = (xhat_sde - xhat_quad).cwiseAbs().maxCoeff();
  CHECK(gap < 10.0 * spec.grid.dt());
}

TEST_CASE("innovation_path reproduces the filter's own innovations") {
  const ModelSpec spec = testing::scalar_benchmark(150);
  const PathBundle bundle = simulate_p(spec, 1, 77);
  const Path& p = bundle.paths[0];
  const FilterOutput out = classical_filter(spec, p.m);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 150);
  const Eigen::MatrixXd inc = innovation_path(spec, p.m, out.estimate, zero);
  CHECK((inc.array() == out.innovation.array()).all());
}

TEST_CASE("matched drift-corrected filter attains the Riccati variance under P^theta") {
  const ModelSpec spec = testing::scalar_benchmark(500);
  const VariancePath P = solve_riccati(spec);
  const FilterEngine engine(spec, P);
  const Eigen::MatrixXd theta = Eigen::MatrixXd::Constant(1, 500, 0.5);
  const int n = 20000;
  std::vector<double> sq(n);
  for_each_path_theta(spec, ThetaPolicy::constant(0.5), n, 9, 2, [&](const Path& p) {
    const FilterOutput out = engine.with_drift(p.m, theta);
    const double e = p.x(0, 500) - out.estimate(0, 500);
    sq[p.path_id] = e * e;
  });
  const auto [mean, se] = mean_stderr(sq);
  CHECK(std::abs(mean - std::tanh(1.0)) < 3 * se);
}

TEST_CASE("grid mismatches are rejected") {
  const ModelSpec spec = testing::scalar_benchmark(100);
  const Eigen::MatrixXd short_obs = Eigen::MatrixXd::Zero(1, 50);
  CHECK_THROWS_AS(classical_filter(spec, short_obs), Error);
  const PathBundle bundle = simulate_p(spec, 1, 1);
  const Eigen::MatrixXd bad_theta = Eigen::MatrixXd::Zero(1, 99);
  CHECK_THROWS_AS(theta_filter(spec, bundle.paths[0].m, bad_theta), Error);
}

}  // TEST_SUITE
