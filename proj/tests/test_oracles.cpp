#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace mgpc;
using namespace mgpc::test;
namespace orc = mgpc::oracles;

TEST_CASE("mc_tilted_moments") {
  SUBCASE("symmetric case has Z near one half") {
    const auto mc = orc::mc_tilted_moments(0.4, 1.0, 0.4, 1.0, 0.5, 0.5, 200000, 1);
    CHECK(std::abs(mc.z - 0.5) < 4.0 * mc.z_se);
  }
  SUBCASE("Z stays within four standard errors of the probit form") {
    Rng rng(2);
    for (int rep = 0; rep < 5; ++rep) {
      const double ay = rng.normal(), ak = rng.normal();
      const double qy = rng.uniform(0.2, 1.5), qk = rng.uniform(0.2, 1.5);
      const double sy = rng.uniform(0.1, 1.0), sk = rng.uniform(0.1, 1.0);
      const auto mc = orc::mc_tilted_moments(ay, qy, ak, qk, sy, sk, 200000, 10 + rep);
      const double z = norm_cdf((ay - ak) / std::sqrt(qy + qk + sy + sk));
      CHECK(std::abs(mc.z - z) < 4.0 * mc.z_se);
    }
  }
  SUBCASE("the tilt shrinks the variance along both directions") {
    const auto mc = orc::mc_tilted_moments(0.2, 1.3, -0.1, 0.8, 0.3, 0.4, 200000, 3);
    CHECK(mc.var_y < 1.3);
    CHECK(mc.var_k < 0.8);
  }
  SUBCASE("sample floor") {
    CHECK_THROWS_AS(orc::mc_tilted_moments(0, 1, 0, 1, 1, 1, 100, 1), UsageError);
  }
}

TEST_CASE("exact_factor_quadrature") {
  SUBCASE("binary case equals the probit product exactly") {
    Rng rng(4);
    for (int rep = 0; rep < 50; ++rep) {
      VectorXd m(2), v(2);
      m << rng.normal(0, 2), rng.normal(0, 2);
      v << rng.uniform(0.05, 3.0), rng.uniform(0.05, 3.0);
      const int y = rep % 2;
      CHECK(std::abs(orc::exact_factor_quadrature(m, v, y) -
                     orc::product_probit_approx(m, v, y)) < 1e-10);
    }
  }
  SUBCASE("identical classes give 1/C") {
    for (int cnum : {3, 4, 5}) {
      const VectorXd m = VectorXd::Constant(cnum, 0.3);
      const VectorXd v = VectorXd::Constant(cnum, 0.9);
      CHECK(std::abs(orc::exact_factor_quadrature(m, v, 0) - 1.0 / cnum) < 1e-8);
    }
  }
  SUBCASE("dominates the probit product for three or more classes") {
    Rng rng(5);
    for (int rep = 0; rep < 100; ++rep) {
      const int cnum = 3 + static_cast<int>(rng.uniform_int(0, 2));
      VectorXd m(cnum), v(cnum);
      for (int k = 0; k < cnum; ++k) {
        m[k] = rng.normal(0, 1.5);
        v[k] = rng.uniform(0.1, 2.0);
      }
      const int y = static_cast<int>(rng.uniform_int(0, cnum - 1));
      CHECK(orc::exact_factor_quadrature(m, v, y) >=
            orc::product_probit_approx(m, v, y) - 1e-9);
    }
  }
}

TEST_CASE("finite_diff") {
  SUBCASE("linear functions are differentiated exactly") {
    VectorXd w(3);
    w << 2.0, -1.0, 0.5;
    auto fn = [&](const VectorXd& x) { return w.dot(x); };
    const VectorXd g = orc::finite_diff(fn, VectorXd::Zero(3), VectorXd::Constant(3, 1e-4));
    CHECK((g - w).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("quadratics too (central differences are exact at second order)") {
    auto fn = [](const VectorXd& x) { return x[0] * x[0] - 3.0 * x[1] * x[1]; };
    VectorXd at(2);
    at << 1.5, -0.5;
    const VectorXd g = orc::finite_diff(fn, at, VectorXd::Constant(2, 1e-4));
    CHECK(std::abs(g[0] - 3.0) < 1e-8);
    CHECK(std::abs(g[1] - 3.0) < 1e-8);
  }
}

TEST_CASE("check suite") {
  const auto reports = orc::run_checks(/*quick=*/true);
  REQUIRE(reports.size() == 4);
  for (const auto& r : reports) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("check suite flags a one-percent gradient perturbation") {
  const auto reports = orc::run_checks(/*quick=*/true, /*gradient_perturbation=*/0.01);
  bool gradient_failed = false;
  for (const auto& r : reports) {
    if (r.name == "gradient_vs_finite_differences") gradient_failed = !r.pass;
  }
  CHECK(gradient_failed);
}
