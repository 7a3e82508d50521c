#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gaussian.hpp"
#include "test_util.hpp"

using namespace mgpc;
using namespace mgpc::test;

TEST_CASE("log_normalizer standard normals") {
  NaturalGaussian g1{MatrixXd::Identity(1, 1), VectorXd::Zero(1)};
  CHECK(log_normalizer(g1) == doctest::Approx(0.9189385332).epsilon(1e-8));
  NaturalGaussian g2{MatrixXd::Identity(2, 2), VectorXd::Zero(2)};
  CHECK(log_normalizer(g2) == doctest::Approx(1.8378770664).epsilon(1e-8));
}

TEST_CASE("log_normalizer matches dense det/inverse formula") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const Index d = 3;
    NaturalGaussian g{random_psd(d, rng), random_vector(d, rng)};
    // independent route: explicit inverse and determinant
    const MatrixXd sigma = g.precision.inverse();
    const VectorXd mu = sigma * g.shift;
    const double want = 0.5 * d * std::log(2 * M_PI) + 0.5 * std::log(sigma.determinant()) +
                        0.5 * mu.dot(g.precision * mu);
    CHECK(rel_err(log_normalizer(g), want) < 1e-7);
  }
}

TEST_CASE("log_normalizer rejects non-PD precision with context") {
  MatrixXd bad = -MatrixXd::Identity(2, 2);
  CHECK_THROWS_WITH_AS(log_normalizer({bad, VectorXd::Zero(2)}, "site 3"),
                       doctest::Contains("site 3"), NumericError);
}

TEST_CASE("multiply and divide act on natural parameters") {
  Rng rng(3);
  const Index d = 4;
  NaturalGaussian a{random_psd(d, rng), random_vector(d, rng)};
  NaturalGaussian b{random_psd(d, rng), random_vector(d, rng)};

  SUBCASE("unit factor is the identity") {
    const auto prod = multiply(a, NaturalGaussian::unit(d));
    CHECK((prod.precision - a.precision).norm() == 0.0);
    CHECK((prod.shift - a.shift).norm() == 0.0);
  }
  SUBCASE("divide undoes multiply") {
    const auto back = divide(multiply(a, b), b);
    CHECK((back.precision - a.precision).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((back.shift - a.shift).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("1-D product of standard normals") {
    NaturalGaussian n01{MatrixXd::Identity(1, 1), VectorXd::Zero(1)};
    NaturalGaussian n11{MatrixXd::Identity(1, 1), VectorXd::Ones(1)};
    const auto prod = multiply(n01, n11);
    CHECK(prod.precision(0, 0) == doctest::Approx(2.0));
    CHECK(prod.shift[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("moment/natural round trip") {
  Rng rng(11);
  for (int rep = 0; rep < 30; ++rep) {
    const Index d = 1 + rep % 6;
    MomentGaussian g{random_vector(d, rng), random_psd(d, rng)};
    const auto back = to_moment(to_natural(g));
    CHECK(rel_err(back.cov, g.cov) < 1e-8);
    CHECK((back.mean - g.mean).cwiseAbs().maxCoeff() < 1e-8 * (1 + g.mean.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("rank_one_downdate") {
  SUBCASE("c = 0 leaves V unchanged") {
    Rng rng(5);
    const MatrixXd v = random_psd(4, rng);
    const auto out = rank_one_downdate(v, random_vector(4, rng), 0.0);
    REQUIRE(out.has_value());
    CHECK((*out - v).norm() == 0.0);
  }
  SUBCASE("1-D hand value") {
    MatrixXd v = MatrixXd::Ones(1, 1);
    VectorXd u = VectorXd::Ones(1);
    const auto out = rank_one_downdate(v, u, 0.5);
    REQUIRE(out.has_value());
    CHECK((*out)(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("matches dense inversion, 200 random PD instances") {
    Rng rng(17);
    int checked = 0;
    while (checked < 200) {
      const Index m = 1 + static_cast<Index>(rng.uniform_int(0, 7));
      const MatrixXd v = random_psd(m, rng);
      const VectorXd u = random_vector(m, rng);
      const double p = u.dot(v * u);
      const double c = rng.uniform(-1.0, 0.9 / p);  // keeps 1 - c p > 0
      const auto got = rank_one_downdate(v, u, c);
      REQUIRE(got.has_value());
      const MatrixXd want = (v.inverse() - c * u * u.transpose()).inverse();
      CHECK(rel_err(*got, want) < 1e-8);
      ++checked;
    }
  }
  SUBCASE("non-PD downdate is rejected") {
    Rng rng(23);
    const MatrixXd v = random_psd(3, rng);
    VectorXd u = random_vector(3, rng);
    const double p = u.dot(v * u);
    CHECK(!rank_one_downdate(v, u, 1.5 / p).has_value());
  }
}
