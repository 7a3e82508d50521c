#pragma once

#include <Eigen/Dense>

#include "common.hpp"

namespace mgpc::test {

inline MatrixXd random_psd(Index m, Rng& rng, double diag_boost = 0.5) {
  MatrixXd r(m, m);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) r(i, j) = rng.normal();
  }
  MatrixXd a = r * r.transpose() / static_cast<double>(m);
  a.diagonal().array() += diag_boost;
  return a;
}

inline VectorXd random_vector(Index m, Rng& rng, double sd = 1.0) {
  VectorXd v(m);
  for (Index i = 0; i < m; ++i) v[i] = rng.normal(0.0, sd);
  return v;
}

inline MatrixXd random_matrix(Index r, Index c, Rng& rng, double sd = 1.0) {
  MatrixXd m(r, c);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, sd);
  }
  return m;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1e-12, std::abs(want));
}

inline double rel_err(const MatrixXd& got, const MatrixXd& want) {
  return (got - want).cwiseAbs().maxCoeff() / std::max(1e-12, want.cwiseAbs().maxCoeff());
}

}  // namespace mgpc::test
