#pragma once

#include <optional>

#include "common.hpp"

namespace mgpc {

// Multivariate Gaussian in moment form. q and cavity blocks live here.
struct MomentGaussian {
  VectorXd mean;
  MatrixXd cov;

  Index dim() const { return mean.size(); }
};

// Natural parameterization: precision = cov^-1, shift = cov^-1 * mean.
// Additive under factor products, which is all EP ever does to them.
struct NaturalGaussian {
  MatrixXd precision;
  VectorXd shift;

  Index dim() const { return shift.size(); }

  static NaturalGaussian unit(Index dim) {
    return {MatrixXd::Zero(dim, dim), VectorXd::Zero(dim)};
  }
};

// Cholesky with the standard stabilization: 1e-8 * mean-diagonal jitter is
// added before factoring. Throws NumericError naming `context` on failure.
Eigen::LLT<MatrixXd> chol_psd(const MatrixXd& a, const std::string& context);

MatrixXd symmetrize(const MatrixXd& a);

// g(theta) = D/2 log 2pi + 1/2 log|Sigma| + 1/2 mu' Sigma^-1 mu.
double log_normalizer(const NaturalGaussian& g, const std::string& context = "log_normalizer");

NaturalGaussian multiply(const NaturalGaussian& a, const NaturalGaussian& b);
NaturalGaussian divide(const NaturalGaussian& a, const NaturalGaussian& b);

NaturalGaussian to_natural(const MomentGaussian& g, const std::string& context = "to_natural");
MomentGaussian to_moment(const NaturalGaussian& g, const std::string& context = "to_moment");

// (V^-1 - c u u')^-1 via Woodbury. Returns nullopt when the downdate is not
// positive definite (1 - c u'Vu <= 0), which EP treats as an invalid cavity.
std::optional<MatrixXd> rank_one_downdate(const MatrixXd& v, const VectorXd& u, double c);

}  // namespace mgpc
