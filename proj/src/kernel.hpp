#pragma once

#include "common.hpp"

namespace mgpc {

// ARD squared-exponential hyper-parameters, all optimized in log space:
//   c(x,x') = s^2 exp(-1/2 sum_d (x_d - x'_d)^2 / l_d^2)
// with s^2 = exp(2 log_amplitude), l_d = exp(log_lengthscale[d]) and noise
// variance exp(2 log_noise) added (with jitter) to every self Gram diagonal.
struct KernelHyper {
  VectorXd log_lengthscale;
  double log_amplitude = 0.0;
  double log_noise = 0.0;

  Index dim() const { return log_lengthscale.size(); }
  double amplitude2() const { return std::exp(2.0 * log_amplitude); }
  double noise2() const { return std::exp(2.0 * log_noise); }
  // Same relative jitter the Cholesky wrapper would add; kept explicit here
  // so Gram diagonals and their gradients agree.
  double jitter() const { return 1e-8 * amplitude2(); }
};

// Identifies one differentiable coordinate of a kernel + inducing-point block.
struct HyperIndex {
  enum Kind { Lengthscale, Amplitude, Noise, Inducing } kind;
  Index dim = 0;    // lengthscale dim, or inducing column
  Index point = 0;  // inducing row
};

MatrixXd gram(const MatrixXd& a, const MatrixXd& b, const KernelHyper& h, bool self_mode);

// Dense single-coordinate derivative of gram(a, b). For Inducing coordinates
// b is the inducing set; self_mode means a == b == inducing.
MatrixXd gram_grad(const MatrixXd& a, const MatrixXd& b, const KernelHyper& h, bool self_mode,
                   const HyperIndex& wrt);

// Accumulated linear weights of a scalar objective in the Gram quantities of
// one class: d objective = sum_ab dK(ab) W(ab) + sum_ij dKnm(ij) R(ij)
//            + sum_i dkappa(i) t(i),
// where K is the M x M inducing self Gram (self_mode on), Knm the N x M cross
// Gram, kappa the N self variances. Used to push gradients through to the
// hyper-parameters and inducing coordinates in one pass.
struct GramWeights {
  MatrixXd w_inducing;  // M x M, for dK
  MatrixXd w_cross;     // N x M, for dKnm
  VectorXd w_kappa;     // N, for dkappa

  static GramWeights zero(Index n, Index m) {
    return {MatrixXd::Zero(m, m), MatrixXd::Zero(n, m), VectorXd::Zero(n)};
  }
};

// Gradient block layout: [log_lengthscale (D), log_amplitude, log_noise,
// inducing points (M*D, row-major)].
VectorXd chain_rule_reduce(const MatrixXd& x, const MatrixXd& inducing, const KernelHyper& h,
                           const GramWeights& w);

Index hyper_block_size(Index d, Index m);

// Median-heuristic initialization on a subsample of at most 1000 rows.
KernelHyper init_hyper(const MatrixXd& x, Rng& rng);

}  // namespace mgpc
