#pragma once

#include <vector>

#include "ep.hpp"

namespace mgpc {

// Flat parameter layout over the differentiable model parameters. Untied:
// one [lengthscales, amplitude, noise, inducing] block per class. Tied: a
// single shared kernel-hyper block followed by per-class inducing blocks.
struct ParamLayout {
  int num_classes = 0;
  Index dim = 0;
  Index num_inducing = 0;
  bool tied = true;

  Index size() const;
  // Offset of class `cls`'s kernel-hyper block (shared block when tied).
  Index kernel_offset(int cls) const;
  Index inducing_offset(int cls) const;

  VectorXd pack(const std::vector<KernelHyper>& hypers,
                const std::vector<MatrixXd>& inducing) const;
  void apply_delta(const VectorXd& delta, std::vector<KernelHyper>& hypers,
                   std::vector<MatrixXd>& inducing) const;
};

// EP marginal-likelihood estimate: g(theta) - g(theta_prior) + sum log s~.
// Unit (all-zero) sites contribute no log s~ term; nonzero sites' terms are
// recomputed from the current cavities. Throws NumericError on PD failures.
double log_zq(const EpEngine& eng, const std::vector<ClassPrior>& priors,
              const ProjectionTable& proj);

// Same quantity with the site sum restricted to `batch` and scaled by
// N/|batch|; used as the cheap trace estimate in minibatch training.
double log_zq_batch(const EpEngine& eng, const std::vector<ClassPrior>& priors,
                    const ProjectionTable& proj, const std::vector<Index>& batch);

// Gradient of log_zq w.r.t. all kernel hypers and inducing coordinates,
// exact at an EP fixed point, usable as the approximate inner gradient
// before convergence. The data term runs over `batch` scaled by rho =
// N/|batch| (full gradient: batch = everything, rho = 1).
VectorXd grad_log_zq(const MatrixXd& x, const EpEngine& eng,
                     const std::vector<ClassPrior>& priors, const ProjectionTable& proj,
                     const std::vector<KernelHyper>& hypers,
                     const std::vector<MatrixXd>& inducing, const ParamLayout& layout);

VectorXd stochastic_grad(const MatrixXd& x, const EpEngine& eng,
                         const std::vector<ClassPrior>& priors, const ProjectionTable& proj,
                         const std::vector<KernelHyper>& hypers,
                         const std::vector<MatrixXd>& inducing, const ParamLayout& layout,
                         const std::vector<Index>& batch);

// Folds one scalar pair's sensitivities into the Gram weights. The scalar
// objective depends on a = upsilon'mu and b = s + upsilon'Sigma upsilon for
// some block (mu, Sigma); g_m = K^-1 mu, g_v = K^-1 Sigma upsilon.
void accumulate_gram_weights(GramWeights& w, Index row, const Projection& p, const VectorXd& g_m,
                             const VectorXd& g_v, double w_a, double w_b);

}  // namespace mgpc
