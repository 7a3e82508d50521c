#pragma once

#include <vector>

#include "trainer.hpp"

namespace mgpc {

// Variational posterior over each class's inducing values: mean m_k and
// covariance S_k = L_k L_k', optimized through the Cholesky factor
// (unconstrained strictly-lower entries, log diagonal).
struct VariationalState {
  std::vector<VectorXd> mean;
  std::vector<MatrixXd> chol_lower;

  MatrixXd cov(int cls) const {
    return chol_lower[cls] * chol_lower[cls].transpose();
  }
};

// Marginal of q(f_i) for one class: mhat = upsilon'm, shat = s + upsilon'S upsilon.
std::pair<double, double> marginal_q(const Projection& p, const VectorXd& mean,
                                     const MatrixXd& cov);

// E_{u ~ N(mhat_y, shat_y)}[ log((1-eps) prod_{k!=y} Phi((u-mhat_k)/sqrt(shat_k)) + eps/C) ]
// by Gauss-Hermite quadrature. Bounded in [log(eps/C), log(1-eps+eps/C)].
double expected_log_lik(const VectorXd& mhat, const VectorXd& shat, int y, double epsilon,
                        int quad_order);

double kl_to_prior(const VariationalState& state, const std::vector<ClassPrior>& priors, int cls);

double elbo(const Dataset& data, const VariationalState& state,
            const std::vector<ClassPrior>& priors, const ProjectionTable& proj, double epsilon,
            int quad_order);

// Flat gradient over [variational params][kernel hypers + inducing]. The
// variational block per class is [mean (M), log-diag + strict lower of L].
struct ViLayout {
  int num_classes = 0;
  Index num_inducing = 0;
  ParamLayout kernel;

  Index var_block() const { return num_inducing + num_inducing * (num_inducing + 1) / 2; }
  Index var_offset(int cls) const { return cls * var_block(); }
  Index kernel_start() const { return num_classes * var_block(); }
  Index size() const { return kernel_start() + kernel.size(); }
};

VectorXd elbo_grad(const Dataset& data, const VariationalState& state,
                   const std::vector<KernelHyper>& hypers, const std::vector<MatrixXd>& inducing,
                   const std::vector<ClassPrior>& priors, const ProjectionTable& proj,
                   const ViLayout& layout, double epsilon, int quad_order,
                   const std::vector<Index>& batch, double rho);

void apply_vi_delta(const VectorXd& delta, const ViLayout& layout, VariationalState& state,
                    std::vector<KernelHyper>& hypers, std::vector<MatrixXd>& inducing);

FitResult fit_vi(const Dataset& train, const TrainConfig& cfg, const Dataset* test,
                 const TraceSink& sink);

}  // namespace mgpc
