#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ep.hpp"

namespace mgpc::oracles {

// Monte-Carlo tilted moments along the two projection directions of one
// site: u ~ N(a_y, q_y), w ~ N(a_k, q_k), tilt Phi((u-w)/sqrt(s_y+s_k)).
struct McMoments {
  double z = 0, z_se = 0;
  double mean_y = 0, mean_y_se = 0;
  double var_y = 0, var_y_se = 0;
  double mean_k = 0, mean_k_se = 0;
  double var_k = 0, var_k_se = 0;
};
McMoments mc_tilted_moments(double a_y, double q_y, double a_k, double q_k, double s_y,
                            double s_k, Index samples, std::uint64_t seed);

// P(f_y > f_k for all k != y) for independent Gaussians with the given
// per-class means and variances; one 1-D Gauss-Hermite integral.
double exact_factor_quadrature(const VectorXd& means, const VectorXd& vars, int y,
                               int order = 512);

// The probit product approximation the exact factor is compared against.
double product_probit_approx(const VectorXd& means, const VectorXd& vars, int y);

// Posterior per class by direct natural-parameter summation and explicit
// inversion, no Woodbury structure anywhere.
std::vector<MomentGaussian> dense_posterior(const Eigen::VectorXi& labels, int num_classes,
                                            const SiteTable& sites,
                                            const std::vector<ClassPrior>& priors,
                                            const ProjectionTable& proj);

// Central differences, O(step^2).
VectorXd finite_diff(const std::function<double(const VectorXd&)>& fn, const VectorXd& at,
                     const VectorXd& steps);

struct OracleReport {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string detail;
};

// The check suite behind `mgpc check`: gradient vs finite differences,
// MC tilted moments, exact-factor inequality, dense posterior agreement.
// gradient_perturbation scales the analytic gradient to prove sensitivity.
std::vector<OracleReport> run_checks(bool quick, double gradient_perturbation = 0.0,
                                     std::uint64_t seed = 0);

}  // namespace mgpc::oracles
