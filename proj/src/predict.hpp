#pragma once

#include <vector>

#include "model.hpp"
#include "projection.hpp"

namespace mgpc {

// Per-class predictive latent moments at one input.
struct LatentPredictive {
  VectorXd mean;
  VectorXd var;
};

struct Metrics {
  double error_rate = 0.0;
  double mean_nll = 0.0;
};

class Predictor {
 public:
  explicit Predictor(const ModelSnapshot& snap);

  // m*_k = k'K^-1 m_k, v*_k = kappa - k'K^-1 k + k'K^-1 V_k K^-1 k.
  // Expects x in model (standardized) coordinates.
  LatentPredictive latent(const Eigen::RowVectorXd& x) const;

  // One 1-D Gauss-Hermite integral per class, renormalized to sum to one.
  VectorXd class_probabilities(const Eigen::RowVectorXd& x, int quad_order = 64) const;
  VectorXd class_probabilities_raw(const Eigen::RowVectorXd& x, int quad_order = 64) const;

  // Raw-feature batch interface: applies the stored standardization.
  MatrixXd predict_proba(const MatrixXd& x_raw, int quad_order = 64) const;
  Metrics evaluate(const Dataset& test_raw, int quad_order = 64) const;

  const ModelSnapshot& snapshot() const { return snap_; }

 private:
  ModelSnapshot snap_;
  std::vector<ClassPrior> priors_;
};

// Class probabilities from given latent moments (shared with the oracles).
VectorXd probabilities_from_latents(const VectorXd& mean, const VectorXd& var, int quad_order,
                                    bool renormalize);

}  // namespace mgpc
