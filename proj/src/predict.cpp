#include "predict.hpp"

#include <cmath>

namespace mgpc {

namespace {
constexpr double kProbFloor = 1e-12;
}

Predictor::Predictor(const ModelSnapshot& snap) : snap_(snap) {
  if (snap_.hypers.empty() || snap_.inducing.empty() || snap_.post_mean.empty()) {
    throw UsageError("Predictor: incomplete snapshot");
  }
  for (int c = 0; c < snap_.num_classes; ++c) {
    priors_.push_back(build_prior(snap_.inducing[c], snap_.hypers[c]));
  }
}

LatentPredictive Predictor::latent(const Eigen::RowVectorXd& x) const {
  LatentPredictive out;
  out.mean.resize(snap_.num_classes);
  out.var.resize(snap_.num_classes);
  for (int c = 0; c < snap_.num_classes; ++c) {
    const Projection p = project(x, snap_.hypers[c], snap_.inducing[c], priors_[c]);
    const auto ab = cavity_project(p, {snap_.post_mean[c], snap_.post_cov[c]});
    if (!ab) throw NumericError("latent_predictive: non-positive variance");
    out.mean[c] = ab->first;
    out.var[c] = ab->second;
  }
  return out;
}

VectorXd probabilities_from_latents(const VectorXd& mean, const VectorXd& var, int quad_order,
                                    bool renormalize) {
  const int cnum = static_cast<int>(mean.size());
  const auto& gh = gauss_hermite(quad_order);
  VectorXd probs(cnum);
  for (int c = 0; c < cnum; ++c) {
    double p = 0.0;
    for (Index j = 0; j < gh.nodes.size(); ++j) {
      const double u = mean[c] + std::sqrt(2.0 * var[c]) * gh.nodes[j];
      double log_prod = 0.0;
      for (int k = 0; k < cnum; ++k) {
        if (k == c) continue;
        log_prod += norm_log_cdf((u - mean[k]) / std::sqrt(var[k]));
      }
      p += gh.weights[j] * std::exp(log_prod);
    }
    probs[c] = p / std::sqrt(M_PI);
  }
  if (renormalize) {
    const double total = probs.sum();
    if (total > 0) probs /= total;
  }
  return probs.cwiseMax(0.0);
}

VectorXd Predictor::class_probabilities_raw(const Eigen::RowVectorXd& x, int quad_order) const {
  if (quad_order < 2) throw UsageError("class_probabilities: quad_order must be >= 2");
  const LatentPredictive lp = latent(x);
  return probabilities_from_latents(lp.mean, lp.var, quad_order, /*renormalize=*/false);
}

VectorXd Predictor::class_probabilities(const Eigen::RowVectorXd& x, int quad_order) const {
  if (quad_order < 2) throw UsageError("class_probabilities: quad_order must be >= 2");
  const LatentPredictive lp = latent(x);
  return probabilities_from_latents(lp.mean, lp.var, quad_order, /*renormalize=*/true);
}

MatrixXd Predictor::predict_proba(const MatrixXd& x_raw, int quad_order) const {
  if (x_raw.cols() != snap_.dim) {
    throw DataError("predict: feature width " + std::to_string(x_raw.cols()) +
                    " does not match model dim " + std::to_string(snap_.dim));
  }
  const MatrixXd x = snap_.standardized ? snap_.standardizer.apply(x_raw) : x_raw;
  MatrixXd probs(x.rows(), snap_.num_classes);
  parallel_for(x.rows(), [&](Index i) {
    probs.row(i) = class_probabilities(x.row(i), quad_order).transpose();
  });
  return probs;
}

Metrics Predictor::evaluate(const Dataset& test_raw, int quad_order) const {
  test_raw.validate();
  if (test_raw.num_classes > snap_.num_classes) {
    throw DataError("evaluate: test set has more classes than the model");
  }
  const MatrixXd probs = predict_proba(test_raw.x, quad_order);
  Metrics m;
  double nll = 0.0;
  Index wrong = 0;
  for (Index i = 0; i < test_raw.rows(); ++i) {
    Index arg;
    probs.row(i).maxCoeff(&arg);
    if (static_cast<int>(arg) != test_raw.y[i]) ++wrong;
    nll -= std::log(std::max(kProbFloor, probs(i, test_raw.y[i])));
  }
  m.error_rate = static_cast<double>(wrong) / test_raw.rows();
  m.mean_nll = nll / test_raw.rows();
  return m;
}

}  // namespace mgpc
