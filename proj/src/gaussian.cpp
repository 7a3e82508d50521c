#include "gaussian.hpp"

#include <cmath>

namespace mgpc {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454836;
constexpr double kJitterScale = 1e-8;
}  // namespace

Eigen::LLT<MatrixXd> chol_psd(const MatrixXd& a, const std::string& context) {
  if (a.rows() != a.cols()) {
    throw UsageError("chol_psd(" + context + "): matrix not square, " +
                     format_dims(a.rows(), a.cols()));
  }
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  // Stabilize borderline matrices with 1e-8 * mean-diagonal jitter.
  const double mean_diag = a.diagonal().cwiseAbs().mean();
  const double jitter = kJitterScale * (mean_diag > 0 ? mean_diag : 1.0);
  MatrixXd stab = a;
  stab.diagonal().array() += jitter;
  llt.compute(stab);
  if (llt.info() != Eigen::Success) {
    throw NumericError("matrix not positive definite in " + context);
  }
  return llt;
}

MatrixXd symmetrize(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

double log_normalizer(const NaturalGaussian& g, const std::string& context) {
  const auto llt = chol_psd(g.precision, context);
  const Index d = g.dim();
  // log|Sigma| = -log|Lambda|; mu'Sigma^-1 mu = h'Lambda^-1 h.
  double log_det_prec = 0.0;
  for (Index i = 0; i < d; ++i) log_det_prec += std::log(llt.matrixL()(i, i));
  log_det_prec *= 2.0;
  const VectorXd half = llt.matrixL().solve(g.shift);
  return 0.5 * d * kLogTwoPi - 0.5 * log_det_prec + 0.5 * half.squaredNorm();
}

NaturalGaussian multiply(const NaturalGaussian& a, const NaturalGaussian& b) {
  return {symmetrize(a.precision + b.precision), a.shift + b.shift};
}

NaturalGaussian divide(const NaturalGaussian& a, const NaturalGaussian& b) {
  return {symmetrize(a.precision - b.precision), a.shift - b.shift};
}

NaturalGaussian to_natural(const MomentGaussian& g, const std::string& context) {
  const auto llt = chol_psd(g.cov, context);
  const Index d = g.dim();
  NaturalGaussian out;
  out.precision = symmetrize(llt.solve(MatrixXd::Identity(d, d)));
  out.shift = llt.solve(g.mean);
  return out;
}

MomentGaussian to_moment(const NaturalGaussian& g, const std::string& context) {
  const auto llt = chol_psd(g.precision, context);
  const Index d = g.dim();
  MomentGaussian out;
  out.cov = symmetrize(llt.solve(MatrixXd::Identity(d, d)));
  out.mean = llt.solve(g.shift);
  return out;
}

std::optional<MatrixXd> rank_one_downdate(const MatrixXd& v, const VectorXd& u, double c) {
  if (c == 0.0) return v;
  const VectorXd vu = v * u;
  const double p = u.dot(vu);
  // PD of the downdated matrix given V PD: |V'| = |V| / (1 - c p).
  const double denom = 1.0 - c * p;
  if (!(denom > 0.0) || !std::isfinite(denom)) return std::nullopt;
  // V + Vu (1/c - p)^-1 u'V, written to avoid dividing by c near zero.
  MatrixXd out = v + vu * (c / denom) * vu.transpose();
  return symmetrize(out);
}

}  // namespace mgpc
