#include "projection.hpp"

#include <cmath>
#include <numeric>

namespace mgpc {

ClassPrior build_prior(const MatrixXd& inducing, const KernelHyper& h) {
  ClassPrior p;
  p.k = gram(inducing, inducing, h, true);
  p.chol = chol_psd(p.k, "inducing Gram");
  const Index m = p.k.rows();
  p.k_inv = symmetrize(p.chol.solve(MatrixXd::Identity(m, m)));
  p.log_det = 0.0;
  for (Index i = 0; i < m; ++i) p.log_det += std::log(p.chol.matrixL()(i, i));
  p.log_det *= 2.0;
  return p;
}

Projection project(const Eigen::RowVectorXd& x, const KernelHyper& h, const MatrixXd& inducing,
                   const ClassPrior& prior) {
  const MatrixXd kx = gram(x, inducing, h, false);  // 1 x M
  Projection p;
  p.upsilon = prior.solve(kx.transpose());
  const double kappa = h.amplitude2() + h.noise2() + h.jitter();
  p.s = std::max(0.0, kappa - kx.row(0).dot(p.upsilon));
  return p;
}

std::optional<std::pair<double, double>> cavity_project(const Projection& p,
                                                        const MomentGaussian& cavity) {
  if (cavity.dim() != p.upsilon.size()) throw UsageError("cavity_project: dimension mismatch");
  const double a = p.upsilon.dot(cavity.mean);
  const double b = p.s + p.upsilon.dot(cavity.cov * p.upsilon);
  if (!(b > 0.0) || !std::isfinite(b)) return std::nullopt;
  return std::make_pair(a, b);
}

ProjectionTable ProjectionTable::build(const MatrixXd& x, const std::vector<Index>& rows,
                                       const std::vector<KernelHyper>& hypers,
                                       const std::vector<MatrixXd>& inducing,
                                       const std::vector<ClassPrior>& priors) {
  const int c = static_cast<int>(priors.size());
  ProjectionTable t;
  t.rows_ = rows;
  t.identity_ = true;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] != static_cast<Index>(i)) {
      t.identity_ = false;
      break;
    }
  }
  if (!t.identity_) {
    t.lookup_.assign(x.rows(), -1);
    for (size_t i = 0; i < rows.size(); ++i) t.lookup_[rows[i]] = static_cast<Index>(i);
  }

  MatrixXd xb(static_cast<Index>(rows.size()), x.cols());
  for (size_t i = 0; i < rows.size(); ++i) xb.row(static_cast<Index>(i)) = x.row(rows[i]);

  t.ups_.resize(c);
  t.s_.resize(c);
  for (int k = 0; k < c; ++k) {
    const MatrixXd kx = gram(xb, inducing[k], hypers[k], false);  // R x M
    t.ups_[k] = priors[k].chol.solve(kx.transpose());             // M x R
    const double kappa = hypers[k].amplitude2() + hypers[k].noise2() + hypers[k].jitter();
    t.s_[k] = (VectorXd::Constant(xb.rows(), kappa) -
               (kx.transpose().cwiseProduct(t.ups_[k])).colwise().sum().transpose())
                  .cwiseMax(0.0);
  }
  return t;
}

ProjectionTable ProjectionTable::build_all(const MatrixXd& x,
                                           const std::vector<KernelHyper>& hypers,
                                           const std::vector<MatrixXd>& inducing,
                                           const std::vector<ClassPrior>& priors) {
  std::vector<Index> rows(x.rows());
  std::iota(rows.begin(), rows.end(), Index{0});
  return build(x, rows, hypers, inducing, priors);
}

Index ProjectionTable::pos(Index data_row) const {
  if (identity_) return data_row;
  if (data_row < 0 || data_row >= static_cast<Index>(lookup_.size()) || lookup_[data_row] < 0) {
    throw UsageError("projection table: row " + std::to_string(data_row) + " not materialized");
  }
  return lookup_[data_row];
}

Projection ProjectionTable::get(Index data_row, int cls) const {
  Projection p;
  p.upsilon = upsilon(data_row, cls);
  p.s = s(data_row, cls);
  return p;
}

}  // namespace mgpc
