#pragma once

#include <optional>
#include <vector>

#include "gaussian.hpp"
#include "kernel.hpp"

namespace mgpc {

// Prior over one class's inducing values: N(0, K) with K the self Gram
// (noise + jitter on the diagonal). Cholesky and explicit inverse are cached;
// everything downstream reuses them.
struct ClassPrior {
  MatrixXd k;
  Eigen::LLT<MatrixXd> chol;
  MatrixXd k_inv;
  double log_det = 0.0;

  Index dim() const { return k.rows(); }
  VectorXd solve(const VectorXd& b) const { return chol.solve(b); }
};

ClassPrior build_prior(const MatrixXd& inducing, const KernelHyper& h);

// upsilon = K^-1 k(x, Xbar), s = kappa(x,x) - k' K^-1 k  (kappa includes the
// noise variance, so s is the conditional variance of the contaminated latent).
struct Projection {
  VectorXd upsilon;
  double s = 0.0;
};

Projection project(const Eigen::RowVectorXd& x, const KernelHyper& h, const MatrixXd& inducing,
                   const ClassPrior& prior);

// a = upsilon' m_cavity, b = s + upsilon' V_cavity upsilon. b <= 0 marks an
// invalid cavity and the caller skips the site.
std::optional<std::pair<double, double>> cavity_project(const Projection& p,
                                                        const MomentGaussian& cavity);

// Projections for a set of data rows, one block per class. Column r of
// upsilon[c] belongs to rows[r].
class ProjectionTable {
 public:
  ProjectionTable() = default;

  // rows = indices into the dataset; identity covers the full-batch case.
  static ProjectionTable build(const MatrixXd& x, const std::vector<Index>& rows,
                               const std::vector<KernelHyper>& hypers,
                               const std::vector<MatrixXd>& inducing,
                               const std::vector<ClassPrior>& priors);
  static ProjectionTable build_all(const MatrixXd& x, const std::vector<KernelHyper>& hypers,
                                   const std::vector<MatrixXd>& inducing,
                                   const std::vector<ClassPrior>& priors);

  Projection get(Index data_row, int cls) const;
  VectorXd upsilon(Index data_row, int cls) const { return ups_[cls].col(pos(data_row)); }
  double s(Index data_row, int cls) const { return s_[cls][pos(data_row)]; }
  const std::vector<Index>& rows() const { return rows_; }
  int classes() const { return static_cast<int>(ups_.size()); }

 private:
  Index pos(Index data_row) const;

  std::vector<MatrixXd> ups_;  // per class: M x |rows|
  std::vector<VectorXd> s_;    // per class: |rows|
  std::vector<Index> rows_;
  bool identity_ = true;
  std::vector<Index> lookup_;  // data row -> column, only when !identity_
};

}  // namespace mgpc
