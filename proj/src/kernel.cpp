#include "gaussian.hpp"
#include "kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mgpc {

namespace {

void check_dims(const MatrixXd& a, const MatrixXd& b, const KernelHyper& h) {
  if (a.cols() != b.cols() || a.cols() != h.dim()) {
    throw UsageError("kernel: point dimension mismatch, a=" + format_dims(a.rows(), a.cols()) +
                     " b=" + format_dims(b.rows(), b.cols()) +
                     " hyper D=" + std::to_string(h.dim()));
  }
}

// Noise-free SE part.
MatrixXd se_part(const MatrixXd& a, const MatrixXd& b, const KernelHyper& h) {
  const VectorXd inv_l = (-h.log_lengthscale).array().exp();
  const MatrixXd as = a * inv_l.asDiagonal();
  const MatrixXd bs = b * inv_l.asDiagonal();
  const VectorXd an = as.rowwise().squaredNorm();
  const VectorXd bn = bs.rowwise().squaredNorm();
  MatrixXd d2 = an.replicate(1, b.rows()) + bn.transpose().replicate(a.rows(), 1) -
                2.0 * as * bs.transpose();
  d2 = d2.cwiseMax(0.0);
  return h.amplitude2() * (-0.5 * d2.array()).exp().matrix();
}

}  // namespace

MatrixXd gram(const MatrixXd& a, const MatrixXd& b, const KernelHyper& h, bool self_mode) {
  check_dims(a, b, h);
  if (self_mode && a.rows() != b.rows()) {
    throw UsageError("gram: self_mode requires square Gram");
  }
  MatrixXd k = se_part(a, b, h);
  if (self_mode) {
    k.diagonal().array() += h.noise2() + h.jitter();
    k = symmetrize(k);
  }
  return k;
}

MatrixXd gram_grad(const MatrixXd& a, const MatrixXd& b, const KernelHyper& h, bool self_mode,
                   const HyperIndex& wrt) {
  check_dims(a, b, h);
  const MatrixXd e = se_part(a, b, h);
  switch (wrt.kind) {
    case HyperIndex::Lengthscale: {
      if (wrt.dim < 0 || wrt.dim >= h.dim()) throw UsageError("gram_grad: bad lengthscale index");
      const double inv_l2 = std::exp(-2.0 * h.log_lengthscale[wrt.dim]);
      const VectorXd ad = a.col(wrt.dim);
      const VectorXd bd = b.col(wrt.dim);
      MatrixXd diff = ad.replicate(1, b.rows()) - bd.transpose().replicate(a.rows(), 1);
      return (e.array() * diff.array().square() * inv_l2).matrix();
    }
    case HyperIndex::Amplitude: {
      MatrixXd g = 2.0 * e;
      if (self_mode) g.diagonal().array() += 2.0 * h.jitter();
      return g;
    }
    case HyperIndex::Noise: {
      MatrixXd g = MatrixXd::Zero(a.rows(), b.rows());
      if (self_mode) g.diagonal().array() += 2.0 * h.noise2();
      return g;
    }
    case HyperIndex::Inducing: {
      // Derivative w.r.t. coordinate (point, dim) of b.
      if (wrt.point < 0 || wrt.point >= b.rows() || wrt.dim < 0 || wrt.dim >= h.dim()) {
        throw UsageError("gram_grad: bad inducing index");
      }
      const Index j = wrt.point, d = wrt.dim;
      const double inv_l2 = std::exp(-2.0 * h.log_lengthscale[d]);
      MatrixXd g = MatrixXd::Zero(a.rows(), b.rows());
      for (Index i = 0; i < a.rows(); ++i) {
        g(i, j) = e(i, j) * (a(i, d) - b(j, d)) * inv_l2;
      }
      if (self_mode) {
        for (Index i = 0; i < b.rows(); ++i) {
          g(j, i) = e(j, i) * (b(i, d) - b(j, d)) * inv_l2;
        }
        g(j, j) = 0.0;
      }
      return g;
    }
  }
  throw UsageError("gram_grad: bad hyper kind");
}

Index hyper_block_size(Index d, Index m) { return d + 2 + m * d; }

VectorXd chain_rule_reduce(const MatrixXd& x, const MatrixXd& inducing, const KernelHyper& h,
                           const GramWeights& w) {
  const Index n = x.rows(), m = inducing.rows(), d = h.dim();
  check_dims(x, inducing, h);
  if (w.w_inducing.rows() != m || w.w_cross.rows() != n || w.w_kappa.size() != n) {
    throw UsageError("chain_rule_reduce: weight shape mismatch");
  }
  const MatrixXd e_mm = se_part(inducing, inducing, h);
  const MatrixXd e_nm = se_part(x, inducing, h);
  const MatrixXd ws = symmetrize(w.w_inducing);
  const MatrixXd hm = ws.cwiseProduct(e_mm);        // M x M, symmetric
  const MatrixXd tn = w.w_cross.cwiseProduct(e_nm); // N x M

  const VectorXd hm_rowsum = hm.rowwise().sum();
  const VectorXd tn_rowsum = tn.rowwise().sum();
  const VectorXd tn_colsum = tn.colwise().sum();
  const double noise2 = h.noise2();
  const double amp2 = h.amplitude2();
  const double t_sum = w.w_kappa.sum();
  const VectorXd inv_l2 = (-2.0 * h.log_lengthscale).array().exp();

  VectorXd grad = VectorXd::Zero(hyper_block_size(d, m));

  // Lengthscales: sum_ab H_ab (u_ad - u_bd)^2 / l_d^2, both Gram blocks.
  {
    const MatrixXd xbar_sq = inducing.cwiseProduct(inducing);
    const MatrixXd x_sq = x.cwiseProduct(x);
    const VectorXd k_quad = ((inducing.transpose() * hm).cwiseProduct(inducing.transpose()))
                                .rowwise()
                                .sum();  // D: xbar_d' H xbar_d
    const VectorXd k_sq = 2.0 * (xbar_sq.transpose() * hm_rowsum);
    const VectorXd n_quad = ((x.transpose() * tn).cwiseProduct(inducing.transpose()))
                                .rowwise()
                                .sum();  // D: x_d' T xbar_d
    const VectorXd n_sq = x_sq.transpose() * tn_rowsum + xbar_sq.transpose() * tn_colsum;
    grad.head(d) = ((k_sq - 2.0 * k_quad + n_sq - 2.0 * n_quad).array() * inv_l2.array());
  }

  // Amplitude (jitter tracks amplitude^2, so it contributes too).
  grad[d] = 2.0 * hm.sum() + 2.0 * h.jitter() * ws.trace() + 2.0 * tn.sum() +
            t_sum * 2.0 * (amp2 + h.jitter());
  // Noise enters every self diagonal.
  grad[d + 1] = 2.0 * noise2 * (ws.trace() + t_sum);

  // Inducing coordinates, all at once:
  //   from K:   2 (H Xbar - diag(rowsum H) Xbar) / l^2
  //   from Knm: (T' X - diag(colsum T) Xbar) / l^2
  MatrixXd gi = 2.0 * (hm * inducing - hm_rowsum.asDiagonal() * inducing);
  gi += tn.transpose() * x - tn_colsum.asDiagonal() * inducing;
  gi = gi * inv_l2.asDiagonal();
  for (Index j = 0; j < m; ++j) {
    grad.segment(d + 2 + j * d, d) = gi.row(j).transpose();
  }
  return grad;
}

KernelHyper init_hyper(const MatrixXd& x, Rng& rng) {
  const Index n = x.rows(), d = x.cols();
  if (n < 1 || d < 1) throw UsageError("init_hyper: empty data");
  std::vector<Index> idx(n);
  std::iota(idx.begin(), idx.end(), Index{0});
  rng.shuffle(idx.begin(), idx.end());
  const Index sub = std::min<Index>(n, 1000);

  KernelHyper h;
  h.log_lengthscale.resize(d);
  std::vector<double> dists;
  dists.reserve(static_cast<size_t>(sub) * (sub - 1) / 2);
  std::vector<double> medians(d, 0.0);
  for (Index c = 0; c < d; ++c) {
    dists.clear();
    for (Index i = 0; i < sub; ++i) {
      for (Index j = i + 1; j < sub; ++j) {
        dists.push_back(std::abs(x(idx[i], c) - x(idx[j], c)));
      }
    }
    if (dists.empty()) {
      medians[c] = 0.0;
      continue;
    }
    auto mid = dists.begin() + dists.size() / 2;
    std::nth_element(dists.begin(), mid, dists.end());
    medians[c] = *mid;
  }
  // Degenerate dimensions (median 0) fall back to the global median, then 1.
  std::vector<double> positive;
  for (double v : medians) {
    if (v > 0) positive.push_back(v);
  }
  double fallback = 1.0;
  if (!positive.empty()) {
    auto mid = positive.begin() + positive.size() / 2;
    std::nth_element(positive.begin(), mid, positive.end());
    fallback = *mid;
  }
  for (Index c = 0; c < d; ++c) {
    h.log_lengthscale[c] = std::log(medians[c] > 0 ? medians[c] : fallback);
  }
  h.log_amplitude = 0.0;
  h.log_noise = std::log(0.1);
  return h;
}

}  // namespace mgpc
