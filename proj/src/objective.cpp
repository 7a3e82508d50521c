#include "objective.hpp"

#include <cmath>
#include <numeric>

namespace mgpc {

Index ParamLayout::size() const {
  const Index kernel = hyper_block_size(dim, 0);  // D + 2
  const Index per_class_inducing = num_inducing * dim;
  if (tied) return kernel + num_classes * per_class_inducing;
  return num_classes * (kernel + per_class_inducing);
}

Index ParamLayout::kernel_offset(int cls) const {
  if (tied) return 0;
  return cls * (hyper_block_size(dim, 0) + num_inducing * dim);
}

Index ParamLayout::inducing_offset(int cls) const {
  if (tied) return hyper_block_size(dim, 0) + cls * num_inducing * dim;
  return kernel_offset(cls) + hyper_block_size(dim, 0);
}

VectorXd ParamLayout::pack(const std::vector<KernelHyper>& hypers,
                           const std::vector<MatrixXd>& inducing) const {
  VectorXd out = VectorXd::Zero(size());
  for (int c = 0; c < num_classes; ++c) {
    const Index ko = kernel_offset(c);  // shared block is simply rewritten when tied
    out.segment(ko, dim) = hypers[c].log_lengthscale;
    out[ko + dim] = hypers[c].log_amplitude;
    out[ko + dim + 1] = hypers[c].log_noise;
    const Index io = inducing_offset(c);
    for (Index j = 0; j < num_inducing; ++j) {
      out.segment(io + j * dim, dim) = inducing[c].row(j).transpose();
    }
  }
  return out;
}

void ParamLayout::apply_delta(const VectorXd& delta, std::vector<KernelHyper>& hypers,
                              std::vector<MatrixXd>& inducing) const {
  if (delta.size() != size()) throw UsageError("apply_delta: size mismatch");
  for (int c = 0; c < num_classes; ++c) {
    const Index ko = kernel_offset(c);
    hypers[c].log_lengthscale += delta.segment(ko, dim);
    hypers[c].log_amplitude += delta[ko + dim];
    hypers[c].log_noise += delta[ko + dim + 1];
    const Index io = inducing_offset(c);
    for (Index j = 0; j < num_inducing; ++j) {
      inducing[c].row(j) += delta.segment(io + j * dim, dim).transpose();
    }
  }
}

namespace {

// g(theta) - g(theta_prior): the 2*pi terms cancel, prior means are zero.
double g_minus_g_prior(const EpEngine& eng, const std::vector<ClassPrior>& priors) {
  double total = 0.0;
  for (int c = 0; c < eng.num_classes(); ++c) {
    total += 0.5 * (eng.state().log_det[c] - priors[c].log_det);
    total += 0.5 * eng.state().comp[c].mean.dot(eng.state().nat_shift[c]);
  }
  return total;
}

bool tied_factor_is_zero(const TiedFactor& t) {
  for (const auto& p : t.prec) {
    if (p.cwiseAbs().maxCoeff() != 0.0) return false;
  }
  for (const auto& s : t.shift) {
    if (s.cwiseAbs().maxCoeff() != 0.0) return false;
  }
  return true;
}

double site_terms(const EpEngine& eng, const std::vector<ClassPrior>& priors,
                  const ProjectionTable& proj, const std::vector<Index>& batch, double scale) {
  double total = 0.0;
  if (eng.mode() == Mode::EP) {
    for (const Index i : batch) {
      const int yi = eng.labels()[i];
      for (int k = 0; k < eng.num_classes(); ++k) {
        if (k == yi || eng.sites().at(i, k).is_zero()) continue;
        const auto cav = eng.compute_cavity(i, k, proj);
        if (!cav) throw NumericError("log_zq: invalid cavity at site " + std::to_string(i));
        const auto upd_y = cavity_project(proj.get(i, yi), cav->cav_y);
        const auto upd_k = cavity_project(proj.get(i, k), cav->cav_k);
        if (!upd_y || !upd_k) throw NumericError("log_zq: non-positive cavity variance");
        const double alpha = (upd_y->first - upd_k->first) /
                             std::sqrt(upd_y->second + upd_k->second);
        total += norm_log_cdf(alpha) + cav->delta_g;
      }
    }
  } else {
    if (tied_factor_is_zero(eng.tied())) return 0.0;
    const SepCavity cav = eng.compute_sep_cavity(priors);
    for (const Index i : batch) {
      const int yi = eng.labels()[i];
      for (int k = 0; k < eng.num_classes(); ++k) {
        if (k == yi) continue;
        const auto ab_y = cavity_project(proj.get(i, yi), cav.comp[yi]);
        const auto ab_k = cavity_project(proj.get(i, k), cav.comp[k]);
        if (!ab_y || !ab_k) throw NumericError("log_zq: non-positive cavity variance");
        const double alpha = (ab_y->first - ab_k->first) /
                             std::sqrt(ab_y->second + ab_k->second);
        total += norm_log_cdf(alpha) + cav.delta_g;
      }
    }
  }
  return scale * total;
}

std::vector<Index> all_rows(Index n) {
  std::vector<Index> v(n);
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

}  // namespace

double log_zq(const EpEngine& eng, const std::vector<ClassPrior>& priors,
              const ProjectionTable& proj) {
  return g_minus_g_prior(eng, priors) +
         site_terms(eng, priors, proj, all_rows(eng.labels().size()), 1.0);
}

double log_zq_batch(const EpEngine& eng, const std::vector<ClassPrior>& priors,
                    const ProjectionTable& proj, const std::vector<Index>& batch) {
  if (batch.empty()) throw UsageError("log_zq_batch: empty batch");
  const double scale = static_cast<double>(eng.labels().size()) / batch.size();
  return g_minus_g_prior(eng, priors) + site_terms(eng, priors, proj, batch, scale);
}

namespace {

VectorXd grad_impl(const MatrixXd& x, const EpEngine& eng, const std::vector<ClassPrior>& priors,
                   const ProjectionTable& proj, const std::vector<KernelHyper>& hypers,
                   const std::vector<MatrixXd>& inducing, const ParamLayout& layout,
                   const std::vector<Index>& batch, double rho) {
  const int cnum = eng.num_classes();
  const Index m = eng.num_inducing();

  // Per-class accumulated weights over the Gram quantities. Cross/kappa rows
  // are compacted to the batch.
  std::vector<Index> row_of(x.rows(), -1);
  for (size_t b = 0; b < batch.size(); ++b) row_of[batch[b]] = static_cast<Index>(b);
  MatrixXd xb(static_cast<Index>(batch.size()), x.cols());
  for (size_t b = 0; b < batch.size(); ++b) xb.row(static_cast<Index>(b)) = x.row(batch[b]);

  std::vector<GramWeights> weights;
  for (int c = 0; c < cnum; ++c) {
    weights.push_back(GramWeights::zero(static_cast<Index>(batch.size()), m));
  }

  // Shared SEP cavity solves, reused across sites.
  std::optional<SepCavity> sep;
  std::vector<VectorXd> sep_gm(cnum);
  std::vector<MatrixXd> sep_gv(cnum);
  const bool sep_zero = eng.mode() == Mode::SEP && tied_factor_is_zero(eng.tied());
  if (eng.mode() == Mode::SEP && !sep_zero) {
    sep = eng.compute_sep_cavity(priors);
    for (int c = 0; c < cnum; ++c) {
      sep_gm[c] = priors[c].chol.solve(sep->comp[c].mean);
      sep_gv[c] = priors[c].chol.solve(sep->comp[c].cov);
    }
  }

  for (const Index i : batch) {
    const int yi = eng.labels()[i];
    for (int k = 0; k < cnum; ++k) {
      if (k == yi) continue;

      MomentGaussian cav_y, cav_k;
      if (eng.mode() == Mode::EP) {
        if (eng.sites().at(i, k).is_zero()) continue;
        const auto cav = eng.compute_cavity(i, k, proj);
        if (!cav) continue;  // skipped site contributes nothing
        cav_y = cav->cav_y;
        cav_k = cav->cav_k;
      } else {
        if (sep_zero) continue;
        cav_y = sep->comp[yi];
        cav_k = sep->comp[k];
      }

      const Projection py = proj.get(i, yi);
      const Projection pk = proj.get(i, k);
      const auto ab_y = cavity_project(py, cav_y);
      const auto ab_k = cavity_project(pk, cav_k);
      if (!ab_y || !ab_k) continue;
      const double big_b = ab_y->second + ab_k->second;
      const double sqrt_b = std::sqrt(big_b);
      const double alpha = (ab_y->first - ab_k->first) / sqrt_b;
      const double beta = norm_hazard(alpha);
      const double w_b = -beta * alpha / (2.0 * big_b) * rho;

      for (const bool is_true_class : {true, false}) {
        const int cls = is_true_class ? yi : k;
        const double w_a = (is_true_class ? beta : -beta) / sqrt_b * rho;
        const Projection& p = is_true_class ? py : pk;
        const MomentGaussian& cav = is_true_class ? cav_y : cav_k;
        VectorXd g_m, g_v;
        if (eng.mode() == Mode::EP) {
          g_m = priors[cls].chol.solve(cav.mean);
          g_v = priors[cls].chol.solve(cav.cov * p.upsilon);
        } else {
          g_m = sep_gm[cls];
          g_v = sep_gv[cls] * p.upsilon;
        }
        accumulate_gram_weights(weights[cls], row_of[i], p, g_m, g_v, w_a, w_b);
      }
    }
  }

  // Prior term: -1/2 trace(M_c' dK), M_c = K^-1 - K^-1 V K^-1 - K^-1 m m' K^-1.
  VectorXd grad = VectorXd::Zero(layout.size());
  for (int c = 0; c < cnum; ++c) {
    const VectorXd kim = priors[c].k_inv * eng.state().comp[c].mean;
    const MatrixXd mc = priors[c].k_inv - priors[c].k_inv * eng.state().comp[c].cov * priors[c].k_inv -
                        kim * kim.transpose();
    weights[c].w_inducing -= 0.5 * mc;

    const VectorXd block = chain_rule_reduce(xb, inducing[c], hypers[c], weights[c]);
    const Index d = layout.dim;
    grad.segment(layout.kernel_offset(c), d + 2) += block.head(d + 2);
    grad.segment(layout.inducing_offset(c), m * d) += block.tail(m * d);
  }
  return grad;
}

}  // namespace

void accumulate_gram_weights(GramWeights& w, Index row, const Projection& p, const VectorXd& g_m,
                             const VectorXd& g_v, double w_a, double w_b) {
  // da = (dk - dK upsilon)' g_m
  // db = dkappa - 2 dk'upsilon + upsilon'dK upsilon + 2 (dk - dK upsilon)' g_v
  w.w_kappa[row] += w_b;
  w.w_cross.row(row) += (w_a * g_m + w_b * (2.0 * g_v - 2.0 * p.upsilon)).transpose();
  w.w_inducing.noalias() -= w_a * (p.upsilon * g_m.transpose());
  w.w_inducing.noalias() += w_b * (p.upsilon * p.upsilon.transpose());
  w.w_inducing.noalias() -= 2.0 * w_b * (p.upsilon * g_v.transpose());
}

VectorXd grad_log_zq(const MatrixXd& x, const EpEngine& eng,
                     const std::vector<ClassPrior>& priors, const ProjectionTable& proj,
                     const std::vector<KernelHyper>& hypers,
                     const std::vector<MatrixXd>& inducing, const ParamLayout& layout) {
  return grad_impl(x, eng, priors, proj, hypers, inducing, layout, all_rows(x.rows()), 1.0);
}

VectorXd stochastic_grad(const MatrixXd& x, const EpEngine& eng,
                         const std::vector<ClassPrior>& priors, const ProjectionTable& proj,
                         const std::vector<KernelHyper>& hypers,
                         const std::vector<MatrixXd>& inducing, const ParamLayout& layout,
                         const std::vector<Index>& batch) {
  if (batch.empty()) throw UsageError("stochastic_grad: empty batch");
  const double rho = static_cast<double>(x.rows()) / batch.size();
  return grad_impl(x, eng, priors, proj, hypers, inducing, layout, batch, rho);
}

}  // namespace mgpc
