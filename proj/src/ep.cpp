#include "ep.hpp"

#include <cmath>

namespace mgpc {

namespace {
constexpr double kGammaFloor = 1e-12;

struct BlockCavity {
  MomentGaussian g;
  double delta_g = 0.0;
  bool ok = false;
};

// Remove a rank-one factor (c1 u u', c2 u) from one posterior block.
// h = V^-1 m must be supplied; delta_g is the block's contribution to
// g(theta_cavity) - g(theta).
BlockCavity remove_rank_one(const MomentGaussian& q, const VectorXd& h, const VectorXd& u,
                            double c1, double c2) {
  BlockCavity out;
  const VectorXd vu = q.cov * u;
  const double p = u.dot(vu);
  const double denom = 1.0 - c1 * p;
  if (!(denom > 0.0) || !std::isfinite(denom)) return out;
  const double r = c1 / denom;
  out.g.cov = q.cov + r * (vu * vu.transpose());
  out.g.cov = symmetrize(out.g.cov);
  const double um = u.dot(q.mean);
  out.g.mean = q.mean + (r * um - c2 / denom) * vu;
  // 1/2 [log|Vc| - log|V|] = -1/2 log denom;  m'V^-1 m via the natural shift.
  const double quad_cav = out.g.mean.dot(h - c2 * u);
  const double quad_q = q.mean.dot(h);
  out.delta_g = -0.5 * std::log(denom) + 0.5 * (quad_cav - quad_q);
  out.ok = std::isfinite(out.delta_g);
  return out;
}
}  // namespace

SiteParams damped_store(const SiteParams& old_site, const SiteParams& new_site, double rho) {
  if (rho < 0.0 || rho > 1.0) throw UsageError("damped_store: rho must be in [0,1]");
  SiteParams out;
  out.c1_y = rho * new_site.c1_y + (1.0 - rho) * old_site.c1_y;
  out.c2_y = rho * new_site.c2_y + (1.0 - rho) * old_site.c2_y;
  out.c1_k = rho * new_site.c1_k + (1.0 - rho) * old_site.c1_k;
  out.c2_k = rho * new_site.c2_k + (1.0 - rho) * old_site.c2_k;
  out.log_s = rho * new_site.log_s + (1.0 - rho) * old_site.log_s;
  return out;
}

EpEngine::EpEngine(Mode mode, Eigen::VectorXi labels, int num_classes, Index num_inducing)
    : mode_(mode),
      labels_(std::move(labels)),
      c_(num_classes),
      m_(num_inducing),
      n_factors_(static_cast<std::int64_t>(labels_.size()) * (num_classes - 1)) {
  if (num_classes < 2) throw UsageError("EpEngine: need at least two classes");
  if (mode == Mode::VI) throw UsageError("EpEngine: VI has its own fitter");
  if (mode_ == Mode::EP) {
    sites_ = SiteTable(labels_.size(), c_);
  } else {
    tied_.prec.assign(c_, MatrixXd::Zero(m_, m_));
    tied_.shift.assign(c_, VectorXd::Zero(m_));
    tied_.n_factors = n_factors_;
  }
}

void EpEngine::init_state(const std::vector<ClassPrior>& priors) {
  if (static_cast<int>(priors.size()) != c_) throw UsageError("init_state: prior count mismatch");
  if (mode_ == Mode::EP) {
    sites_ = SiteTable(labels_.size(), c_);
  } else {
    tied_.prec.assign(c_, MatrixXd::Zero(m_, m_));
    tied_.shift.assign(c_, VectorXd::Zero(m_));
  }
  state_.comp.resize(c_);
  state_.nat_shift.resize(c_);
  state_.log_det.resize(c_);
  for (int k = 0; k < c_; ++k) {
    state_.comp[k] = {VectorXd::Zero(m_), priors[k].k};
    state_.nat_shift[k] = VectorXd::Zero(m_);
    state_.log_det[k] = priors[k].log_det;
  }
}

void EpEngine::reconstruct(const std::vector<ClassPrior>& priors, const ProjectionTable& proj) {
  PosteriorState next;
  next.comp.resize(c_);
  next.nat_shift.resize(c_);
  next.log_det.resize(c_);
  const Index n = labels_.size();

  for (int cls = 0; cls < c_; ++cls) {
    MatrixXd lambda;
    VectorXd h;
    if (mode_ == Mode::SEP) {
      lambda = priors[cls].k_inv + tied_.prec[cls];
      h = tied_.shift[cls];
    } else {
      // Delta_ii and mu-tilde_i of the class: rank-one contributions from all
      // sites touching this block.
      std::vector<Index> nz;
      std::vector<double> delta, mu;
      nz.reserve(n);
      for (Index i = 0; i < n; ++i) {
        const int yi = labels_[i];
        double d = 0.0, u = 0.0;
        if (cls == yi) {
          for (int k = 0; k < c_; ++k) {
            if (k == yi) continue;
            d += sites_.at(i, k).c1_y;
            u += sites_.at(i, k).c2_y;
          }
        } else {
          d = sites_.at(i, cls).c1_k;
          u = sites_.at(i, cls).c2_k;
        }
        if (d != 0.0 || u != 0.0) {
          nz.push_back(i);
          delta.push_back(d);
          mu.push_back(u);
        }
      }
      if (nz.empty()) {
        next.comp[cls] = {VectorXd::Zero(m_), priors[cls].k};
        next.nat_shift[cls] = VectorXd::Zero(m_);
        next.log_det[cls] = priors[cls].log_det;
        continue;
      }
      MatrixXd u_cols(m_, static_cast<Index>(nz.size()));
      VectorXd dvec(static_cast<Index>(nz.size())), mvec(static_cast<Index>(nz.size()));
      for (size_t j = 0; j < nz.size(); ++j) {
        u_cols.col(static_cast<Index>(j)) = proj.upsilon(nz[j], cls);
        dvec[static_cast<Index>(j)] = delta[j];
        mvec[static_cast<Index>(j)] = mu[j];
      }
      lambda = priors[cls].k_inv + u_cols * dvec.asDiagonal() * u_cols.transpose();
      h = u_cols * mvec;
    }

    lambda = symmetrize(lambda);
    Eigen::LLT<MatrixXd> llt(lambda);
    if (llt.info() != Eigen::Success) {
      throw NumericError("posterior reconstruction failed for class " + std::to_string(cls));
    }
    next.comp[cls].cov = symmetrize(llt.solve(MatrixXd::Identity(m_, m_)));
    next.comp[cls].mean = llt.solve(h);
    next.nat_shift[cls] = h;
    double ld = 0.0;
    for (Index i = 0; i < m_; ++i) ld += std::log(llt.matrixL()(i, i));
    next.log_det[cls] = -2.0 * ld;  // log|V| = -log|Lambda|
  }
  state_ = std::move(next);
}

std::optional<SiteCavity> EpEngine::cavity_from_blocks(Index i, int k, const SiteParams& site,
                                                       const ProjectionTable& proj) const {
  const int yi = labels_[i];
  const auto by = remove_rank_one(state_.comp[yi], state_.nat_shift[yi], proj.upsilon(i, yi),
                                  site.c1_y, site.c2_y);
  if (!by.ok) return std::nullopt;
  const auto bk = remove_rank_one(state_.comp[k], state_.nat_shift[k], proj.upsilon(i, k),
                                  site.c1_k, site.c2_k);
  if (!bk.ok) return std::nullopt;
  return SiteCavity{by.g, bk.g, by.delta_g + bk.delta_g};
}

std::optional<SiteCavity> EpEngine::compute_cavity(Index i, int k,
                                                   const ProjectionTable& proj) const {
  if (i < 0 || i >= labels_.size() || k < 0 || k >= c_ || k == labels_[i]) {
    throw UsageError("compute_cavity: bad site index");
  }
  if (mode_ == Mode::SEP) {
    throw UsageError("compute_cavity: SEP cavities come from compute_sep_cavity");
  }
  return cavity_from_blocks(i, k, sites_.at(i, k), proj);
}

SepCavity EpEngine::compute_sep_cavity(const std::vector<ClassPrior>& priors) const {
  if (mode_ != Mode::SEP) throw UsageError("compute_sep_cavity: engine not in SEP mode");
  const double frac = 1.0 - 1.0 / static_cast<double>(n_factors_);
  SepCavity out;
  out.comp.resize(c_);
  for (int cls = 0; cls < c_; ++cls) {
    MatrixXd lambda = symmetrize(priors[cls].k_inv + frac * tied_.prec[cls]);
    Eigen::LLT<MatrixXd> llt(lambda);
    if (llt.info() != Eigen::Success) {
      throw NumericError("SEP fractional cavity not PD for class " + std::to_string(cls));
    }
    const VectorXd h = frac * tied_.shift[cls];
    out.comp[cls].cov = symmetrize(llt.solve(MatrixXd::Identity(m_, m_)));
    out.comp[cls].mean = llt.solve(h);
    double ld = 0.0;
    for (Index i = 0; i < m_; ++i) ld += std::log(llt.matrixL()(i, i));
    // g difference, block by block: 1/2 log|Vc| + 1/2 m'V^-1m minus q's terms.
    out.delta_g += 0.5 * (-2.0 * ld - state_.log_det[cls]);
    out.delta_g += 0.5 * (out.comp[cls].mean.dot(h) -
                          state_.comp[cls].mean.dot(state_.nat_shift[cls]));
  }
  return out;
}

std::optional<std::pair<SiteParams, double>> EpEngine::tilted_update(
    Index i, int k, const SiteCavity& cavity, const ProjectionTable& proj) const {
  const int yi = labels_[i];
  const Projection py = proj.get(i, yi);
  const Projection pk = proj.get(i, k);
  const auto ab_y = cavity_project(py, cavity.cav_y);
  const auto ab_k = cavity_project(pk, cavity.cav_k);
  if (!ab_y || !ab_k) return std::nullopt;
  const auto [ay, by] = *ab_y;
  const auto [ak, bk] = *ab_k;

  const double big_b = by + bk;
  const double sqrt_b = std::sqrt(big_b);
  const double alpha = (ay - ak) / sqrt_b;
  const double log_z = norm_log_cdf(alpha);
  const double beta = norm_hazard(alpha);
  const double gamma = std::max(beta * (beta + alpha), kGammaFloor) / big_b;

  const double qy = std::max(0.0, by - py.s);  // upsilon' V_cavity upsilon
  const double qk = std::max(0.0, bk - pk.s);
  const double dy = 1.0 / gamma - qy;
  const double dk = 1.0 / gamma - qk;
  if (!(dy > 0.0) || !(dk > 0.0)) return std::nullopt;

  SiteParams s;
  s.c1_y = 1.0 / dy;
  s.c1_k = 1.0 / dk;
  const double sb = beta / sqrt_b;
  s.c2_y = sb * (1.0 + s.c1_y * qy) + s.c1_y * ay;
  s.c2_k = -sb * (1.0 + s.c1_k * qk) + s.c1_k * ak;
  s.log_s = log_z + cavity.delta_g;
  if (!std::isfinite(s.c1_y) || !std::isfinite(s.c1_k) || !std::isfinite(s.c2_y) ||
      !std::isfinite(s.c2_k) || !std::isfinite(s.log_s)) {
    return std::nullopt;
  }
  return std::make_pair(s, log_z);
}

PassResult EpEngine::parallel_pass(const std::vector<ClassPrior>& priors,
                                   const ProjectionTable& proj, const std::vector<Index>& batch,
                                   double rho) {
  PassResult res;
  if (batch.empty()) return res;
  const Index nb = static_cast<Index>(batch.size());
  const Index slots = nb * c_;
  std::vector<char> has(slots, 0);
  std::vector<SiteParams> fresh(slots);
  std::vector<double> logz(slots, 0.0);
  std::vector<char> skipped(slots, 0);

  std::optional<SepCavity> sep;
  if (mode_ == Mode::SEP) sep = compute_sep_cavity(priors);

  parallel_for(nb, [&](Index b) {
    const Index i = batch[static_cast<size_t>(b)];
    const int yi = labels_[i];
    for (int k = 0; k < c_; ++k) {
      if (k == yi) continue;
      const Index slot = b * c_ + k;
      std::optional<SiteCavity> cav;
      if (mode_ == Mode::SEP) {
        cav = SiteCavity{sep->comp[yi], sep->comp[k], sep->delta_g};
      } else {
        cav = compute_cavity(i, k, proj);
      }
      if (!cav) {
        skipped[slot] = 1;
        continue;
      }
      auto upd = tilted_update(i, k, *cav, proj);
      if (!upd) {
        skipped[slot] = 1;
        continue;
      }
      fresh[slot] = upd->first;
      logz[slot] = upd->second;
      has[slot] = 1;
    }
  });

  // Serial merge keeps results independent of thread count.
  if (mode_ == Mode::EP) {
    const SiteTable backup = sites_;
    for (Index b = 0; b < nb; ++b) {
      const Index i = batch[static_cast<size_t>(b)];
      for (int k = 0; k < c_; ++k) {
        const Index slot = b * c_ + k;
        if (skipped[slot]) ++res.skipped;
        if (!has[slot]) continue;
        const SiteParams old = sites_.at(i, k);
        const SiteParams next = damped_store(old, fresh[slot], rho);
        res.max_delta = std::max({res.max_delta, std::abs(next.c1_y - old.c1_y),
                                  std::abs(next.c2_y - old.c2_y), std::abs(next.c1_k - old.c1_k),
                                  std::abs(next.c2_k - old.c2_k)});
        sites_.at(i, k) = next;
        res.sum_log_z += logz[slot];
        ++res.updated;
      }
    }
    try {
      reconstruct(priors, proj);
    } catch (const NumericError&) {
      sites_ = backup;
      throw;
    }
  } else {
    const TiedFactor backup = tied_;
    std::vector<MatrixXd> dprec(c_, MatrixXd::Zero(m_, m_));
    std::vector<VectorXd> dshift(c_, VectorXd::Zero(m_));
    Index n_upd = 0;
    for (Index b = 0; b < nb; ++b) {
      const Index i = batch[static_cast<size_t>(b)];
      const int yi = labels_[i];
      for (int k = 0; k < c_; ++k) {
        const Index slot = b * c_ + k;
        if (skipped[slot]) ++res.skipped;
        if (!has[slot]) continue;
        const SiteParams& s = fresh[slot];
        const VectorXd uy = proj.upsilon(i, yi);
        const VectorXd uk = proj.upsilon(i, k);
        dprec[yi] += s.c1_y * (uy * uy.transpose());
        dshift[yi] += s.c2_y * uy;
        dprec[k] += s.c1_k * (uk * uk.transpose());
        dshift[k] += s.c2_k * uk;
        res.sum_log_z += logz[slot];
        ++res.updated;
        ++n_upd;
      }
    }
    // Each processed pair swaps its 1/n share of the old tied factor for the
    // damped fresh site: tied <- (1 - rho*n_upd/n) tied + rho * sum(fresh).
    const double keep = 1.0 - rho * static_cast<double>(n_upd) / static_cast<double>(n_factors_);
    for (int cls = 0; cls < c_; ++cls) {
      MatrixXd new_prec = keep * tied_.prec[cls] + rho * dprec[cls];
      VectorXd new_shift = keep * tied_.shift[cls] + rho * dshift[cls];
      res.max_delta = std::max(res.max_delta,
                               (new_prec - tied_.prec[cls]).cwiseAbs().maxCoeff());
      res.max_delta = std::max(res.max_delta,
                               (new_shift - tied_.shift[cls]).cwiseAbs().maxCoeff());
      tied_.prec[cls] = symmetrize(new_prec);
      tied_.shift[cls] = std::move(new_shift);
    }
    try {
      reconstruct(priors, proj);
    } catch (const NumericError&) {
      tied_ = backup;
      throw;
    }
  }
  return res;
}

size_t EpEngine::state_bytes() const {
  return state_.bytes() + (mode_ == Mode::EP ? sites_.bytes() : tied_.bytes());
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::EP: return "ep";
    case Mode::SEP: return "sep";
    case Mode::VI: return "vi";
  }
  return "?";
}

Mode mode_from_name(const std::string& s) {
  if (s == "ep") return Mode::EP;
  if (s == "sep") return Mode::SEP;
  if (s == "vi") return Mode::VI;
  throw UsageError("unknown method '" + s + "' (expected ep|sep|vi)");
}

}  // namespace mgpc
