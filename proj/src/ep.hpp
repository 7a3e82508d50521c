#pragma once

#include <optional>
#include <vector>

#include "gaussian.hpp"
#include "model.hpp"
#include "projection.hpp"

namespace mgpc {

// One approximate factor for the pair (instance i, non-true class k). The
// factor touches two class blocks with rank-one precision: C1y * uy uy' on the
// true-class block and C1k * uk uk' on block k, with shifts C2y * uy, C2k * uk.
// A zero-initialized site is the unit factor.
struct SiteParams {
  double c1_y = 0.0;
  double c2_y = 0.0;
  double c1_k = 0.0;
  double c2_k = 0.0;
  double log_s = 0.0;

  bool is_zero() const {
    return c1_y == 0.0 && c2_y == 0.0 && c1_k == 0.0 && c2_k == 0.0 && log_s == 0.0;
  }
};

SiteParams damped_store(const SiteParams& old_site, const SiteParams& new_site, double rho);

class SiteTable {
 public:
  SiteTable() = default;
  SiteTable(Index n, int c) : n_(n), c_(c), sites_(static_cast<size_t>(n) * c) {}

  SiteParams& at(Index i, int k) { return sites_[static_cast<size_t>(i) * c_ + k]; }
  const SiteParams& at(Index i, int k) const { return sites_[static_cast<size_t>(i) * c_ + k]; }
  Index rows() const { return n_; }
  int classes() const { return c_; }
  size_t bytes() const { return sites_.size() * sizeof(SiteParams); }

 private:
  Index n_ = 0;
  int c_ = 0;
  std::vector<SiteParams> sites_;
};

// SEP replaces the N(C-1) individual factors by their running product: one
// dense M x M precision contribution and one shift per class. O(C M^2) memory
// regardless of N.
struct TiedFactor {
  std::vector<MatrixXd> prec;
  std::vector<VectorXd> shift;
  std::int64_t n_factors = 0;

  size_t bytes() const {
    size_t b = 0;
    for (const auto& p : prec) b += sizeof(double) * p.size();
    for (const auto& s : shift) b += sizeof(double) * s.size();
    return b;
  }
};

struct PosteriorState {
  std::vector<MomentGaussian> comp;  // per class
  std::vector<VectorXd> nat_shift;   // V^-1 m per class (prior shift is zero)
  std::vector<double> log_det;       // log|V| per class

  size_t bytes() const {
    size_t b = 0;
    for (const auto& g : comp) b += sizeof(double) * (g.cov.size() + g.mean.size());
    for (const auto& s : nat_shift) b += sizeof(double) * s.size();
    return b;
  }
};

// Cavity marginals of the two blocks a site touches, plus the log-normalizer
// difference g(theta_cavity) - g(theta) restricted to those blocks.
struct SiteCavity {
  MomentGaussian cav_y;
  MomentGaussian cav_k;
  double delta_g = 0.0;
};

// SEP's shared fractional cavity q / phi^(1/n): all class blocks shrink.
struct SepCavity {
  std::vector<MomentGaussian> comp;
  double delta_g = 0.0;  // over all blocks
};

struct PassResult {
  double sum_log_z = 0.0;
  Index updated = 0;
  Index skipped = 0;
  double max_delta = 0.0;  // max |site parameter change| after damping
};

class EpEngine {
 public:
  EpEngine(Mode mode, Eigen::VectorXi labels, int num_classes, Index num_inducing);

  // Zero sites; q equals the prior.
  void init_state(const std::vector<ClassPrior>& priors);

  // Rebuilds q from the current sites, e.g. after a hyper-parameter move.
  // Throws NumericError naming the class on a PD failure.
  void reconstruct(const std::vector<ClassPrior>& priors, const ProjectionTable& proj);

  // Cavity for site (i,k). EP: rank-one downdates of the two blocks.
  // nullopt = invalid cavity (caller skips the site).
  std::optional<SiteCavity> compute_cavity(Index i, int k, const ProjectionTable& proj) const;
  SepCavity compute_sep_cavity(const std::vector<ClassPrior>& priors) const;

  // Moment-matched site for (i,k) against the given cavity. Returns the new
  // parameters and log Z_ik; nullopt when the tilted moments are unusable.
  std::optional<std::pair<SiteParams, double>> tilted_update(Index i, int k,
                                                             const SiteCavity& cavity,
                                                             const ProjectionTable& proj) const;

  // One parallel pass over `batch`: every site update reads the same pre-pass
  // q; q is reconstructed once at the end. Transactional: on reconstruction
  // failure the previous sites and state are restored before rethrowing.
  PassResult parallel_pass(const std::vector<ClassPrior>& priors, const ProjectionTable& proj,
                           const std::vector<Index>& batch, double rho);

  const PosteriorState& state() const { return state_; }
  const SiteTable& sites() const { return sites_; }
  const TiedFactor& tied() const { return tied_; }
  Mode mode() const { return mode_; }
  const Eigen::VectorXi& labels() const { return labels_; }
  int num_classes() const { return c_; }
  Index num_inducing() const { return m_; }
  std::int64_t n_factors() const { return n_factors_; }

  void set_sites(const SiteTable& s) { sites_ = s; }
  void set_tied(const TiedFactor& t) { tied_ = t; }

  // Inference-state footprint: posterior + site (or tied) storage.
  size_t state_bytes() const;

 private:
  std::optional<SiteCavity> cavity_from_blocks(Index i, int k, const SiteParams& site,
                                               const ProjectionTable& proj) const;

  Mode mode_;
  Eigen::VectorXi labels_;
  int c_;
  Index m_;
  std::int64_t n_factors_;
  SiteTable sites_;
  TiedFactor tied_;
  PosteriorState state_;
};

}  // namespace mgpc
