#include "oracles.hpp"

#include <cmath>
#include <numeric>

#include "objective.hpp"

namespace mgpc::oracles {

McMoments mc_tilted_moments(double a_y, double q_y, double a_k, double q_k, double s_y,
                            double s_k, Index samples, std::uint64_t seed) {
  if (samples < 10000) throw UsageError("mc_tilted_moments: need at least 1e4 samples");
  Rng rng(seed);
  const double denom = std::sqrt(s_y + s_k);
  std::vector<double> u(samples), w(samples), t(samples);
  for (Index i = 0; i < samples; ++i) {
    u[i] = rng.normal(a_y, std::sqrt(q_y));
    w[i] = rng.normal(a_k, std::sqrt(q_k));
    t[i] = norm_cdf((u[i] - w[i]) / denom);
  }
  McMoments out;
  const double n = static_cast<double>(samples);
  double sum_t = 0.0;
  for (Index i = 0; i < samples; ++i) sum_t += t[i];
  out.z = sum_t / n;
  double var_t = 0.0;
  for (Index i = 0; i < samples; ++i) var_t += (t[i] - out.z) * (t[i] - out.z);
  out.z_se = std::sqrt(var_t / (n - 1) / n);

  auto tilted = [&](const std::vector<double>& x, double& mean, double& mean_se, double& var,
                    double& var_se) {
    double sum_tx = 0.0;
    for (Index i = 0; i < samples; ++i) sum_tx += t[i] * x[i];
    mean = sum_tx / sum_t;
    double sum_tv = 0.0, if_mean = 0.0, if_var = 0.0;
    for (Index i = 0; i < samples; ++i) sum_tv += t[i] * (x[i] - mean) * (x[i] - mean);
    var = sum_tv / sum_t;
    for (Index i = 0; i < samples; ++i) {
      const double fm = t[i] * (x[i] - mean) / out.z;
      const double fv = t[i] * ((x[i] - mean) * (x[i] - mean) - var) / out.z;
      if_mean += fm * fm;
      if_var += fv * fv;
    }
    mean_se = std::sqrt(if_mean / (n - 1) / n);
    var_se = std::sqrt(if_var / (n - 1) / n);
  };
  tilted(u, out.mean_y, out.mean_y_se, out.var_y, out.var_y_se);
  tilted(w, out.mean_k, out.mean_k_se, out.var_k, out.var_k_se);
  return out;
}

double exact_factor_quadrature(const VectorXd& means, const VectorXd& vars, int y, int order) {
  const int cnum = static_cast<int>(means.size());
  for (int k = 0; k < cnum; ++k) {
    if (!(vars[k] > 0)) throw UsageError("exact_factor_quadrature: variances must be positive");
  }
  const auto& gh = gauss_hermite(order);
  double total = 0.0;
  for (Index j = 0; j < gh.nodes.size(); ++j) {
    const double u = means[y] + std::sqrt(2.0 * vars[y]) * gh.nodes[j];
    double log_prod = 0.0;
    for (int k = 0; k < cnum; ++k) {
      if (k == y) continue;
      log_prod += norm_log_cdf((u - means[k]) / std::sqrt(vars[k]));
    }
    total += gh.weights[j] * std::exp(log_prod);
  }
  total /= std::sqrt(M_PI);
  return std::clamp(total, 0.0, 1.0);
}

double product_probit_approx(const VectorXd& means, const VectorXd& vars, int y) {
  double log_prod = 0.0;
  for (int k = 0; k < static_cast<int>(means.size()); ++k) {
    if (k == y) continue;
    log_prod += norm_log_cdf((means[y] - means[k]) / std::sqrt(vars[y] + vars[k]));
  }
  return std::exp(log_prod);
}

std::vector<MomentGaussian> dense_posterior(const Eigen::VectorXi& labels, int num_classes,
                                            const SiteTable& sites,
                                            const std::vector<ClassPrior>& priors,
                                            const ProjectionTable& proj) {
  std::vector<MomentGaussian> out(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const Index m = priors[c].dim();
    MatrixXd prec = priors[c].k.inverse();
    VectorXd shift = VectorXd::Zero(m);
    for (Index i = 0; i < labels.size(); ++i) {
      const int yi = labels[i];
      for (int k = 0; k < num_classes; ++k) {
        if (k == yi) continue;
        const auto& s = sites.at(i, k);
        if (c == yi) {
          const VectorXd u = proj.upsilon(i, yi);
          prec += s.c1_y * u * u.transpose();
          shift += s.c2_y * u;
        } else if (c == k) {
          const VectorXd u = proj.upsilon(i, k);
          prec += s.c1_k * u * u.transpose();
          shift += s.c2_k * u;
        }
      }
    }
    out[c].cov = prec.inverse();
    out[c].mean = out[c].cov * shift;
  }
  return out;
}

VectorXd finite_diff(const std::function<double(const VectorXd&)>& fn, const VectorXd& at,
                     const VectorXd& steps) {
  VectorXd grad(at.size());
  for (Index j = 0; j < at.size(); ++j) {
    VectorXd up = at, down = at;
    up[j] += steps[j];
    down[j] -= steps[j];
    grad[j] = (fn(up) - fn(down)) / (2.0 * steps[j]);
  }
  return grad;
}

namespace {

struct CheckProblem {
  Dataset data;
  std::vector<KernelHyper> hypers;
  std::vector<MatrixXd> inducing;
  std::vector<ClassPrior> priors;
  ProjectionTable proj;
  EpEngine eng{Mode::EP, Eigen::VectorXi::Zero(1), 2, 1};

  void rebuild() {
    priors.clear();
    for (size_t c = 0; c < hypers.size(); ++c) {
      priors.push_back(build_prior(inducing[c], hypers[c]));
    }
    proj = ProjectionTable::build_all(data.x, hypers, inducing, priors);
  }
  std::vector<Index> all() const {
    std::vector<Index> v(data.rows());
    std::iota(v.begin(), v.end(), Index{0});
    return v;
  }
  double converge(double tol, int max_passes) {
    double delta = 1.0;
    for (int p = 0; p < max_passes && delta > tol; ++p) {
      delta = eng.parallel_pass(priors, proj, all(), 0.8).max_delta;
    }
    return delta;
  }
};

CheckProblem make_check_problem(Index n, int c, Index m, std::uint64_t seed) {
  CheckProblem pr;
  Rng rng(seed);
  pr.data.x.resize(n, 2);
  for (Index i = 0; i < n; ++i) {
    pr.data.x(i, 0) = rng.uniform(-2.0, 2.0);
    pr.data.x(i, 1) = rng.uniform(-2.0, 2.0);
  }
  pr.data.y.resize(n);
  for (Index i = 0; i < n; ++i) pr.data.y[i] = static_cast<int>(rng.uniform_int(0, c - 1));
  pr.data.num_classes = c;
  for (int k = 0; k < c; ++k) {
    KernelHyper h;
    h.log_lengthscale = VectorXd::Zero(2);
    h.log_amplitude = 0.0;
    h.log_noise = std::log(0.2);
    pr.hypers.push_back(h);
    MatrixXd xb = pr.data.x.topRows(m);
    xb.array() += 0.05 * (k + 1);
    pr.inducing.push_back(xb);
  }
  pr.rebuild();
  pr.eng = EpEngine(Mode::EP, pr.data.y, c, m);
  pr.eng.init_state(pr.priors);
  return pr;
}

OracleReport gradient_check(bool quick, double perturbation, std::uint64_t seed) {
  CheckProblem pr = make_check_problem(quick ? 16 : 30, 3, quick ? 4 : 8, seed + 1);
  pr.converge(1e-12, 600);
  const ParamLayout layout{3, 2, pr.inducing[0].rows(), false};
  VectorXd grad = grad_log_zq(pr.data.x, pr.eng, pr.priors, pr.proj, pr.hypers, pr.inducing,
                              layout);
  grad *= (1.0 + perturbation);

  auto eval_at = [&](const VectorXd& delta) {
    CheckProblem work = pr;
    layout.apply_delta(delta, work.hypers, work.inducing);
    work.rebuild();
    work.eng.reconstruct(work.priors, work.proj);
    work.converge(1e-13, 400);
    return log_zq(work.eng, work.priors, work.proj);
  };

  const Index stride = quick ? 7 : 3;  // spot-check a deterministic coordinate subset
  int good = 0, total = 0;
  double worst = 0.0;
  for (Index j = 0; j < layout.size(); j += stride) {
    const Index block = j % (layout.size() / 3);
    const bool is_inducing = block >= 4;
    const double step = is_inducing ? 1e-4 : 1e-5;
    VectorXd delta = VectorXd::Zero(layout.size());
    delta[j] = step;
    const double up = eval_at(delta);
    delta[j] = -step;
    const double down = eval_at(delta);
    const double fd = (up - down) / (2 * step);
    const double rel = std::abs(grad[j] - fd) / std::max(1e-6, std::abs(fd));
    worst = std::max(worst, rel);
    if (rel < 1e-3) ++good;
    ++total;
  }
  OracleReport rep;
  rep.name = "gradient_vs_finite_differences";
  rep.value = static_cast<double>(good) / total;
  rep.threshold = 0.95;
  rep.pass = rep.value >= rep.threshold && worst <= 1e-2;
  rep.detail = std::to_string(good) + "/" + std::to_string(total) +
               " coords within 1e-3, worst rel err " + std::to_string(worst);
  return rep;
}

OracleReport tilted_mc_check(bool quick, std::uint64_t seed) {
  Rng rng(seed + 2);
  const int configs = quick ? 4 : 12;
  const Index samples = quick ? 100000 : 1000000;
  int failures = 0;
  double worst_sigma = 0.0;
  for (int rep = 0; rep < configs; ++rep) {
    const double a_y = rng.normal(0, 1), a_k = rng.normal(0, 1);
    const double q_y = rng.uniform(0.2, 2.0), q_k = rng.uniform(0.2, 2.0);
    const double s_y = rng.uniform(0.05, 1.0), s_k = rng.uniform(0.05, 1.0);
    const McMoments mc = mc_tilted_moments(a_y, q_y, a_k, q_k, s_y, s_k, samples, seed + rep);
    const double big_b = s_y + s_k + q_y + q_k;
    const double alpha = (a_y - a_k) / std::sqrt(big_b);
    const double beta = norm_hazard(alpha);
    const double gamma = beta * (beta + alpha) / big_b;
    const double z = norm_cdf(alpha);
    const double m_y = a_y + q_y * beta / std::sqrt(big_b);
    const double v_y = q_y - q_y * q_y * gamma;
    const double m_k = a_k - q_k * beta / std::sqrt(big_b);
    const double v_k = q_k - q_k * q_k * gamma;
    const double checks[5][3] = {{z, mc.z, mc.z_se},
                                 {m_y, mc.mean_y, mc.mean_y_se},
                                 {v_y, mc.var_y, mc.var_y_se},
                                 {m_k, mc.mean_k, mc.mean_k_se},
                                 {v_k, mc.var_k, mc.var_k_se}};
    for (const auto& chk : checks) {
      const double sig = std::abs(chk[0] - chk[1]) / std::max(1e-12, chk[2]);
      worst_sigma = std::max(worst_sigma, sig);
      if (sig > 4.0) ++failures;
    }
    if (mc.var_y >= q_y || mc.var_k >= q_k) ++failures;  // truncation must shrink variance
  }
  OracleReport rep;
  rep.name = "tilted_moments_vs_monte_carlo";
  rep.value = worst_sigma;
  rep.threshold = 4.0;
  rep.pass = failures == 0;
  rep.detail = std::to_string(configs) + " configs, worst deviation " +
               std::to_string(worst_sigma) + " standard errors";
  return rep;
}

OracleReport factor_inequality_check(bool quick, std::uint64_t seed) {
  Rng rng(seed + 3);
  const int configs = quick ? 200 : 1000;
  int violations = 0;
  double worst_gap = 0.0, c2_err = 0.0;
  for (int rep = 0; rep < configs; ++rep) {
    const int cnum = 3 + static_cast<int>(rng.uniform_int(0, 2));
    VectorXd means(cnum), vars(cnum);
    for (int k = 0; k < cnum; ++k) {
      means[k] = rng.normal(0, 1.5);
      vars[k] = rng.uniform(0.1, 2.0);
    }
    const int y = static_cast<int>(rng.uniform_int(0, cnum - 1));
    const double exact = exact_factor_quadrature(means, vars, y);
    const double approx = product_probit_approx(means, vars, y);
    if (exact < approx - 1e-9) ++violations;
    worst_gap = std::min(worst_gap, exact - approx);

    VectorXd m2(2), v2(2);
    m2 << means[0], means[1];
    v2 << vars[0], vars[1];
    c2_err = std::max(c2_err, std::abs(exact_factor_quadrature(m2, v2, 0) -
                                       product_probit_approx(m2, v2, 0)));
  }
  OracleReport rep;
  rep.name = "exact_factor_vs_probit_product";
  rep.value = static_cast<double>(violations);
  rep.threshold = 0.0;
  rep.pass = violations == 0 && c2_err < 1e-10;
  rep.detail = "C=2 max gap " + std::to_string(c2_err) + ", inequality violations " +
               std::to_string(violations) + "/" + std::to_string(configs);
  return rep;
}

OracleReport dense_posterior_check(std::uint64_t seed) {
  Rng rng(seed + 4);
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    CheckProblem pr = make_check_problem(8, 3, 4, seed + 10 + rep);
    SiteTable sites(8, 3);
    for (Index i = 0; i < 8; ++i) {
      for (int k = 0; k < 3; ++k) {
        if (k == pr.data.y[i]) continue;
        sites.at(i, k) = {rng.uniform(0.0, 0.6), rng.normal(0.0, 0.4), rng.uniform(0.0, 0.6),
                          rng.normal(0.0, 0.4), 0.0};
      }
    }
    pr.eng.set_sites(sites);
    pr.eng.reconstruct(pr.priors, pr.proj);
    const auto dense = dense_posterior(pr.data.y, 3, sites, pr.priors, pr.proj);
    for (int c = 0; c < 3; ++c) {
      const double cov_err = (pr.eng.state().comp[c].cov - dense[c].cov).cwiseAbs().maxCoeff() /
                             dense[c].cov.cwiseAbs().maxCoeff();
      const double mean_err = (pr.eng.state().comp[c].mean - dense[c].mean).cwiseAbs().maxCoeff() /
                              std::max(1e-12, dense[c].mean.cwiseAbs().maxCoeff());
      worst = std::max({worst, cov_err, mean_err});
    }
  }
  OracleReport rep;
  rep.name = "posterior_vs_dense_summation";
  rep.value = worst;
  rep.threshold = 1e-7;
  rep.pass = worst <= rep.threshold;
  rep.detail = "worst relative error " + std::to_string(worst);
  return rep;
}

}  // namespace

std::vector<OracleReport> run_checks(bool quick, double gradient_perturbation,
                                     std::uint64_t seed) {
  std::vector<OracleReport> out;
  out.push_back(gradient_check(quick, gradient_perturbation, seed));
  out.push_back(tilted_mc_check(quick, seed));
  out.push_back(factor_inequality_check(quick, seed));
  out.push_back(dense_posterior_check(seed));
  return out;
}

}  // namespace mgpc::oracles
