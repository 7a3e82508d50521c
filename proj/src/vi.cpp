#include "vi.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace mgpc {

std::pair<double, double> marginal_q(const Projection& p, const VectorXd& mean,
                                     const MatrixXd& cov) {
  const double mhat = p.upsilon.dot(mean);
  const double shat = p.s + p.upsilon.dot(cov * p.upsilon);
  if (!(shat > 0.0)) throw NumericError("marginal_q: non-positive variance");
  return {mhat, shat};
}

double expected_log_lik(const VectorXd& mhat, const VectorXd& shat, int y, double epsilon,
                        int quad_order) {
  if (epsilon <= 0.0 || epsilon >= 1.0) throw UsageError("expected_log_lik: epsilon in (0,1)");
  const int cnum = static_cast<int>(mhat.size());
  const double floor_term = epsilon / cnum;
  const auto& gh = gauss_hermite(quad_order);
  double total = 0.0;
  for (Index j = 0; j < gh.nodes.size(); ++j) {
    const double u = mhat[y] + std::sqrt(2.0 * shat[y]) * gh.nodes[j];
    double log_prod = 0.0;
    for (int k = 0; k < cnum; ++k) {
      if (k == y) continue;
      log_prod += norm_log_cdf((u - mhat[k]) / std::sqrt(shat[k]));
    }
    total += gh.weights[j] * std::log((1.0 - epsilon) * std::exp(log_prod) + floor_term);
  }
  total /= std::sqrt(M_PI);
  return std::clamp(total, std::log(floor_term), std::log(1.0 - epsilon + floor_term));
}

double kl_to_prior(const VariationalState& state, const std::vector<ClassPrior>& priors,
                   int cls) {
  const Index m = state.mean[cls].size();
  const MatrixXd s = state.cov(cls);
  const double trace_term = priors[cls].chol.solve(s).trace();
  const double quad_term = state.mean[cls].dot(priors[cls].solve(state.mean[cls]));
  double log_det_s = 0.0;
  for (Index i = 0; i < m; ++i) log_det_s += std::log(state.chol_lower[cls](i, i));
  log_det_s *= 2.0;
  const double kl =
      0.5 * (trace_term + quad_term - m - log_det_s + priors[cls].log_det);
  return std::max(0.0, kl);
}

namespace {

std::pair<VectorXd, VectorXd> marginals_at(const Dataset& data, const VariationalState& state,
                                           const ProjectionTable& proj,
                                           const std::vector<MatrixXd>& covs, Index i) {
  const int cnum = data.num_classes;
  VectorXd mhat(cnum), shat(cnum);
  for (int k = 0; k < cnum; ++k) {
    const Projection p = proj.get(i, k);
    mhat[k] = p.upsilon.dot(state.mean[k]);
    shat[k] = p.s + p.upsilon.dot(covs[k] * p.upsilon);
    if (!(shat[k] > 0.0)) throw NumericError("vi marginal: non-positive variance");
  }
  return {mhat, shat};
}

}  // namespace

double elbo(const Dataset& data, const VariationalState& state,
            const std::vector<ClassPrior>& priors, const ProjectionTable& proj, double epsilon,
            int quad_order) {
  std::vector<MatrixXd> covs;
  for (int c = 0; c < data.num_classes; ++c) covs.push_back(state.cov(c));
  std::vector<double> terms(data.rows());
  parallel_for(data.rows(), [&](Index i) {
    const auto [mhat, shat] = marginals_at(data, state, proj, covs, i);
    terms[i] = expected_log_lik(mhat, shat, data.y[i], epsilon, quad_order);
  });
  double total = 0.0;
  for (const double t : terms) total += t;
  for (int c = 0; c < data.num_classes; ++c) total -= kl_to_prior(state, priors, c);
  return total;
}

VectorXd elbo_grad(const Dataset& data, const VariationalState& state,
                   const std::vector<KernelHyper>& hypers, const std::vector<MatrixXd>& inducing,
                   const std::vector<ClassPrior>& priors, const ProjectionTable& proj,
                   const ViLayout& layout, double epsilon, int quad_order,
                   const std::vector<Index>& batch, double rho) {
  const int cnum = data.num_classes;
  const Index m = layout.num_inducing;
  const auto& gh = gauss_hermite(quad_order);
  const double floor_term = epsilon / cnum;

  std::vector<MatrixXd> covs;
  std::vector<VectorXd> g_m(cnum);       // K^-1 m_k
  std::vector<MatrixXd> kinv_s(cnum);    // K^-1 S_k
  for (int c = 0; c < cnum; ++c) {
    covs.push_back(state.cov(c));
    g_m[c] = priors[c].solve(state.mean[c]);
    kinv_s[c] = priors[c].chol.solve(covs[c]);
  }

  std::vector<VectorXd> grad_mean(cnum, VectorXd::Zero(m));
  std::vector<MatrixXd> grad_cov(cnum, MatrixXd::Zero(m, m));  // dE/dS, symmetric
  std::vector<Index> row_of(data.rows(), -1);
  for (size_t b = 0; b < batch.size(); ++b) row_of[batch[b]] = static_cast<Index>(b);
  MatrixXd xb(static_cast<Index>(batch.size()), data.cols());
  for (size_t b = 0; b < batch.size(); ++b) xb.row(static_cast<Index>(b)) = data.x.row(batch[b]);
  std::vector<GramWeights> weights(cnum);
  for (int c = 0; c < cnum; ++c) {
    weights[c] = GramWeights::zero(static_cast<Index>(batch.size()), m);
  }

  for (const Index i : batch) {
    const int y = data.y[i];
    const auto [mhat, shat] = marginals_at(data, state, proj, covs, i);
    // quadrature nodes over the true-class marginal
    VectorXd dm = VectorXd::Zero(cnum);  // dE/dmhat_k
    VectorXd ds = VectorXd::Zero(cnum);  // dE/dshat_k
    const double sqrt2s = std::sqrt(2.0 * shat[y]);
    for (Index j = 0; j < gh.nodes.size(); ++j) {
      const double u = mhat[y] + sqrt2s * gh.nodes[j];
      double log_prod = 0.0;
      for (int k = 0; k < cnum; ++k) {
        if (k == y) continue;
        log_prod += norm_log_cdf((u - mhat[k]) / std::sqrt(shat[k]));
      }
      const double prod = std::exp(log_prod);
      const double denom = (1.0 - epsilon) * prod + floor_term;
      const double wj = gh.weights[j] / std::sqrt(M_PI);
      // dL/du at this node, plus per-class direct terms
      double dprod_du = 0.0;
      for (int k = 0; k < cnum; ++k) {
        if (k == y) continue;
        const double sk = std::sqrt(shat[k]);
        const double z = (u - mhat[k]) / sk;
        const double hz = norm_hazard(z);
        dprod_du += hz / sk;
        const double common = wj * (1.0 - epsilon) * prod * hz / denom;
        dm[k] += common * (-1.0 / sk);
        ds[k] += common * (-z / (2.0 * shat[k]));
      }
      const double dl_du = (1.0 - epsilon) * prod * dprod_du / denom;
      dm[y] += wj * dl_du;
      ds[y] += wj * dl_du * gh.nodes[j] / sqrt2s;
    }

    for (int k = 0; k < cnum; ++k) {
      const Projection p = proj.get(i, k);
      grad_mean[k] += rho * dm[k] * p.upsilon;
      grad_cov[k] += rho * ds[k] * (p.upsilon * p.upsilon.transpose());
      const VectorXd g_v = kinv_s[k] * p.upsilon;
      accumulate_gram_weights(weights[k], row_of[i], p, g_m[k], g_v, rho * dm[k], rho * ds[k]);
    }
  }

  VectorXd grad = VectorXd::Zero(layout.size());
  for (int c = 0; c < cnum; ++c) {
    // KL contributions (exact regardless of the batch)
    grad_mean[c] -= g_m[c];
    const MatrixXd s_inv_half = state.chol_lower[c].triangularView<Eigen::Lower>().solve(
        MatrixXd::Identity(m, m));
    const MatrixXd s_inv = s_inv_half.transpose() * s_inv_half;
    grad_cov[c] -= 0.5 * (priors[c].k_inv - s_inv);

    // chain dS -> dL (grad_cov symmetric): dL = 2 * dS * L
    MatrixXd grad_l = 2.0 * grad_cov[c] * state.chol_lower[c];

    const Index vo = layout.var_offset(c);
    grad.segment(vo, m) = grad_mean[c];
    Index pos = vo + m;
    for (Index col = 0; col < m; ++col) {
      grad[pos++] = grad_l(col, col) * state.chol_lower[c](col, col);  // log-diagonal
      for (Index row = col + 1; row < m; ++row) grad[pos++] = grad_l(row, col);
    }

    // kernel/inducing block; KL's K-dependence mirrors the EP prior term
    const VectorXd kim = g_m[c];
    weights[c].w_inducing -=
        0.5 * (priors[c].k_inv - kinv_s[c] * priors[c].k_inv - kim * kim.transpose());
    const VectorXd block = chain_rule_reduce(xb, inducing[c], hypers[c], weights[c]);
    const Index d = layout.kernel.dim;
    grad.segment(layout.kernel_start() + layout.kernel.kernel_offset(c), d + 2) +=
        block.head(d + 2);
    grad.segment(layout.kernel_start() + layout.kernel.inducing_offset(c), m * d) +=
        block.tail(m * d);
  }
  return grad;
}

void apply_vi_delta(const VectorXd& delta, const ViLayout& layout, VariationalState& state,
                    std::vector<KernelHyper>& hypers, std::vector<MatrixXd>& inducing) {
  if (delta.size() != layout.size()) throw UsageError("apply_vi_delta: size mismatch");
  const Index m = layout.num_inducing;
  for (int c = 0; c < layout.num_classes; ++c) {
    const Index vo = layout.var_offset(c);
    state.mean[c] += delta.segment(vo, m);
    Index pos = vo + m;
    for (Index col = 0; col < m; ++col) {
      state.chol_lower[c](col, col) *= std::exp(delta[pos++]);
      for (Index row = col + 1; row < m; ++row) state.chol_lower[c](row, col) += delta[pos++];
    }
  }
  layout.kernel.apply_delta(delta.tail(layout.kernel.size()), hypers, inducing);
}

FitResult fit_vi(const Dataset& train, const TrainConfig& cfg, const Dataset* test,
                 const TraceSink& sink) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  FitResult result;
  Rng rng(cfg.seed);
  auto init = init_model_params(train, cfg, rng);
  std::vector<KernelHyper> hypers = std::move(init.hypers);
  std::vector<MatrixXd> inducing = std::move(init.inducing);

  ViLayout layout;
  layout.num_classes = train.num_classes;
  layout.num_inducing = cfg.num_inducing;
  layout.kernel = ParamLayout{train.num_classes, train.cols(), cfg.num_inducing, cfg.tied_hypers};

  std::vector<ClassPrior> priors;
  auto rebuild = [&] {
    priors.clear();
    for (int c = 0; c < train.num_classes; ++c) priors.push_back(build_prior(inducing[c], hypers[c]));
    return ProjectionTable::build_all(train.x, hypers, inducing, priors);
  };
  ProjectionTable proj = rebuild();

  // q starts at the prior: m = 0, S = K, so the KL term starts at zero.
  VariationalState state;
  for (int c = 0; c < train.num_classes; ++c) {
    state.mean.push_back(VectorXd::Zero(cfg.num_inducing));
    state.chol_lower.push_back(MatrixXd(priors[c].chol.matrixL()));
  }

  AdamState adam;
  auto seconds = [&] { return std::chrono::duration<double>(Clock::now() - t0).count(); };

  auto make_snapshot = [&] {
    ModelSnapshot s;
    s.mode = Mode::VI;
    s.num_classes = train.num_classes;
    s.dim = train.cols();
    s.num_inducing = cfg.num_inducing;
    s.tied_hypers = cfg.tied_hypers;
    s.hypers = hypers;
    s.inducing = inducing;
    for (int c = 0; c < train.num_classes; ++c) {
      s.post_mean.push_back(state.mean[c]);
      s.post_cov.push_back(symmetrize(state.cov(c)));
    }
    s.label_values = train.label_values;
    s.seed = cfg.seed;
    s.schedule = schedule_name(cfg.schedule);
    s.optimizer = "adam";
    return s;
  };

  auto emit = [&](Index iteration, double value, bool with_test) {
    TraceRecord rec;
    rec.iteration = iteration;
    rec.seconds = seconds();
    rec.log_zq = value;  // ELBO for the VI baseline
    if (test && with_test) {
      const Metrics metr = Predictor(make_snapshot()).evaluate(*test, cfg.quad_order);
      rec.has_test = true;
      rec.test_error = metr.error_rate;
      rec.test_nll = metr.mean_nll;
    }
    result.trace.push_back(rec);
    if (sink) sink(rec);
  };

  std::vector<Index> all(train.rows());
  std::iota(all.begin(), all.end(), Index{0});
  emit(0, elbo(train, state, priors, proj, cfg.vi_epsilon, cfg.quad_order), true);

  const bool minibatch = cfg.schedule == Schedule::Minibatch;
  Index step_count = 0;
  const Index epochs = cfg.iterations;
  for (Index epoch = 1; epoch <= epochs; ++epoch) {
    std::vector<std::vector<Index>> batches;
    if (minibatch) {
      std::vector<Index> perm = all;
      rng.shuffle(perm.begin(), perm.end());
      for (Index start = 0; start < train.rows(); start += cfg.batch_size) {
        const Index stop = std::min<Index>(train.rows(), start + cfg.batch_size);
        batches.emplace_back(perm.begin() + start, perm.begin() + stop);
      }
    } else {
      batches.push_back(all);
    }
    for (const auto& batch : batches) {
      const double rho = static_cast<double>(train.rows()) / batch.size();
      const VectorXd grad = elbo_grad(train, state, hypers, inducing, priors, proj, layout,
                                      cfg.vi_epsilon, cfg.quad_order, batch, rho);
      const VectorXd delta =
          adam_step(grad, adam, cfg.adam_alpha, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
      apply_vi_delta(delta, layout, state, hypers, inducing);
      proj = rebuild();
      ++step_count;
      const bool last_in_epoch = &batch == &batches.back();
      if (minibatch) {
        if (last_in_epoch) {
          emit(step_count, elbo(train, state, priors, proj, cfg.vi_epsilon, cfg.quad_order),
               true);
        }
      } else {
        emit(step_count, elbo(train, state, priors, proj, cfg.vi_epsilon, cfg.quad_order), true);
      }
    }
  }
  result.snapshot = make_snapshot();
  return result;
}

}  // namespace mgpc
