#include "trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "vi.hpp"

namespace mgpc {

std::string schedule_name(Schedule s) {
  switch (s) {
    case Schedule::Outer: return "outer";
    case Schedule::Inner: return "inner";
    case Schedule::Minibatch: return "minibatch";
  }
  return "?";
}

Schedule schedule_from_name(const std::string& s) {
  if (s == "outer") return Schedule::Outer;
  if (s == "inner") return Schedule::Inner;
  if (s == "minibatch") return Schedule::Minibatch;
  throw UsageError("unknown schedule '" + s + "' (expected outer|inner|minibatch)");
}

std::string optimizer_name(Optimizer o) {
  return o == Optimizer::Adaptive ? "adaptive" : "adam";
}

Optimizer optimizer_from_name(const std::string& s) {
  if (s == "adaptive") return Optimizer::Adaptive;
  if (s == "adam") return Optimizer::Adam;
  throw UsageError("unknown optimizer '" + s + "' (expected adaptive|adam)");
}

AdaptiveState init_adaptive(const ParamLayout& layout, double hyper_rate, double inducing_rate) {
  AdaptiveState st;
  st.rate = VectorXd::Constant(layout.size(), inducing_rate);
  st.prev_sign = VectorXd::Zero(layout.size());
  for (int c = 0; c < layout.num_classes; ++c) {
    st.rate.segment(layout.kernel_offset(c), layout.dim + 2).setConstant(hyper_rate);
  }
  return st;
}

VectorXd adaptive_rate_step(const VectorXd& grad, AdaptiveState& st) {
  if (grad.size() != st.rate.size()) throw UsageError("adaptive_rate_step: size mismatch");
  for (Index j = 0; j < grad.size(); ++j) {
    const double sign = grad[j] > 0 ? 1.0 : (grad[j] < 0 ? -1.0 : st.prev_sign[j]);
    if (st.prev_sign[j] != 0.0 && sign != 0.0 && sign != st.prev_sign[j]) {
      st.rate[j] *= 0.5;
    } else {
      st.rate[j] *= 1.02;
    }
    st.prev_sign[j] = sign;
  }
  return st.rate.cwiseProduct(grad);
}

VectorXd adam_step(const VectorXd& grad, AdamState& st, double alpha, double beta1, double beta2,
                   double eps) {
  if (st.t == 0) {
    st.m = VectorXd::Zero(grad.size());
    st.v = VectorXd::Zero(grad.size());
  }
  ++st.t;
  st.m = beta1 * st.m + (1.0 - beta1) * grad;
  st.v = beta2 * st.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  const VectorXd mhat = st.m / bc1;
  const VectorXd vhat = st.v / bc2;
  return (alpha * mhat.array() / (vhat.array().sqrt() + eps)).matrix();
}

namespace {

using Clock = std::chrono::steady_clock;

struct Ctx {
  const Dataset& train;
  const TrainConfig& cfg;
  std::vector<KernelHyper> hypers;
  std::vector<MatrixXd> inducing;
  std::vector<ClassPrior> priors;
  ProjectionTable proj;
  EpEngine eng;
  ParamLayout layout;
  Rng rng;
  Clock::time_point t0;
  FitResult result;
  double damping;

  Ctx(const Dataset& train_, const TrainConfig& cfg_)
      : train(train_),
        cfg(cfg_),
        eng(cfg_.mode, train_.y, train_.num_classes, cfg_.num_inducing),
        rng(cfg_.seed),
        t0(Clock::now()),
        damping(cfg_.effective_damping()) {}

  double seconds() const {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  }
  std::vector<Index> all_rows() const {
    std::vector<Index> v(train.rows());
    std::iota(v.begin(), v.end(), Index{0});
    return v;
  }
  bool full_projections() const {
    return !(cfg.mode == Mode::SEP && cfg.schedule == Schedule::Minibatch);
  }

  void rebuild_geometry(const std::vector<Index>* batch = nullptr) {
    priors.clear();
    for (int c = 0; c < train.num_classes; ++c) {
      priors.push_back(build_prior(inducing[c], hypers[c]));
    }
    if (full_projections()) {
      proj = ProjectionTable::build_all(train.x, hypers, inducing, priors);
    } else if (batch) {
      proj = ProjectionTable::build(train.x, *batch, hypers, inducing, priors);
    }
  }

  // One pass with the spec's failure policy: halve damping and retry.
  PassResult guarded_pass(const std::vector<Index>& batch) {
    double rho = damping;
    for (int attempt = 0; attempt < 6; ++attempt) {
      try {
        return eng.parallel_pass(priors, proj, batch, rho);
      } catch (const NumericError& e) {
        rho *= 0.5;
        result.warnings.push_back(std::string("pass failed (") + e.what() +
                                  "), retrying at damping " + std::to_string(rho));
      }
    }
    result.warnings.push_back("pass skipped after repeated reconstruction failures");
    return {};
  }

  // EP until convergence (warm start from the current sites).
  bool converge_ep() {
    const auto rows = all_rows();
    for (int p = 0; p < cfg.max_ep_passes; ++p) {
      if (guarded_pass(rows).max_delta < cfg.ep_tol) return true;
    }
    return false;
  }

  // Backtracking hyper update: shrink the step until geometry and posterior
  // stay positive definite.
  void apply_step(VectorXd delta, const std::vector<Index>* batch = nullptr) {
    const auto hypers_backup = hypers;
    const auto inducing_backup = inducing;
    for (int attempt = 0; attempt < 20; ++attempt) {
      try {
        layout.apply_delta(delta, hypers, inducing);
        rebuild_geometry(batch);
        eng.reconstruct(priors, proj);
        return;
      } catch (const NumericError& e) {
        hypers = hypers_backup;
        inducing = inducing_backup;
        delta *= 0.5;
        if (attempt == 19) {
          rebuild_geometry(batch);
          eng.reconstruct(priors, proj);
          result.warnings.push_back(std::string("hyper step rejected: ") + e.what());
        }
      }
    }
  }

  void emit(Index iteration, double logzq, const Dataset* test, const TraceSink& sink,
            bool with_test) {
    TraceRecord rec;
    rec.iteration = iteration;
    rec.seconds = seconds();
    rec.log_zq = logzq;
    if (test && with_test) {
      const Predictor pred(make_snapshot());
      const Metrics m = pred.evaluate(*test, cfg.quad_order);
      rec.has_test = true;
      rec.test_error = m.error_rate;
      rec.test_nll = m.mean_nll;
    }
    result.trace.push_back(rec);
    if (sink) sink(rec);
  }

  ModelSnapshot make_snapshot() const {
    ModelSnapshot s;
    s.mode = cfg.mode;
    s.num_classes = train.num_classes;
    s.dim = train.cols();
    s.num_inducing = cfg.num_inducing;
    s.tied_hypers = cfg.tied_hypers;
    s.hypers = hypers;
    s.inducing = inducing;
    for (int c = 0; c < train.num_classes; ++c) {
      s.post_mean.push_back(eng.state().comp[c].mean);
      s.post_cov.push_back(eng.state().comp[c].cov);
    }
    if (cfg.mode == Mode::EP) {
      const auto& st = eng.sites();
      s.site_state.reserve(static_cast<size_t>(st.rows()) * st.classes() * 5);
      for (Index i = 0; i < st.rows(); ++i) {
        for (int k = 0; k < st.classes(); ++k) {
          const auto& sp = st.at(i, k);
          s.site_state.insert(s.site_state.end(), {sp.c1_y, sp.c2_y, sp.c1_k, sp.c2_k, sp.log_s});
        }
      }
    } else {
      s.tied_prec = eng.tied().prec;
      s.tied_shift = eng.tied().shift;
      s.tied_n_factors = eng.tied().n_factors;
    }
    s.label_values = train.label_values;
    s.seed = cfg.seed;
    s.schedule = schedule_name(cfg.schedule);
    s.optimizer = optimizer_name(cfg.optimizer);
    return s;
  }
};

VectorXd take_step(const VectorXd& grad, const TrainConfig& cfg, AdaptiveState& ad,
                   AdamState& adam) {
  if (cfg.optimizer == Optimizer::Adaptive) return adaptive_rate_step(grad, ad);
  return adam_step(grad, adam, cfg.adam_alpha, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
}

void init_model(Ctx& ctx) {
  auto init = init_model_params(ctx.train, ctx.cfg, ctx.rng);
  ctx.hypers = std::move(init.hypers);
  ctx.inducing = std::move(init.inducing);
  ctx.layout = ParamLayout{ctx.train.num_classes, ctx.train.cols(), ctx.cfg.num_inducing,
                           ctx.cfg.tied_hypers};
  ctx.rebuild_geometry();
  ctx.eng.init_state(ctx.priors);
}

FitResult fit_batch(Ctx& ctx, const Dataset* test, const TraceSink& sink) {
  const bool outer = ctx.cfg.schedule == Schedule::Outer;
  AdaptiveState ad = init_adaptive(ctx.layout);
  AdamState adam;

  if (outer) {
    // every gradient is taken at an EP fixed point
    if (!ctx.converge_ep()) {
      ctx.result.warnings.push_back("EP did not converge at the initial hyper-parameters");
    }
  }
  ctx.emit(0, log_zq(ctx.eng, ctx.priors, ctx.proj), test, sink, true);

  for (Index it = 1; it <= ctx.cfg.iterations; ++it) {
    if (!outer) ctx.guarded_pass(ctx.all_rows());
    const VectorXd grad = grad_log_zq(ctx.train.x, ctx.eng, ctx.priors, ctx.proj, ctx.hypers,
                                      ctx.inducing, ctx.layout);
    ctx.apply_step(take_step(grad, ctx.cfg, ad, adam));
    if (outer) {
      if (!ctx.converge_ep()) {
        ctx.result.warnings.push_back("EP not converged at iteration " + std::to_string(it));
      }
    }
    ctx.emit(it, log_zq(ctx.eng, ctx.priors, ctx.proj), test, sink, true);
  }
  ctx.result.snapshot = ctx.make_snapshot();
  return std::move(ctx.result);
}

FitResult fit_minibatch(Ctx& ctx, const Dataset* test, const TraceSink& sink) {
  AdaptiveState ad = init_adaptive(ctx.layout);
  AdamState adam;
  const Index n = ctx.train.rows();
  Index step_count = 0;
  ctx.emit(0, 0.0, test, sink, false);  // q starts at the prior

  for (Index epoch = 1; epoch <= ctx.cfg.iterations; ++epoch) {
    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    ctx.rng.shuffle(perm.begin(), perm.end());

    for (Index start = 0; start < n; start += ctx.cfg.batch_size) {
      const Index stop = std::min<Index>(n, start + ctx.cfg.batch_size);
      std::vector<Index> batch(perm.begin() + start, perm.begin() + stop);
      if (!ctx.full_projections()) {
        ctx.proj = ProjectionTable::build(ctx.train.x, batch, ctx.hypers, ctx.inducing,
                                          ctx.priors);
      }
      ctx.guarded_pass(batch);
      const VectorXd grad = stochastic_grad(ctx.train.x, ctx.eng, ctx.priors, ctx.proj,
                                            ctx.hypers, ctx.inducing, ctx.layout, batch);
      ctx.apply_step(take_step(grad, ctx.cfg, ad, adam), &batch);
      ++step_count;
      const bool epoch_end = stop == n;
      double estimate;
      if (epoch_end) {
        // exact value on the epoch boundary; mid-epoch rows carry the cheap
        // minibatch estimate
        if (ctx.full_projections()) {
          estimate = log_zq(ctx.eng, ctx.priors, ctx.proj);
        } else {
          const auto full =
              ProjectionTable::build_all(ctx.train.x, ctx.hypers, ctx.inducing, ctx.priors);
          estimate = log_zq(ctx.eng, ctx.priors, full);
        }
      } else {
        estimate = log_zq_batch(ctx.eng, ctx.priors, ctx.proj, batch);
      }
      ctx.emit(step_count, estimate, test, sink, epoch_end);
    }
  }
  ctx.result.snapshot = ctx.make_snapshot();
  return std::move(ctx.result);
}

}  // namespace

InitParams init_model_params(const Dataset& train, const TrainConfig& cfg, Rng& rng) {
  train.validate();
  if (cfg.num_inducing < 1 || cfg.num_inducing > train.rows()) {
    throw UsageError("num_inducing must be in [1, N]; got " +
                     std::to_string(cfg.num_inducing) + " with N = " +
                     std::to_string(train.rows()));
  }
  if (cfg.schedule == Schedule::Minibatch &&
      (cfg.batch_size < 1 || cfg.batch_size > train.rows())) {
    throw UsageError("batch_size must be in [1, N]");
  }
  if (cfg.iterations < 0) throw UsageError("iterations must be >= 0");

  InitParams out;
  if (cfg.init_hypers) {
    if (static_cast<int>(cfg.init_hypers->size()) != train.num_classes) {
      throw UsageError("init_hypers must supply one entry per class");
    }
    out.hypers = *cfg.init_hypers;
  } else {
    const KernelHyper h0 = init_hyper(train.x, rng);
    out.hypers.assign(train.num_classes, h0);
  }
  if (cfg.init_inducing) {
    if (static_cast<int>(cfg.init_inducing->size()) != train.num_classes) {
      throw UsageError("init_inducing must supply one entry per class");
    }
    out.inducing = *cfg.init_inducing;
  } else {
    for (int c = 0; c < train.num_classes; ++c) {
      std::vector<Index> perm(train.rows());
      std::iota(perm.begin(), perm.end(), Index{0});
      rng.shuffle(perm.begin(), perm.end());
      MatrixXd xb(cfg.num_inducing, train.cols());
      for (Index j = 0; j < cfg.num_inducing; ++j) xb.row(j) = train.x.row(perm[j]);
      out.inducing.push_back(xb);
    }
  }
  return out;
}

FitResult fit(const Dataset& train, const TrainConfig& cfg, const Dataset* test,
              const TraceSink& sink) {
  if (cfg.mode == Mode::VI) return fit_vi(train, cfg, test, sink);
  Ctx ctx(train, cfg);
  init_model(ctx);
  if (cfg.schedule == Schedule::Minibatch) return fit_minibatch(ctx, test, sink);
  return fit_batch(ctx, test, sink);
}

}  // namespace mgpc
