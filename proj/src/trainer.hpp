#pragma once

#include <functional>
#include <optional>
#include <string>

#include "objective.hpp"
#include "predict.hpp"

namespace mgpc {

enum class Schedule { Outer, Inner, Minibatch };
enum class Optimizer { Adaptive, Adam };

std::string schedule_name(Schedule s);
Schedule schedule_from_name(const std::string& s);
std::string optimizer_name(Optimizer o);
Optimizer optimizer_from_name(const std::string& s);

struct TrainConfig {
  Mode mode = Mode::EP;
  Schedule schedule = Schedule::Inner;
  Index num_inducing = 10;
  Index batch_size = 200;
  // Hyper-parameter updates for batch schedules, epochs for minibatch.
  Index iterations = 250;
  double damping = -1.0;  // <0 picks the schedule default: 0.5 batch, 1.0 minibatch
  Optimizer optimizer = Optimizer::Adaptive;
  double adam_alpha = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool tied_hypers = true;
  double ep_tol = 1e-6;
  int max_ep_passes = 200;
  int quad_order = 64;
  double vi_epsilon = 1e-3;
  std::optional<std::vector<KernelHyper>> init_hypers;
  std::optional<std::vector<MatrixXd>> init_inducing;

  double effective_damping() const {
    if (damping >= 0.0) return damping;
    return schedule == Schedule::Minibatch ? 1.0 : 0.5;
  }
};

struct TraceRecord {
  Index iteration = 0;
  double seconds = 0.0;
  double log_zq = 0.0;
  bool has_test = false;
  double test_error = 0.0;
  double test_nll = 0.0;
};

using TraceSink = std::function<void(const TraceRecord&)>;

struct FitResult {
  ModelSnapshot snapshot;
  std::vector<TraceRecord> trace;
  std::vector<std::string> warnings;
};

FitResult fit(const Dataset& train, const TrainConfig& cfg, const Dataset* test = nullptr,
              const TraceSink& sink = nullptr);

// ---- step-size control --------------------------------------------------

// Per-parameter rate: x1.02 while the gradient sign holds, x0.5 on a flip;
// a zero gradient counts as unchanged. Step is rate * grad (ascent).
struct AdaptiveState {
  VectorXd rate;
  VectorXd prev_sign;
};
AdaptiveState init_adaptive(const ParamLayout& layout, double hyper_rate = 1e-2,
                            double inducing_rate = 1e-3);
VectorXd adaptive_rate_step(const VectorXd& grad, AdaptiveState& st);

struct AdamState {
  VectorXd m;
  VectorXd v;
  Index t = 0;
};
VectorXd adam_step(const VectorXd& grad, AdamState& st, double alpha, double beta1, double beta2,
                   double eps);

// Shared model initialization: median-heuristic hypers (or overrides) and a
// random training subset per class as inducing points.
struct InitParams {
  std::vector<KernelHyper> hypers;
  std::vector<MatrixXd> inducing;
};
InitParams init_model_params(const Dataset& train, const TrainConfig& cfg, Rng& rng);

}  // namespace mgpc
