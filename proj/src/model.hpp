#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data.hpp"
#include "kernel.hpp"

namespace mgpc {

enum class Mode { EP, SEP, VI };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& s);

// Everything needed to reproduce predictions, serializable via snapshot_io.
struct ModelSnapshot {
  int schema_version = 1;
  Mode mode = Mode::EP;
  int num_classes = 0;
  Index dim = 0;
  Index num_inducing = 0;
  bool tied_hypers = true;

  std::vector<KernelHyper> hypers;    // per class
  std::vector<MatrixXd> inducing;    // per class, M x D
  std::vector<VectorXd> post_mean;   // per class, M
  std::vector<MatrixXd> post_cov;    // per class, M x M

  // EP site state (flattened N x C, 5 doubles each) or SEP tied factor,
  // kept so training can resume from a snapshot.
  std::vector<double> site_state;
  std::vector<MatrixXd> tied_prec;
  std::vector<VectorXd> tied_shift;
  std::int64_t tied_n_factors = 0;

  bool standardized = false;
  Standardizer standardizer;
  std::vector<double> label_values;

  std::uint64_t seed = 0;
  std::string schedule;
  std::string optimizer;
};

}  // namespace mgpc
