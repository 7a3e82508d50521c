#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mgpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Index = Eigen::Index;

// Error taxonomy shared with the C API: usage (bad arguments), data
// (malformed inputs), numeric (PD failures and friends).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class UsageError : public Error {
 public:
  using Error::Error;
};
class DataError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};

// ---- stable standard-normal helpers ------------------------------------

double norm_pdf(double z);
double norm_cdf(double z);
// log Phi(z); asymptotic tail expansion below z = -10.
double norm_log_cdf(double z);
// N(z|0,1) / Phi(z), stable in the far left tail.
double norm_hazard(double z);

// ---- Gauss-Hermite nodes -------------------------------------------------

// Nodes/weights for integral of exp(-t^2) f(t) dt; Golub-Welsch, cached per order.
struct GaussHermite {
  VectorXd nodes;
  VectorXd weights;  // sum = sqrt(pi)
};
const GaussHermite& gauss_hermite(int order);

// E_{N(mean,var)}[f] via a GH rule: sum_j w_j/sqrt(pi) * f(mean + sqrt(2 var) t_j).

// ---- RNG -----------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  double normal(double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<double>(mean, sd)(gen_);
  }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(gen_);
  }
  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, gen_);
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

// ---- deterministic parallel map -------------------------------------------

// Runs fn(i) for i in [0, n) across MGPC_NUM_THREADS threads (default 1).
// Results must be written to per-index slots by the caller; any reduction
// over them afterwards is serial, so output is independent of thread count.
void parallel_for(Index n, const std::function<void(Index)>& fn);
int thread_count();

std::string format_dims(Index r, Index c);

}  // namespace mgpc
