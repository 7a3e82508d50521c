#include "common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <thread>

namespace mgpc {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454836;
constexpr double kTailSwitch = -10.0;
}  // namespace

double norm_pdf(double z) { return std::exp(-0.5 * z * z - 0.5 * kLogTwoPi); }

double norm_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

// 5-term Mills-ratio series: Phi(z) ~ phi(z)/(-z) (1 - 1/z^2 + 3/z^4 - ...)
static double tail_series(double z) {
  const double zi2 = 1.0 / (z * z);
  return 1.0 + zi2 * (-1.0 + zi2 * (3.0 + zi2 * (-15.0 + zi2 * 105.0)));
}

double norm_log_cdf(double z) {
  if (z > kTailSwitch) {
    return std::log(0.5 * std::erfc(-z * M_SQRT1_2));
  }
  return -0.5 * z * z - 0.5 * kLogTwoPi - std::log(-z) + std::log(tail_series(z));
}

double norm_hazard(double z) {
  if (z > kTailSwitch) {
    return norm_pdf(z) / norm_cdf(z);
  }
  return -z / tail_series(z);
}

const GaussHermite& gauss_hermite(int order) {
  if (order < 2) throw UsageError("gauss_hermite: order must be >= 2");
  static std::map<int, GaussHermite> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(order);
  if (it != cache.end()) return it->second;

  // Golub-Welsch on the Hermite Jacobi matrix: off-diagonal sqrt(i/2).
  MatrixXd jacobi = MatrixXd::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    const double b = std::sqrt(i / 2.0);
    jacobi(i, i - 1) = b;
    jacobi(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(jacobi);
  GaussHermite gh;
  gh.nodes = es.eigenvalues();
  gh.weights.resize(order);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int i = 0; i < order; ++i) {
    const double v0 = es.eigenvectors()(0, i);
    gh.weights[i] = sqrt_pi * v0 * v0;
  }
  return cache.emplace(order, std::move(gh)).first->second;
}

int thread_count() {
  static int n = [] {
    const char* env = std::getenv("MGPC_NUM_THREADS");
    if (!env) return 1;
    const int v = std::atoi(env);
    return v > 0 ? v : 1;
  }();
  return n;
}

void parallel_for(Index n, const std::function<void(Index)>& fn) {
  const int threads = std::min<Index>(thread_count(), n);
  if (threads <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mu;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (Index i = t; i < n; i += threads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string format_dims(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace mgpc
