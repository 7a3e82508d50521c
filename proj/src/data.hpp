#pragma once

#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace mgpc {

struct Dataset {
  MatrixXd x;                    // N x D
  Eigen::VectorXi y;             // labels in {0..C-1}
  int num_classes = 0;
  std::vector<std::string> feature_names;
  std::vector<double> label_values;  // original label for each class id

  Index rows() const { return x.rows(); }
  Index cols() const { return x.cols(); }
  void validate() const;
};

struct CsvOptions {
  std::string label_column = "label";  // name, or numeric index as text
  char delimiter = ',';
  bool has_header = true;
};

Dataset load_csv(const std::string& path, const CsvOptions& opts = {});
Dataset load_libsvm(const std::string& path);
void write_csv(const Dataset& ds, const std::string& path);

// Per-feature affine transform fitted on the training set only.
struct Standardizer {
  VectorXd mean;
  VectorXd scale;  // stddev floored at 1e-8

  MatrixXd apply(const MatrixXd& x) const;
  MatrixXd invert(const MatrixXd& x) const;
};

Standardizer fit_standardizer(const Dataset& train);
void standardize(const Standardizer& s, Dataset& ds);

struct SplitResult {
  Dataset train;
  Dataset test;
};
SplitResult split(const Dataset& ds, double train_fraction, std::uint64_t seed,
                  bool stratified = false);

// Three-class problem on the box [-2.5, 2.5]^2: smooth latents drawn from the
// SE prior at fixed generating hyper-parameters, labels from the noisy argmax.
struct SyntheticProblem {
  Dataset data;
  MatrixXd latents;  // N x C, noise-free: the Bayes-oracle predictor
  static constexpr int kClasses = 3;
  static constexpr int kDim = 2;
  static constexpr double kLengthscale = 1.0;
  static constexpr double kAmplitude = 1.0;
  static constexpr double kNoiseSd = 0.1;
};

SyntheticProblem synthetic(Index n, std::uint64_t seed);

}  // namespace mgpc
