#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "gaussian.hpp"
#include "kernel.hpp"

namespace mgpc {

void Dataset::validate() const {
  if (rows() < 1) throw DataError("dataset is empty");
  if (y.size() != rows()) throw DataError("dataset: label/feature row mismatch");
  if (num_classes < 1) throw DataError("dataset: no classes");
  for (Index i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || y[i] >= num_classes) {
      throw DataError("dataset: label out of range at row " + std::to_string(i));
    }
  }
  if (!x.allFinite()) throw DataError("dataset: non-finite feature value");
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(field);
  if (!line.empty() && line.back() == delim) out.push_back("");
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("non-numeric value '" + s + "' in " + where);
  }
}

// Maps raw labels to compact ids 0..C-1 ordered by value.
void assign_labels(const std::vector<double>& raw, Dataset& ds) {
  std::map<double, int> ids;
  for (double v : raw) {
    if (v != std::floor(v)) throw DataError("label values must be integral, got " + std::to_string(v));
    ids.emplace(v, 0);
  }
  int next = 0;
  for (auto& kv : ids) kv.second = next++;
  ds.num_classes = next;
  ds.label_values.clear();
  for (auto& kv : ids) ds.label_values.push_back(kv.first);
  ds.y.resize(static_cast<Index>(raw.size()));
  for (size_t i = 0; i < raw.size(); ++i) ds.y[static_cast<Index>(i)] = ids[raw[i]];
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvOptions& opts) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  std::vector<std::string> header;
  Index label_idx = -1;

  if (opts.has_header) {
    if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
    header = split_line(line, opts.delimiter);
    for (size_t i = 0; i < header.size(); ++i) {
      if (header[i] == opts.label_column) label_idx = static_cast<Index>(i);
    }
  }
  if (label_idx < 0) {
    // fall back to a numeric column index
    try {
      label_idx = std::stol(opts.label_column);
    } catch (const std::exception&) {
      throw DataError("label column '" + opts.label_column + "' not found in '" + path + "'");
    }
  }

  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  Index width = -1;
  Index line_no = opts.has_header ? 1 : 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_line(line, opts.delimiter);
    if (width < 0) {
      width = static_cast<Index>(fields.size());
      if (label_idx >= width) throw DataError("label column index out of range in '" + path + "'");
    } else if (static_cast<Index>(fields.size()) != width) {
      throw DataError("ragged row at line " + std::to_string(line_no) + " of '" + path + "'");
    }
    std::vector<double> feat;
    feat.reserve(width - 1);
    for (Index i = 0; i < width; ++i) {
      const double v = parse_number(fields[i], "line " + std::to_string(line_no) + " of '" + path + "'");
      if (i == label_idx) {
        labels.push_back(v);
      } else {
        feat.push_back(v);
      }
    }
    rows.push_back(std::move(feat));
  }
  if (rows.empty()) throw DataError("'" + path + "' has no data rows");

  Dataset ds;
  ds.x.resize(static_cast<Index>(rows.size()), width - 1);
  for (size_t i = 0; i < rows.size(); ++i) {
    for (Index j = 0; j < width - 1; ++j) ds.x(static_cast<Index>(i), j) = rows[i][static_cast<size_t>(j)];
  }
  if (!header.empty()) {
    for (Index i = 0; i < width; ++i) {
      if (i != label_idx) ds.feature_names.push_back(header[static_cast<size_t>(i)]);
    }
  }
  assign_labels(labels, ds);
  ds.validate();
  return ds;
}

Dataset load_libsvm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::map<Index, double>> rows;
  std::vector<double> labels;
  Index max_feat = 0;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;
    labels.push_back(parse_number(tok, "line " + std::to_string(line_no)));
    std::map<Index, double> row;
    while (ss >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) {
        throw DataError("bad libsvm token '" + tok + "' at line " + std::to_string(line_no));
      }
      const Index idx = static_cast<Index>(
          parse_number(tok.substr(0, colon), "line " + std::to_string(line_no)));
      if (idx < 1) throw DataError("libsvm feature indices are 1-based, line " + std::to_string(line_no));
      row[idx - 1] = parse_number(tok.substr(colon + 1), "line " + std::to_string(line_no));
      max_feat = std::max(max_feat, idx);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("'" + path + "' has no data rows");
  Dataset ds;
  ds.x = MatrixXd::Zero(static_cast<Index>(rows.size()), max_feat);
  for (size_t i = 0; i < rows.size(); ++i) {
    for (const auto& [j, v] : rows[i]) ds.x(static_cast<Index>(i), j) = v;
  }
  assign_labels(labels, ds);
  ds.validate();
  return ds;
}

void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.precision(17);
  for (Index j = 0; j < ds.cols(); ++j) {
    if (j < static_cast<Index>(ds.feature_names.size())) {
      out << ds.feature_names[static_cast<size_t>(j)];
    } else {
      out << "f" << j;
    }
    out << ',';
  }
  out << "label\n";
  for (Index i = 0; i < ds.rows(); ++i) {
    for (Index j = 0; j < ds.cols(); ++j) out << ds.x(i, j) << ',';
    const double raw = ds.y[i] < static_cast<int>(ds.label_values.size())
                           ? ds.label_values[static_cast<size_t>(ds.y[i])]
                           : ds.y[i];
    out << raw << '\n';
  }
}

MatrixXd Standardizer::apply(const MatrixXd& xin) const {
  if (xin.cols() != mean.size()) throw DataError("standardize: feature width mismatch");
  return (xin.rowwise() - mean.transpose()) * scale.cwiseInverse().asDiagonal();
}

MatrixXd Standardizer::invert(const MatrixXd& xin) const {
  return (xin * scale.asDiagonal()).rowwise() + mean.transpose();
}

Standardizer fit_standardizer(const Dataset& train) {
  Standardizer s;
  s.mean = train.x.colwise().mean();
  const MatrixXd centered = train.x.rowwise() - s.mean.transpose();
  s.scale = (centered.array().square().colwise().mean()).sqrt().matrix();
  s.scale = s.scale.cwiseMax(1e-8);
  return s;
}

void standardize(const Standardizer& s, Dataset& ds) { ds.x = s.apply(ds.x); }

namespace {
Dataset take_rows(const Dataset& ds, const std::vector<Index>& rows) {
  Dataset out;
  out.x.resize(static_cast<Index>(rows.size()), ds.cols());
  out.y.resize(static_cast<Index>(rows.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Index>(i)) = ds.x.row(rows[i]);
    out.y[static_cast<Index>(i)] = ds.y[rows[i]];
  }
  out.num_classes = ds.num_classes;
  out.feature_names = ds.feature_names;
  out.label_values = ds.label_values;
  return out;
}
}  // namespace

SplitResult split(const Dataset& ds, double train_fraction, std::uint64_t seed, bool stratified) {
  if (train_fraction <= 0.0 || train_fraction > 1.0) {
    throw UsageError("split: train_fraction must be in (0, 1]");
  }
  Rng rng(seed);
  std::vector<Index> train_rows, test_rows;
  if (stratified) {
    for (int c = 0; c < ds.num_classes; ++c) {
      std::vector<Index> members;
      for (Index i = 0; i < ds.rows(); ++i) {
        if (ds.y[i] == c) members.push_back(i);
      }
      rng.shuffle(members.begin(), members.end());
      const Index ntr = static_cast<Index>(std::llround(train_fraction * members.size()));
      for (Index i = 0; i < static_cast<Index>(members.size()); ++i) {
        (i < ntr ? train_rows : test_rows).push_back(members[static_cast<size_t>(i)]);
      }
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());
  } else {
    std::vector<Index> perm(ds.rows());
    std::iota(perm.begin(), perm.end(), Index{0});
    rng.shuffle(perm.begin(), perm.end());
    const Index ntr = static_cast<Index>(std::llround(train_fraction * ds.rows()));
    train_rows.assign(perm.begin(), perm.begin() + ntr);
    test_rows.assign(perm.begin() + ntr, perm.end());
  }
  SplitResult out;
  out.train = take_rows(ds, train_rows);
  out.test = take_rows(ds, test_rows);
  return out;
}

SyntheticProblem synthetic(Index n, std::uint64_t seed) {
  if (n < 1) throw UsageError("synthetic: n must be >= 1");
  Rng rng(seed);
  SyntheticProblem p;
  p.data.x.resize(n, SyntheticProblem::kDim);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < SyntheticProblem::kDim; ++j) {
      p.data.x(i, j) = rng.uniform(-2.5, 2.5);
    }
  }

  KernelHyper h;
  h.log_lengthscale = VectorXd::Constant(SyntheticProblem::kDim,
                                         std::log(SyntheticProblem::kLengthscale));
  h.log_amplitude = std::log(SyntheticProblem::kAmplitude);
  h.log_noise = std::log(SyntheticProblem::kNoiseSd);

  // Latents are smooth SE draws contaminated with the model's noise; labels
  // are their argmax, so labels and returned latents agree by construction.
  const MatrixXd k = gram(p.data.x, p.data.x, h, false);
  const auto llt = chol_psd(k, "synthetic prior");
  const MatrixXd l = llt.matrixL();
  p.latents.resize(n, SyntheticProblem::kClasses);
  p.data.y.resize(n);
  for (int c = 0; c < SyntheticProblem::kClasses; ++c) {
    VectorXd z(n);
    for (Index i = 0; i < n; ++i) z[i] = rng.normal();
    p.latents.col(c) = l * z;
    for (Index i = 0; i < n; ++i) {
      p.latents(i, c) += rng.normal(0.0, SyntheticProblem::kNoiseSd);
    }
  }
  for (Index i = 0; i < n; ++i) {
    Index best;
    p.latents.row(i).maxCoeff(&best);
    p.data.y[i] = static_cast<int>(best);
  }
  p.data.num_classes = SyntheticProblem::kClasses;
  p.data.label_values = {0, 1, 2};
  p.data.feature_names = {"x0", "x1"};
  p.data.validate();
  return p;
}

}  // namespace mgpc
