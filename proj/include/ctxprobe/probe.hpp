// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_PROBE_HPP
#define CTXPROBE_PROBE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ctxprobe/attention.hpp"
#include "ctxprobe/errors.hpp"
#include "ctxprobe/rng.hpp"
#include "json.hpp"

namespace ctxprobe {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(u)) without overflow.
inline double softplus(double u) {
  return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// sklearn-style balanced weights: n / (2 * n_class), so the per-example
/// weights average to 1. Unweighted returns all ones.
inline std::vector<double> class_weights(std::span<const int> labels, bool balanced) {
  std::vector<double> weights(labels.size(), 1.0);
  if (!balanced) return weights;
  std::size_t positives = 0;
  for (int y : labels) positives += (y == 1);
  const std::size_t negatives = labels.size() - positives;
  const double n = static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t count = labels[i] == 1 ? positives : negatives;
    weights[i] = n / (2.0 * static_cast<double>(count));
  }
  return weights;
}

/// f(w, b) = (1/n) sum_i s_i * log(1 + exp(-y_i (w.x_i + b))) + ||w||^2 / (2C),
/// y_i in {-1, +1}, bias unregularized. Parameters are packed as [w..., b].
class LogisticObjective {
 public:
  LogisticObjective(const FeatureMatrix& x, std::span<const int> labels, std::span<const double> sample_weights,
                    double inverse_regularization)
      : x_(x), labels_(labels), weights_(sample_weights), c_(inverse_regularization) {}

  std::size_t dim() const { return x_.cols + 1; }

  double value(const Eigen::VectorXd& params) const {
    const std::size_t d = x_.cols;
    double loss = 0.0;
    for (std::size_t i = 0; i < x_.rows; ++i) {
      const double z = margin(params, i);
      loss += weights_[i] * softplus(labels_[i] == 1 ? -z : z);
    }
    const double n = static_cast<double>(x_.rows);
    return loss / n + params.head(static_cast<Eigen::Index>(d)).squaredNorm() / (2.0 * c_);
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& params) const {
    const std::size_t d = x_.cols;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d + 1));
    for (std::size_t i = 0; i < x_.rows; ++i) {
      const double r = weights_[i] * (sigmoid(margin(params, i)) - (labels_[i] == 1 ? 1.0 : 0.0));
      const auto row = x_.row(i);
      for (std::size_t j = 0; j < d; ++j) g[static_cast<Eigen::Index>(j)] += r * row[j];
      g[static_cast<Eigen::Index>(d)] += r;
    }
    g /= static_cast<double>(x_.rows);
    g.head(static_cast<Eigen::Index>(d)) += params.head(static_cast<Eigen::Index>(d)) / c_;
    return g;
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& params) const {
    const std::size_t d = x_.cols;
    const auto D = static_cast<Eigen::Index>(d + 1);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(D, D);
    Eigen::VectorXd augmented(D);
    for (std::size_t i = 0; i < x_.rows; ++i) {
      const double p = sigmoid(margin(params, i));
      const auto row = x_.row(i);
      for (std::size_t j = 0; j < d; ++j) augmented[static_cast<Eigen::Index>(j)] = row[j];
      augmented[static_cast<Eigen::Index>(d)] = 1.0;
      h.selfadjointView<Eigen::Lower>().rankUpdate(augmented, weights_[i] * p * (1.0 - p));
    }
    h = h.selfadjointView<Eigen::Lower>();
    h /= static_cast<double>(x_.rows);
    for (std::size_t j = 0; j < d; ++j) h(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += 1.0 / c_;
    return h;
  }

 private:
  double margin(const Eigen::VectorXd& params, std::size_t i) const {
    const std::size_t d = x_.cols;
    const auto row = x_.row(i);
    double z = params[static_cast<Eigen::Index>(d)];
    for (std::size_t j = 0; j < d; ++j) z += params[static_cast<Eigen::Index>(j)] * row[j];
    return z;
  }

  const FeatureMatrix& x_;
  std::span<const int> labels_;
  std::span<const double> weights_;
  double c_;
};

struct FitResult {
  std::vector<double> weights;
  double bias = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
  double objective = 0.0;
};

/// Damped Newton on the convex objective: LDLT step, Armijo backtracking,
/// stop at ||grad||_2 <= tolerance or after max_iterations steps.
inline FitResult fit_logistic(const FeatureMatrix& x, std::span<const int> labels, double inverse_regularization,
                              bool balanced, std::size_t max_iterations, double tolerance = 1e-6) {
  const auto sample_weights = class_weights(labels, balanced);
  const LogisticObjective objective(x, labels, sample_weights, inverse_regularization);
  Eigen::VectorXd params = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(objective.dim()));
  double f = objective.value(params);
  Eigen::VectorXd g = objective.gradient(params);

  FitResult result;
  while (true) {
    result.gradient_norm = g.norm();
    if (result.gradient_norm <= tolerance) {
      result.converged = true;
      break;
    }
    if (result.iterations >= max_iterations) break;
    Eigen::MatrixXd h = objective.hessian(params);
    // The bias direction has no ridge term; keep the system positive definite.
    h.diagonal().array() += 1e-12;
    Eigen::VectorXd step = h.ldlt().solve(-g);
    double slope = g.dot(step);
    if (!std::isfinite(slope) || slope >= 0.0) {
      step = -g;
      slope = -g.squaredNorm();
    }
    double t = 1.0;
    Eigen::VectorXd candidate = params + step;
    double f_candidate = objective.value(candidate);
    while (f_candidate > f + 1e-4 * t * slope && t > 1e-12) {
      t *= 0.5;
      candidate = params + t * step;
      f_candidate = objective.value(candidate);
    }
    ++result.iterations;
    const bool sufficient = f_candidate <= f + 1e-4 * t * slope;
    if (f_candidate > f) break;  // no descent possible at machine precision
    params = candidate;
    f = f_candidate;
    g = objective.gradient(params);
    if (!sufficient) {
      result.gradient_norm = g.norm();
      result.converged = result.gradient_norm <= tolerance;
      break;
    }
  }
  const std::size_t d = x.cols;
  result.weights.assign(params.data(), params.data() + d);
  result.bias = params[static_cast<Eigen::Index>(d)];
  result.objective = f;
  return result;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Mann-Whitney AUC: probability a random positive outscores a random
/// negative, ties counting one half.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionMismatch("scores and labels differ in length");
  std::size_t positives = 0;
  for (int y : labels) positives += (y == 1);
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) throw SingleClassError("AUC needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double average_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) positive_rank_sum += average_rank;
    i = j;
  }
  const double p = static_cast<double>(positives), n = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

/// Mean of per-class recall for predictions `score >= threshold`. Classes
/// absent from `labels` are skipped.
inline double balanced_accuracy(std::span<const double> scores, std::span<const int> labels,
                                double threshold = 0.5) {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) (predicted ? tp : fn)++;
    else (predicted ? fp : tn)++;
  }
  double sum = 0.0;
  int classes = 0;
  if (tp + fn > 0) {
    sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
    ++classes;
  }
  if (tn + fp > 0) {
    sum += static_cast<double>(tn) / static_cast<double>(tn + fp);
    ++classes;
  }
  return classes == 0 ? 0.0 : sum / classes;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const FeatureMatrix& x) {
    Standardizer s{std::vector<double>(x.cols, 0.0), std::vector<double>(x.cols, 1.0)};
    if (x.rows == 0) return s;
    const double n = static_cast<double>(x.rows);
    for (std::size_t j = 0; j < x.cols; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) sum += x.at(i, j);
      s.mean[j] = sum / n;
      double ss = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) ss += (x.at(i, j) - s.mean[j]) * (x.at(i, j) - s.mean[j]);
      const double sd = std::sqrt(ss / n);
      s.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  FeatureMatrix apply(const FeatureMatrix& x) const {
    FeatureMatrix out = x;
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j < x.cols; ++j) out.at(i, j) = (x.at(i, j) - mean[j]) / scale[j];
    return out;
  }
};

struct ProbeModel {
  std::vector<double> weights;
  double bias = 0.0;
  std::optional<std::vector<std::size_t>> selected_features;
  std::size_t feature_dim = 0;  // L*H of the dumps the probe was trained on
  std::string model_id;
  std::optional<Standardizer> standardizer;
  nlohmann::ordered_json training_meta = nlohmann::ordered_json::object();

  /// Throws InvariantViolation if weights and selection disagree or any entry is non-finite.
  void check() const {
    const std::size_t expected = selected_features ? selected_features->size() : feature_dim;
    if (weights.size() != expected)
      throw InvariantViolation("probe has " + std::to_string(weights.size()) + " weights, expected " +
                               std::to_string(expected));
    if (selected_features)
      for (std::size_t f : *selected_features)
        if (f >= feature_dim) throw InvariantViolation("selected feature index out of range");
    for (double w : weights)
      if (!std::isfinite(w)) throw InvariantViolation("probe weight is not finite");
    if (!std::isfinite(bias)) throw InvariantViolation("probe bias is not finite");
    if (standardizer && (standardizer->mean.size() != weights.size() || standardizer->scale.size() != weights.size()))
      throw InvariantViolation("standardizer width differs from the weight vector");
  }
};

/// Columns `indices` of `x`, in the given order.
inline FeatureMatrix project_columns(const FeatureMatrix& x, std::span<const std::size_t> indices) {
  FeatureMatrix out(x.rows, indices.size());
  out.empty_rows = x.empty_rows;
  for (std::size_t j : indices)
    if (j >= x.cols) throw DimensionMismatch("feature index " + std::to_string(j) + " out of range");
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t k = 0; k < indices.size(); ++k) out.at(i, k) = x.at(i, indices[k]);
  return out;
}

inline std::vector<std::size_t> layer_feature_indices(std::size_t num_layers, std::size_t num_heads,
                                                      std::size_t layer) {
  if (layer >= num_layers)
    throw InvalidArgument("layer " + std::to_string(layer) + " out of range for " + std::to_string(num_layers) +
                          " layers");
  std::vector<std::size_t> indices(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) indices[h] = layer * num_heads + h;
  return indices;
}

/// Keeps only the heads of one layer (columns layer*H .. layer*H + H - 1).
inline FeatureMatrix restrict_to_layer(const FeatureMatrix& x, std::size_t num_heads, std::size_t layer) {
  if (num_heads == 0 || x.cols % num_heads != 0) throw DimensionMismatch("feature width is not a multiple of H");
  const auto indices = layer_feature_indices(x.cols / num_heads, num_heads, layer);
  return project_columns(x, indices);
}

/// Relevance probability per row: sigmoid(w . v + b), after projecting onto
/// the selected features and standardizing when the model carries those.
inline std::vector<double> score_sentences(const ProbeModel& model, const FeatureMatrix& features) {
  if (features.cols != model.feature_dim)
    throw DimensionMismatch("features have " + std::to_string(features.cols) + " columns, probe expects " +
                            std::to_string(model.feature_dim));
  FeatureMatrix x = model.selected_features ? project_columns(features, *model.selected_features) : features;
  if (x.cols != model.weights.size()) throw DimensionMismatch("probe weights do not match the feature width");
  if (model.standardizer) x = model.standardizer->apply(x);
  std::vector<double> scores(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto row = x.row(i);
    double z = model.bias;
    for (std::size_t j = 0; j < row.size(); ++j) z += model.weights[j] * row[j];
    scores[i] = sigmoid(z);
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Training protocol
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::vector<double> c_grid = {0.01, 0.1, 1.0, 10.0, 100.0};
  std::size_t folds = 5;
  std::size_t max_iterations = 2000;
  bool balanced = true;
  std::uint64_t seed = 42;
  double validation_fraction = 0.2;
  double tolerance = 1e-6;
  bool standardize = false;

  void check() const {
    if (folds < 2) throw InvalidArgument("folds must be at least 2");
    if (c_grid.empty()) throw InvalidArgument("regularization grid is empty");
    for (double c : c_grid)
      if (!(c > 0.0) || !std::isfinite(c)) throw InvalidArgument("every C must be positive and finite");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw InvalidArgument("validation fraction must be in [0, 1)");
  }
};

struct FoldMetrics {
  std::size_t fold = 0;
  double c = 0.0;
  double balanced_accuracy = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

struct CVReport {
  std::vector<double> c_grid;
  std::vector<double> mean_balanced_accuracy;  // aligned with c_grid; empty when CV was skipped
  double chosen_c = 0.0;
  std::optional<double> validation_auc;  // absent when the held-out split lacks a class
  std::size_t folds_used = 0;
  std::vector<FoldMetrics> fold_metrics;
  std::vector<int> fold_assignment;  // per training example: CV fold, or -1 for the held-out split
  bool validation_model_converged = false;
  bool final_model_converged = false;
  std::size_t final_iterations = 0;
};

struct TrainResult {
  ProbeModel model;
  CVReport report;
};

namespace detail {

inline FeatureMatrix take_rows(const FeatureMatrix& x, std::span<const std::size_t> rows) {
  FeatureMatrix out(rows.size(), x.cols);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto src = x.row(rows[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
    out.empty_rows[k] = x.empty_rows.empty() ? false : x.empty_rows[rows[k]];
  }
  return out;
}

inline std::vector<int> take_labels(std::span<const int> labels, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

/// Fits on `train` rows (standardizing on them if asked) and scores `test` rows.
inline std::vector<double> fit_and_score(const FeatureMatrix& x, std::span<const int> labels,
                                         std::span<const std::size_t> train, std::span<const std::size_t> test,
                                         double c, const TrainConfig& config, FitResult* fit_out) {
  FeatureMatrix xtrain = take_rows(x, train);
  FeatureMatrix xtest = take_rows(x, test);
  if (config.standardize) {
    const auto s = Standardizer::fit(xtrain);
    xtrain = s.apply(xtrain);
    xtest = s.apply(xtest);
  }
  const auto ytrain = take_labels(labels, train);
  FitResult fit = fit_logistic(xtrain, ytrain, c, config.balanced, config.max_iterations, config.tolerance);
  std::vector<double> scores(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto row = xtest.row(i);
    double z = fit.bias;
    for (std::size_t j = 0; j < row.size(); ++j) z += fit.weights[j] * row[j];
    scores[i] = sigmoid(z);
  }
  if (fit_out) *fit_out = std::move(fit);
  return scores;
}

}  // namespace detail

/// Full probe-training protocol.
///
/// 1. A seeded, stratified `validation_fraction` of the examples is held out.
/// 2. On the rest, stratified k-fold CV scores every C in the grid by mean
///    balanced accuracy; the first C reaching the maximum wins.
/// 3. A model fit on the non-held-out examples at that C is scored on the
///    held-out split to report validation AUC.
/// 4. The returned probe is refit on all examples at the chosen C.
///
/// `selection` restricts training to a subset of feature columns; the probe
/// records it so it can score full-width feature matrices.
inline TrainResult train_probe(const FeatureMatrix& features, std::span<const int> labels, const TrainConfig& config,
                               std::optional<std::vector<std::size_t>> selection = std::nullopt,
                               std::string model_id = "") {
  config.check();
  if (labels.size() != features.rows) throw DimensionMismatch("labels and feature rows differ in count");
  for (double v : features.values)
    if (!std::isfinite(v)) throw NonFiniteFeature("feature matrix contains NaN or Inf");
  std::size_t positives = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw InvalidArgument("labels must be 0 or 1");
    positives += (y == 1);
  }
  if (positives == 0 || positives == labels.size()) throw SingleClassError("training labels contain a single class");

  const FeatureMatrix x = selection ? project_columns(features, *selection) : features;
  const std::size_t n = x.rows;

  // Per-class index lists, each shuffled with its own derived stream.
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  for (int cls = 0; cls < 2; ++cls) {
    Rng rng(derive_seed(config.seed, 100 + static_cast<std::uint64_t>(cls)));
    rng.shuffle(std::span<std::size_t>(by_class[cls]));
  }

  CVReport report;
  report.c_grid = config.c_grid;
  report.fold_assignment.assign(n, 0);

  std::vector<std::size_t> dev, held_out;
  std::vector<std::size_t> dev_by_class[2];
  for (int cls = 0; cls < 2; ++cls) {
    const std::size_t count = by_class[cls].size();
    std::size_t n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(count)));
    n_val = std::min(n_val, count - 1);  // keep at least one training example per class
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = by_class[cls][k];
      if (k < n_val) {
        held_out.push_back(idx);
        report.fold_assignment[idx] = -1;
      } else {
        dev.push_back(idx);
        dev_by_class[cls].push_back(idx);
      }
    }
  }
  std::sort(dev.begin(), dev.end());
  std::sort(held_out.begin(), held_out.end());

  const std::size_t folds =
      std::min({config.folds, dev_by_class[0].size(), dev_by_class[1].size()});
  report.folds_used = folds >= 2 ? folds : 0;
  if (folds < 2 && config.c_grid.size() > 1)
    throw InvalidArgument("cross-validation needs at least 2 training examples of each class");

  if (folds >= 2) {
    for (int cls = 0; cls < 2; ++cls)
      for (std::size_t k = 0; k < dev_by_class[cls].size(); ++k)
        report.fold_assignment[dev_by_class[cls][k]] = static_cast<int>(k % folds);

    report.mean_balanced_accuracy.assign(config.c_grid.size(), 0.0);
    for (std::size_t ci = 0; ci < config.c_grid.size(); ++ci) {
      double total = 0.0;
      for (std::size_t fold = 0; fold < folds; ++fold) {
        std::vector<std::size_t> train, test;
        for (std::size_t idx : dev)
          (report.fold_assignment[idx] == static_cast<int>(fold) ? test : train).push_back(idx);
        FitResult fit;
        const auto scores = detail::fit_and_score(x, labels, train, test, config.c_grid[ci], config, &fit);
        const auto ytest = detail::take_labels(labels, test);
        const double ba = balanced_accuracy(scores, ytest);
        report.fold_metrics.push_back(FoldMetrics{fold, config.c_grid[ci], ba, fit.converged, fit.iterations});
        total += ba;
      }
      report.mean_balanced_accuracy[ci] = total / static_cast<double>(folds);
    }
    std::size_t best = 0;
    for (std::size_t ci = 1; ci < config.c_grid.size(); ++ci)
      if (report.mean_balanced_accuracy[ci] > report.mean_balanced_accuracy[best]) best = ci;
    report.chosen_c = config.c_grid[best];
  } else {
    report.chosen_c = config.c_grid.front();
  }

  if (!held_out.empty()) {
    const auto yval = detail::take_labels(labels, held_out);
    const bool both = std::count(yval.begin(), yval.end(), 1) > 0 && std::count(yval.begin(), yval.end(), 0) > 0;
    FitResult fit;
    const auto scores = detail::fit_and_score(x, labels, dev, held_out, report.chosen_c, config, &fit);
    report.validation_model_converged = fit.converged;
    if (both) report.validation_auc = auc(scores, yval);
  }

  ProbeModel model;
  FeatureMatrix xfinal = x;
  if (config.standardize) {
    model.standardizer = Standardizer::fit(x);
    xfinal = model.standardizer->apply(x);
  }
  const FitResult final_fit =
      fit_logistic(xfinal, labels, report.chosen_c, config.balanced, config.max_iterations, config.tolerance);
  report.final_model_converged = final_fit.converged;
  report.final_iterations = final_fit.iterations;

  model.weights = final_fit.weights;
  model.bias = final_fit.bias;
  model.selected_features = std::move(selection);
  model.feature_dim = features.cols;
  model.model_id = std::move(model_id);
  model.training_meta = {{"chosen_c", report.chosen_c},
                         {"folds", report.folds_used},
                         {"seed", config.seed},
                         {"examples", n},
                         {"positives", positives},
                         {"balanced", config.balanced},
                         {"max_iterations", config.max_iterations},
                         {"converged", final_fit.converged}};
  model.check();
  return TrainResult{std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr int kProbeFormatVersion = 1;

inline nlohmann::ordered_json probe_to_json(const ProbeModel& model) {
  model.check();
  nlohmann::ordered_json j;
  j["version"] = kProbeFormatVersion;
  j["model_id"] = model.model_id;
  j["feature_dim"] = model.feature_dim;
  j["selected_features"] = model.selected_features ? nlohmann::ordered_json(*model.selected_features)
                                                   : nlohmann::ordered_json(nullptr);
  j["weights"] = model.weights;
  j["bias"] = model.bias;
  j["training_meta"] = model.training_meta;
  if (model.standardizer) j["standardizer"] = {{"mean", model.standardizer->mean}, {"scale", model.standardizer->scale}};
  return j;
}

inline ProbeModel probe_from_json(const nlohmann::ordered_json& j) {
  try {
    if (!j.is_object()) throw MalformedRecord("probe model must be a JSON object");
    if (j.at("version").get<int>() != kProbeFormatVersion)
      throw UnsupportedVersion("probe model version " + j.at("version").dump() + " is not supported");
    ProbeModel model;
    model.model_id = j.at("model_id").get<std::string>();
    model.feature_dim = j.at("feature_dim").get<std::size_t>();
    if (!j.at("selected_features").is_null())
      model.selected_features = j.at("selected_features").get<std::vector<std::size_t>>();
    model.weights = j.at("weights").get<std::vector<double>>();
    model.bias = j.at("bias").get<double>();
    if (j.contains("training_meta")) model.training_meta = j.at("training_meta");
    if (j.contains("standardizer"))
      model.standardizer = Standardizer{j.at("standardizer").at("mean").get<std::vector<double>>(),
                                        j.at("standardizer").at("scale").get<std::vector<double>>()};
    model.check();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedRecord(std::string("malformed probe model: ") + e.what());
  } catch (const InvariantViolation& e) {
    throw MalformedRecord(std::string("inconsistent probe model: ") + e.what());
  }
}

inline nlohmann::ordered_json cv_report_to_json(const CVReport& r) {
  nlohmann::ordered_json j;
  j["c_grid"] = r.c_grid;
  j["mean_balanced_accuracy"] = r.mean_balanced_accuracy;
  j["chosen_c"] = r.chosen_c;
  j["validation_auc"] = r.validation_auc ? nlohmann::ordered_json(*r.validation_auc) : nlohmann::ordered_json(nullptr);
  j["folds_used"] = r.folds_used;
  auto folds = nlohmann::ordered_json::array();
  for (const auto& f : r.fold_metrics)
    folds.push_back({{"fold", f.fold},
                     {"c", f.c},
                     {"balanced_accuracy", f.balanced_accuracy},
                     {"converged", f.converged},
                     {"iterations", f.iterations}});
  j["fold_metrics"] = std::move(folds);
  j["fold_assignment"] = r.fold_assignment;
  j["validation_model_converged"] = r.validation_model_converged;
  j["final_model_converged"] = r.final_model_converged;
  j["final_iterations"] = r.final_iterations;
  return j;
}

}  // namespace ctxprobe

#endif  // CTXPROBE_PROBE_HPP
