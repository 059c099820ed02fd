// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_MRMR_HPP
#define CTXPROBE_MRMR_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "ctxprobe/attention.hpp"
#include "ctxprobe/errors.hpp"

namespace ctxprobe {

namespace mrmr_detail {

// Scores closer than this are ties and go to the lower feature index. Keeps
// the selection independent of example order, which perturbs the last bits
// of the correlation sums.
inline constexpr double kTieTolerance = 1e-12;

inline std::vector<double> column(const FeatureMatrix& x, std::size_t j) {
  std::vector<double> c(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) c[i] = x.at(i, j);
  return c;
}

}  // namespace mrmr_detail

inline std::size_t mrmr_bin_count(std::size_t n) {
  const auto root = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  return std::max<std::size_t>(1, std::min<std::size_t>(8, root));
}

/// Equal-frequency discretization. Values are ranked; a group of equal values
/// starting at sorted position p goes to bin floor(p * bins / n), so ties
/// always share a bin and the result does not depend on example order.
inline std::vector<std::size_t> equal_frequency_bins(std::span<const double> values, std::size_t bins) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<std::size_t> bin(n, 0);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const std::size_t b = std::min(bins - 1, i * bins / n);
    for (std::size_t k = i; k < j; ++k) bin[order[k]] = b;
    i = j;
  }
  return bin;
}

/// Mutual information (nats) between a discrete variable and a binary label.
inline double discrete_mutual_information(std::span<const std::size_t> bins, std::span<const int> labels,
                                          std::size_t bin_count) {
  const double n = static_cast<double>(labels.size());
  std::vector<double> joint(bin_count * 2, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) joint[bins[i] * 2 + (labels[i] == 1 ? 1 : 0)] += 1.0;
  double py[2] = {0.0, 0.0};
  std::vector<double> pb(bin_count, 0.0);
  for (std::size_t b = 0; b < bin_count; ++b)
    for (int y = 0; y < 2; ++y) {
      pb[b] += joint[b * 2 + y];
      py[y] += joint[b * 2 + y];
    }
  double mi = 0.0;
  for (std::size_t b = 0; b < bin_count; ++b)
    for (int y = 0; y < 2; ++y) {
      const double c = joint[b * 2 + y];
      if (c == 0.0) continue;
      mi += (c / n) * std::log(c * n / (pb[b] * py[y]));
    }
  return std::max(0.0, mi);
}

/// Pearson correlation; 0 when either input is constant.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Relevance of every column to the label, MI after equal-frequency binning
/// into min(8, floor(sqrt(n))) bins.
inline std::vector<double> feature_relevance(const FeatureMatrix& x, std::span<const int> labels) {
  const std::size_t bins = mrmr_bin_count(x.rows);
  std::vector<double> mi(x.cols);
  for (std::size_t j = 0; j < x.cols; ++j) {
    const auto col = mrmr_detail::column(x, j);
    mi[j] = discrete_mutual_information(equal_frequency_bins(col, bins), labels, bins);
  }
  return mi;
}

/// Greedy minimum-redundancy maximum-relevance selection. The first pick
/// maximizes MI with the label; each later pick maximizes
/// MI(f; y) - mean over selected s of |pearson(f, s)|. At most
/// min(max_k, columns) indices are returned, in pick order.
inline std::vector<std::size_t> mrmr_select(const FeatureMatrix& x, std::span<const int> labels, std::size_t max_k) {
  if (max_k < 1) throw InvalidArgument("max_k must be at least 1");
  if (x.rows < 10) throw InvalidArgument("mRMR needs at least 10 examples");
  if (labels.size() != x.rows) throw DimensionMismatch("labels and feature rows differ in count");

  const auto relevance = feature_relevance(x, labels);
  std::vector<std::vector<double>> columns(x.cols);
  for (std::size_t j = 0; j < x.cols; ++j) columns[j] = mrmr_detail::column(x, j);

  const std::size_t k = std::min(max_k, x.cols);
  std::vector<std::size_t> selected;
  std::vector<bool> taken(x.cols, false);
  std::vector<double> redundancy_sum(x.cols, 0.0);
  while (selected.size() < k) {
    std::size_t best = x.cols;
    double best_score = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      if (taken[j]) continue;
      double score = relevance[j];
      if (!selected.empty()) score -= redundancy_sum[j] / static_cast<double>(selected.size());
      if (best == x.cols || score > best_score + mrmr_detail::kTieTolerance) {
        best = j;
        best_score = score;
      }
    }
    selected.push_back(best);
    taken[best] = true;
    for (std::size_t j = 0; j < x.cols; ++j)
      if (!taken[j]) redundancy_sum[j] += std::abs(pearson(columns[j], columns[best]));
  }
  return selected;
}

}  // namespace ctxprobe

#endif  // CTXPROBE_MRMR_HPP
