#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bat/tensor.hpp"

namespace bat::metrics {

inline constexpr double kProbClamp = 1e-7;

/// (1/N) * sum over cells of mask * (pred - target)^2, N = leading
/// dimension of `pred`. Target values at masked-out cells are never read.
ad::Tensor masked_forecast_loss(const ad::Tensor& pred, const std::vector<double>& target,
                                const std::vector<std::uint8_t>& mask);

/// -(1/N) * sum [w * y * log p + (1 - y) * log(1 - p)] with p clamped to
/// [1e-7, 1 - 1e-7].
ad::Tensor weighted_bce(const ad::Tensor& probs, const std::vector<int>& labels, double pos_weight = 1.0);

/// n_neg / n_pos, or 1 when either class is absent.
double balanced_pos_weight(const std::vector<int>& labels);

/// Probability that a random positive outranks a random negative, ties
/// counted as one half. Throws MetricError unless both classes occur.
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Area under the stepwise precision-recall curve: sum over distinct score
/// thresholds (high to low) of (recall gain) * (precision at that
/// threshold). Throws MetricError without positives.
double auc_pr(const std::vector<double>& scores, const std::vector<int>& labels);

struct MetricReport {
  double auc_roc = 0.0;
  double auc_pr = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  double prevalence = 0.0;
};

MetricReport evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels);

/// One result row: dataset,model,mode,size,seed,fold,auc_roc,auc_pr with the
/// AUCs reported x100.
struct MetricRow {
  std::string dataset;
  std::string model;
  std::string mode;
  std::size_t size = 0;
  std::uint64_t seed = 0;
  int fold = 0;
  double auc_roc = 0.0;
  double auc_pr = 0.0;
};

std::string metric_csv_header();
std::string to_csv(const MetricRow& row);
/// Fixed-precision formatting used in every CSV the toolkit writes.
std::string format_fixed(double v, int digits = 6);

}  // namespace bat::metrics
