#include "bat/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "bat/errors.hpp"

namespace bat::metrics {

using ad::Tensor;

Tensor masked_forecast_loss(const Tensor& pred, const std::vector<double>& target,
                            const std::vector<std::uint8_t>& mask) {
  if (pred.rank() == 0 || pred.dim(0) == 0) throw ContractError("masked_forecast_loss: empty batch");
  if (target.size() != pred.size() || mask.size() != pred.size()) {
    throw ShapeError("masked_forecast_loss: pred " + ad::to_string(pred.shape()) + " has " +
                     std::to_string(pred.size()) + " cells, target/mask have " + std::to_string(target.size()) +
                     "/" + std::to_string(mask.size()));
  }
  std::vector<double> m(mask.size());
  std::vector<double> t(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    m[i] = mask[i] ? 1.0 : 0.0;
    t[i] = mask[i] ? target[i] : 0.0;
  }
  Tensor residual = ad::sub(ad::mul(pred, Tensor::from(pred.shape(), std::move(m))),
                            Tensor::from(pred.shape(), std::move(t)));
  return ad::scale(ad::sum(ad::mul(residual, residual)), 1.0 / static_cast<double>(pred.dim(0)));
}

Tensor weighted_bce(const Tensor& probs, const std::vector<int>& labels, double pos_weight) {
  if (probs.size() == 0) throw ContractError("weighted_bce: empty batch");
  if (labels.size() != probs.size()) throw ShapeError("weighted_bce: label count differs from predictions");
  if (!(pos_weight > 0.0)) throw ContractError("weighted_bce: pos_weight must be positive");
  const ad::Shape shape = probs.shape();
  std::vector<double> pos(labels.size());
  std::vector<double> neg(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ContractError("weighted_bce: labels must be 0 or 1");
    pos[i] = labels[i] == 1 ? pos_weight : 0.0;
    neg[i] = labels[i] == 1 ? 0.0 : 1.0;
  }
  Tensor p = ad::clamp(probs, kProbClamp, 1.0 - kProbClamp);
  Tensor log_p = ad::log(p);
  Tensor log_q = ad::log(ad::add_scalar(ad::scale(p, -1.0), 1.0));
  Tensor total = ad::add(ad::mul(log_p, Tensor::from(shape, std::move(pos))),
                         ad::mul(log_q, Tensor::from(shape, std::move(neg))));
  return ad::scale(ad::sum(total), -1.0 / static_cast<double>(labels.size()));
}

double balanced_pos_weight(const std::vector<int>& labels) {
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0.0 || neg == 0.0) return 1.0;
  return neg / pos;
}

namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels, const char* what) {
  if (scores.size() != labels.size()) {
    throw ShapeError(std::string(what) + ": scores and labels differ in length");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw MetricError(std::string(what) + ": non-finite score");
  }
}

// Indices ordered by descending score.
std::vector<std::size_t> by_score_desc(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels, "auc_roc");
  const auto order = by_score_desc(scores);
  double n_pos = 0;
  double n_neg = 0;
  for (int y : labels) (y == 1 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc_roc: undefined with a single class present");
  // Walk tie groups from the top; each positive wins against every negative
  // ranked strictly below and gets half credit for tied negatives. Counts
  // are integers (in doubles), so the numerator is exact.
  double wins2 = 0;  // twice the win count
  double neg_above = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double pos = 0;
    double neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos : neg) += 1;
      ++j;
    }
    const double neg_below = n_neg - neg_above - neg;
    wins2 += pos * (2 * neg_below + neg);
    neg_above += neg;
    i = j;
  }
  return wins2 / (2 * n_pos * n_neg);
}

double auc_pr(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels, "auc_pr");
  const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) throw MetricError("auc_pr: undefined without positive labels");
  const auto order = by_score_desc(scores);
  double area = 0;
  double tp = 0;
  double seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double pos = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      pos += labels[order[j]] == 1 ? 1 : 0;
      ++j;
    }
    seen += static_cast<double>(j - i);
    tp += pos;
    if (pos > 0) area += (pos / n_pos) * (tp / seen);
    i = j;
  }
  return area;
}

MetricReport evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels) {
  MetricReport r;
  r.n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.n_neg = labels.size() - r.n_pos;
  r.prevalence = labels.empty() ? 0.0 : static_cast<double>(r.n_pos) / static_cast<double>(labels.size());
  r.auc_roc = auc_roc(scores, labels);
  r.auc_pr = auc_pr(scores, labels);
  return r;
}

std::string metric_csv_header() { return "dataset,model,mode,size,seed,fold,auc_roc,auc_pr"; }

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string to_csv(const MetricRow& row) {
  return row.dataset + "," + row.model + "," + row.mode + "," + std::to_string(row.size) + "," +
         std::to_string(row.seed) + "," + std::to_string(row.fold) + "," + format_fixed(100.0 * row.auc_roc, 4) +
         "," + format_fixed(100.0 * row.auc_pr, 4);
}

}  // namespace bat::metrics
