#include "bat/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "bat/errors.hpp"

namespace bat::ad {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& p : params) w = std::max(w, p.max_rel_error);
  return w;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           double step, double tol, double abs_floor) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");

  std::vector<std::vector<double>> analytic;
  {
    for (auto& p : params) p.zero_grad();
    Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
    for (const auto& p : params) {
      if (p.has_grad()) {
        analytic.emplace_back(p.grad().begin(), p.grad().end());
      } else {
        analytic.emplace_back(p.size(), 0.0);
      }
    }
  }

  GradCheckReport report;
  report.tol = tol;
  report.passed = true;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ParamCheck check;
    check.name = params[k].name();
    auto values = params[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double up = loss_fn().item();
      values[i] = original - step;
      const double down = loss_fn().item();
      values[i] = original;

      const double numeric = (up - down) / (2.0 * step);
      const double tape_value = analytic[k][i];
      if (!std::isfinite(numeric) || !std::isfinite(tape_value)) {
        check.non_finite.push_back(i);
        continue;
      }
      const double denom = std::max({std::abs(tape_value), std::abs(numeric), abs_floor});
      const double rel = std::abs(tape_value - numeric) / denom;
      if (rel > check.max_rel_error) {
        check.max_rel_error = rel;
        check.worst_index = i;
      }
    }
    if (check.max_rel_error > tol || !check.non_finite.empty()) report.passed = false;
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace bat::ad
