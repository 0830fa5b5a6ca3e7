#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "bat/tensor.hpp"

namespace bat::ad {

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<std::size_t> non_finite;  // coordinates with non-finite outputs
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double tol = 0.0;
  bool passed = false;

  double worst() const;
};

/// Compares tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` must rebuild the scalar loss from the current parameter
/// values on every call and be deterministic (no active dropout). The
/// relative error of a coordinate is |tape - numeric| / max(|tape|,
/// |numeric|, abs_floor).
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           double step = 1e-5, double tol = 1e-3, double abs_floor = 1e-6);

}  // namespace bat::ad
