#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mtpeft/autograd/tensor.hpp"

namespace mtpeft::ag {

struct GradCheckResult {
  double max_rel_error = 0.0;
  Index worst_coordinate = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Central differences against a caller-supplied analytic gradient:
// max_i |analytic_i - (f(x+h e_i) - f(x-h e_i)) / 2h| / max(1, |analytic_i|).
template <typename Scalar>
GradCheckResult finite_difference_check(const std::function<Scalar(const Vec<Scalar>&)>& fn, const Vec<Scalar>& point,
                                        const Vec<Scalar>& analytic, Scalar h = Scalar(1e-5)) {
  if (!(h > Scalar(0))) throw ValueError("finite_difference_check: step must be positive");
  if (analytic.size() != point.size()) {
    throw ShapeError("finite_difference_check", Shape{point.size()}, Shape{analytic.size()});
  }
  GradCheckResult result;
  Vec<Scalar> x = point;
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = x[i];
    x[i] = orig + h;
    const Scalar fp = fn(x);
    x[i] = orig - h;
    const Scalar fm = fn(x);
    x[i] = orig;
    if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm))) {
      throw NumericError("finite_difference_check: non-finite function value at coordinate " + std::to_string(i));
    }
    const double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) / (2.0 * static_cast<double>(h));
    const double a = static_cast<double>(analytic[i]);
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    if (err > result.max_rel_error || result.worst_coordinate < 0) {
      result.max_rel_error = std::max(err, result.max_rel_error);
      result.worst_coordinate = i;
      result.analytic_at_worst = a;
      result.numeric_at_worst = numeric;
    }
  }
  return result;
}

// Checks the reverse-mode gradient of `loss()` w.r.t. every tensor in `inputs`.
// `loss` must rebuild its graph from the current tensor values on each call.
template <typename Scalar>
GradCheckResult check_graph_gradients(const std::function<Tensor<Scalar>()>& loss, std::vector<Tensor<Scalar>> inputs,
                                      Scalar h = Scalar(1e-5)) {
  Index total = 0;
  for (auto& t : inputs) {
    t.zero_grad();
    total += t.numel();
  }
  loss().backward();
  Vec<Scalar> point(total), analytic(total);
  Index off = 0;
  for (auto& t : inputs) {
    point.segment(off, t.numel()) = t.value();
    analytic.segment(off, t.numel()) = t.grad();
    off += t.numel();
  }
  auto scatter = [&inputs](const Vec<Scalar>& x) {
    Index o = 0;
    for (auto& t : inputs) {
      t.mutable_value() = x.segment(o, t.numel());
      o += t.numel();
    }
  };
  std::function<Scalar(const Vec<Scalar>&)> fn = [&](const Vec<Scalar>& x) {
    scatter(x);
    return loss().item();
  };
  auto result = finite_difference_check<Scalar>(fn, point, analytic, h);
  scatter(point);
  return result;
}

}  // namespace mtpeft::ag
