// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "i2c2w/autograd.hpp"

namespace i2c2w {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_location;
};

// Compares analytic gradients against central finite differences.
//
// `loss_fn` must rebuild the computation from scratch on the given tape and
// return a scalar node; `inputs` are the leaf nodes whose gradients are
// checked. Entries where both gradients are below `dead_zone` are skipped.
inline GradCheckReport grad_check(
    const std::function<Var<double>(Tape<double>&)>& loss_fn,
    const std::vector<Var<double>>& inputs, double step = 1e-5,
    double dead_zone = 1e-6) {
  // analytic pass
  for (const auto& in : inputs) in->zero_grad();
  {
    Tape<double> tape;
    auto loss = loss_fn(tape);
    if (!std::isfinite(loss->value(0, 0)))
      throw NonFinite("grad_check forward produced NaN/Inf");
    tape.backward(loss);
  }
  std::vector<MatX<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs)
    analytic.push_back(in->has_grad()
                           ? in->grad
                           : MatX<double>::Zero(in->value.rows(), in->value.cols()));

  const auto eval = [&]() {
    Tape<double> tape(false);
    const double v = loss_fn(tape)->value(0, 0);
    if (!std::isfinite(v)) throw NonFinite("grad_check forward produced NaN/Inf");
    return v;
  };

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    MatX<double>& value = inputs[k]->value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value(i);
      value(i) = saved + step;
      const double f_plus = eval();
      value(i) = saved - step;
      const double f_minus = eval();
      value(i) = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = analytic[k](i);
      const double abs_err = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      double rel = 0.0;
      if (scale >= dead_zone) rel = abs_err / scale;
      if (abs_err > report.max_abs_error) report.max_abs_error = abs_err;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_location =
            "input " + std::to_string(k) + " entry " + std::to_string(i);
      }
    }
  }
  for (const auto& in : inputs) in->zero_grad();
  return report;
}

}  // namespace i2c2w
