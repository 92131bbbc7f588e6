#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "attnprice/error.hpp"

namespace attnprice {

struct GradCheckOptions {
  // Relative step: h = step_scale * max(1, |theta|).
  double step_scale = 1e-5;
  // Denominator floor so two near-zero gradients do not produce 0/0.
  double abs_floor = 1e-6;
  // Parameters for which this returns true are skipped (e.g. L1 kinks).
  std::function<bool(std::size_t index, double value, double step)> skip;
};

struct GradCheckReport {
  std::vector<double> rel_error;  // per parameter; 0 for skipped entries
  std::vector<double> numeric;    // central differences
  std::vector<std::size_t> flagged;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;

  bool passed() const { return flagged.empty(); }
};

inline double grad_rel_error(double analytic, double numeric, double abs_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares `analytic` against central differences of `loss` around `params`.
// `loss` must be a pure function of the parameter vector.
template <typename LossFn>
GradCheckReport grad_check(LossFn&& loss, std::vector<double> params, std::span<const double> analytic,
                           double rel_tol, const GradCheckOptions& opts = {}) {
  if (analytic.size() != params.size()) throw std::invalid_argument("grad_check: gradient size mismatch");
  GradCheckReport report;
  report.rel_error.assign(params.size(), 0.0);
  report.numeric.assign(params.size(), 0.0);

  auto eval = [&](const std::vector<double>& p) {
    const double v = loss(std::span<const double>(p));
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
  };
  eval(params);

  for (std::size_t i = 0; i < params.size(); ++i) {
    const double theta = params[i];
    const double h = opts.step_scale * std::max(1.0, std::abs(theta));
    if (opts.skip && opts.skip(i, theta, h)) {
      ++report.skipped;
      continue;
    }
    params[i] = theta + h;
    const double up = eval(params);
    params[i] = theta - h;
    const double down = eval(params);
    params[i] = theta;

    const double fd = (up - down) / (2.0 * h);
    const double err = grad_rel_error(analytic[i], fd, opts.abs_floor);
    report.numeric[i] = fd;
    report.rel_error[i] = err;
    report.max_rel_error = std::max(report.max_rel_error, err);
    if (err > rel_tol) report.flagged.push_back(i);
  }
  return report;
}

}  // namespace attnprice
