#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tcnet/params.hpp"
#include "tcnet/tape.hpp"

namespace tcnet {

/// A scalar loss built on a fresh tape from bound parameters. Must be deterministic.
using LossFn = std::function<ad::Var(ad::Tape&, const BoundParams&)>;

struct GradCheckOptions {
  double eps = 1e-6;
  double tolerance = 1e-4;
  // Denominator floor so that tiny gradients are compared absolutely.
  double abs_floor = 1e-6;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  bool passed = true;
  double max_rel_error = 0.0;

  std::vector<std::string> failing() const {
    std::vector<std::string> out;
    for (const auto& p : params)
      if (!p.passed) out.push_back(p.name);
    return out;
  }
};

inline double evaluate_loss(const LossFn& fn, const ParamStore& params, bool with_grad) {
  ad::Tape tape;
  BoundParams bound(tape, params, with_grad);
  const double v = fn(tape, bound).scalar();
  if (!std::isfinite(v)) fail(ErrorKind::NonFiniteLoss, "loss evaluated to " + std::to_string(v));
  return v;
}

inline ParamStore tape_gradient(const LossFn& fn, const ParamStore& params) {
  ad::Tape tape;
  BoundParams bound(tape, params);
  ad::Var loss = fn(tape, bound);
  if (!std::isfinite(loss.scalar())) {
    fail(ErrorKind::NonFiniteLoss, "loss evaluated to " + std::to_string(loss.scalar()));
  }
  tape.backward(loss);
  return bound.gradients();
}

/// Central differences (f(x+eps) - f(x-eps)) / (2 eps), element by element.
inline ParamStore numeric_gradient(const LossFn& fn, const ParamStore& params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) fail(ErrorKind::InvalidArgument, "eps must lie in [1e-7, 1e-3]");
  ParamStore work = params;
  ParamStore grads;
  for (std::size_t p = 0; p < work.size(); ++p) {
    Matrix& value = work.entries()[p].value;
    Matrix g(value.rows(), value.cols());
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + eps;
      const double up = evaluate_loss(fn, work, false);
      value[i] = orig - eps;
      const double down = evaluate_loss(fn, work, false);
      value[i] = orig;
      g[i] = (up - down) / (2.0 * eps);
    }
    grads.add(work.entries()[p].name, std::move(g));
  }
  return grads;
}

inline GradCheckReport compare_gradients(const ParamStore& analytic, const ParamStore& numeric,
                                         const GradCheckOptions& opts = {}) {
  GradCheckReport report;
  for (std::size_t p = 0; p < analytic.size(); ++p) {
    const auto& a = analytic.entries()[p];
    const Matrix& n = numeric.at(a.name);
    require_same_shape(a.value, n, "compare_gradients");
    ParamCheck pc{a.name};
    for (std::size_t i = 0; i < n.size(); ++i) {
      const double denom = std::max({std::abs(a.value[i]), std::abs(n[i]), opts.abs_floor});
      pc.max_rel_error = std::max(pc.max_rel_error, std::abs(a.value[i] - n[i]) / denom);
    }
    pc.passed = pc.max_rel_error <= opts.tolerance;
    report.passed = report.passed && pc.passed;
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.params.push_back(std::move(pc));
  }
  return report;
}

inline GradCheckReport grad_check(const LossFn& fn, const ParamStore& params,
                                  const GradCheckOptions& opts = {}) {
  return compare_gradients(tape_gradient(fn, params), numeric_gradient(fn, params, opts.eps), opts);
}

}  // namespace tcnet
