#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "vsor/autodiff.hpp"

namespace vsor {

/// Scalar-valued function of several tensors, built on the given tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // Forwarded to Tape::inject_gradient_fault for the analytic pass.
  double fault_factor = 1.0;
};

/// Max over all input elements of |analytic − central difference| /
/// max(1e-12, |analytic| + |numeric|).
inline double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                         const GradCheckOptions& opts = {}) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    tape.inject_gradient_fault(opts.fault_factor);
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    Var out = f(tape, vars);
    if (out.size() != 1) throw DimensionError("grad_check: function must return a scalar");
    if (!std::isfinite(out.value()[0])) throw NumericError("grad_check: non-finite function value");
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }

  auto evaluate = [&f](const std::vector<Tensor>& args) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : args) vars.push_back(tape.constant(t));
    const double v = f(tape, vars).value()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite value at perturbed point");
    return v;
  };

  double worst = 0.0;
  std::vector<Tensor> args = inputs;
  for (std::size_t k = 0; k < args.size(); ++k) {
    for (std::size_t i = 0; i < args[k].size(); ++i) {
      const double x0 = args[k][i];
      args[k][i] = x0 + opts.eps;
      const double up = evaluate(args);
      args[k][i] = x0 - opts.eps;
      const double down = evaluate(args);
      args[k][i] = x0;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic[k][i];
      if (!std::isfinite(a)) throw NumericError("grad_check: non-finite analytic gradient");
      const double err = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                         const GradCheckOptions& opts = {}) {
  return grad_check([&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); },
                    std::vector<Tensor>{x}, opts);
}

}  // namespace vsor
