#pragma once

#include <string>
#include <vector>

#include "core/ops.hpp"

namespace efcn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = true;
  std::string worst;  // where the largest discrepancy sat
};

// Compares reverse-mode gradients against central finite differences,
// (f(x+eps) - f(x-eps)) / (2 eps), in double precision.  `fn` must return a
// 1-element loss tensor built from `inputs`; every input coordinate is probed.
template <class F>
GradCheckReport gradcheck(F&& fn, const std::vector<Tensor<double>>& inputs,
                          double eps = 1e-5, double tol = 1e-4) {
  for (const auto& t : inputs)
    if (!t.requires_grad())
      throw ValidationError("gradcheck: input without requires_grad");

  Tensor<double> loss = fn();
  if (loss.numel() != 1)
    throw ValidationError(cat("gradcheck: loss must be scalar, got ", loss.shape().str()));
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& t : inputs) {
    if (t.has_grad())
      analytic.push_back(t.grad());
    else  // never reached the loss; the gradient is identically zero
      analytic.emplace_back(static_cast<size_t>(t.numel()), 0.0);
  }

  GradCheckReport rep;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double> t = inputs[ti];
    double* v = t.data();
    for (i64 j = 0; j < t.numel(); ++j) {
      const double saved = v[j];
      double lp, lm;
      {
        NoGradGuard ng;
        v[j] = saved + eps;
        lp = fn().data()[0];
        v[j] = saved - eps;
        lm = fn().data()[0];
      }
      v[j] = saved;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = analytic[ti][j];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double err = scale > 1e-6 ? std::abs(a - numeric) / scale : std::abs(a - numeric);
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst = cat("input ", ti, " coord ", j, ": analytic ", a, " numeric ", numeric);
      }
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace efcn
