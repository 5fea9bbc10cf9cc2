#pragma once

// Central finite differences against reverse-mode gradients. The oracle
// only re-runs the forward function, so it stays independent of the
// backward implementation it checks.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sdst/tensor.hpp"

namespace sdst::test {

struct GradCheckResult {
  bool ok = true;
  double worst_abs_err = 0.0;
  std::string detail;
};

// forward: builds a scalar loss from the current values of `inputs`.
// Gradients are checked on every element of every input tensor.
inline GradCheckResult gradcheck(const std::function<ag::Tensor<double>()>& forward,
                                 std::vector<ag::Tensor<double>*> inputs, double h = 1e-5,
                                 double rtol = 1e-4, double atol = 1e-6) {
  GradCheckResult result;
  for (auto* t : inputs) t->grad().assign(t->size(), 0.0);
  ag::Tensor<double> loss = forward();
  ag::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto* t : inputs) analytic.push_back(t->grad());

  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti]->values();
    for (size_t i = 0; i < vals.size(); ++i) {
      double keep = vals[i];
      vals[i] = keep + h;
      double up = forward().item();
      vals[i] = keep - h;
      double down = forward().item();
      vals[i] = keep;
      double fd = (up - down) / (2 * h);
      double an = analytic[ti][i];
      double err = std::abs(fd - an);
      double tol = atol + rtol * std::max(std::abs(fd), std::abs(an));
      if (err > result.worst_abs_err) result.worst_abs_err = err;
      if (err > tol) {
        result.ok = false;
        result.detail = "input " + std::to_string(ti) + " elem " + std::to_string(i) + ": analytic " +
                        std::to_string(an) + " vs fd " + std::to_string(fd);
        return result;
      }
    }
  }
  return result;
}

}  // namespace sdst::test
