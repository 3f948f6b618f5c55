#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hvpr/tensor.hpp"

namespace hvpr {

struct GradReport {
  std::string op_name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
  // Where the worst relative error occurred.
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares the reverse-mode gradient of `fn` with respect to every element of
// every input against central differences (f(x+eps) − f(x−eps)) / (2·eps).
// Relative error uses max(|analytic|, |numeric|, 1e-8) as the denominator.
// Throws NumericError naming `op_name` when an evaluation is non-finite.
GradReport finite_difference_check(const std::string& op_name, const ScalarFn& fn,
                                   std::vector<Tensor> inputs, double eps, double tol);

}  // namespace hvpr
