#include "hvpr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hvpr/error.hpp"

namespace hvpr {

namespace {

double evaluate(const std::string& op_name, const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  const double v = fn(inputs).item();
  if (!std::isfinite(v)) throw NumericError(op_name + ": non-finite value during gradient check");
  return v;
}

}  // namespace

GradReport finite_difference_check(const std::string& op_name, const ScalarFn& fn,
                                   std::vector<Tensor> inputs, double eps, double tol) {
  if (!(eps > 0.0)) throw ConfigError("finite_difference_check: eps must be positive");
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = fn(inputs);
  if (!out.all_finite()) throw NumericError(op_name + ": non-finite value during gradient check");
  out.backward();

  GradReport report;
  report.op_name = op_name;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(op_name, fn, inputs);
      values[i] = saved - eps;
      const double down = evaluate(op_name, fn, inputs);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double abs_err = std::abs(numeric - analytic[i]);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (abs_err / denom > report.max_rel_error) {
        report.max_rel_error = abs_err / denom;
        report.worst_input = k;
        report.worst_element = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace hvpr
