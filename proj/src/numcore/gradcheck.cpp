#include "wflow/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "wflow/errors.hpp"

namespace wflow {
namespace {

double evaluate(const LossBuilder& loss, const std::vector<Tensor>& params, std::vector<Tensor>* grads) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  Var out = loss(tape, vars);
  const double value = out.value().item();
  if (!std::isfinite(value)) throw NumericError("gradient check: non-finite loss");
  if (grads) *grads = tape.grad(out, Tensor::scalar(1.0));
  return value;
}

}  // namespace

GradCheckReport check_gradient_fd(const LossBuilder& loss, const std::vector<Tensor>& params, double rel_tol) {
  GradCheckReport report;
  std::vector<Tensor> analytic;
  const double base = evaluate(loss, params, &analytic);
  const double floor = 1e-4 * std::max(1.0, std::abs(base));

  std::vector<Tensor> probe = params;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t k = 0; k < params[t].size(); ++k) {
      ++report.parameter_count;
      const double p = params[t][k];
      const double h = 1e-5 * (1.0 + std::abs(p));
      probe[t][k] = p + h;
      const double up = evaluate(loss, probe, nullptr);
      probe[t][k] = p - h;
      const double down = evaluate(loss, probe, nullptr);
      probe[t][k] = p;
      const double fd = (up - down) / (2.0 * h);
      const double g = analytic[t][k];
      const double err = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), floor});
      if (err > report.max_rel_error || report.parameter_count == 1) {
        report.max_rel_error = err;
        report.worst_tensor = t;
        report.worst_entry = k;
        report.analytic = g;
        report.numeric = fd;
      }
    }
  }
  report.pass = report.max_rel_error <= rel_tol;
  report.nondifferentiable_suspect =
      !report.pass && std::abs(report.analytic) <= floor && std::abs(report.numeric) > 1e3 * floor;
  std::ostringstream os;
  os << (report.pass ? "pass" : "fail") << ": max rel error " << report.max_rel_error << " over "
     << report.parameter_count << " params (worst tensor " << report.worst_tensor << " entry "
     << report.worst_entry << ": tape " << report.analytic << " vs fd " << report.numeric << ")";
  if (report.nondifferentiable_suspect) os << "; loss looks non-differentiable at this point";
  report.message = os.str();
  return report;
}

}  // namespace wflow
