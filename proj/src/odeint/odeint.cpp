#include "wflow/odeint.hpp"

#include <string>

namespace wflow {

std::string_view scheme_name(Scheme s) { return s == Scheme::euler ? "euler" : "rk4"; }

Scheme parse_scheme(std::string_view name) {
  if (name == "euler") return Scheme::euler;
  if (name == "rk4") return Scheme::rk4;
  throw FormatError("unknown integration scheme '" + std::string(name) + "'");
}

void IntegratorConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("integrator needs at least one step");
  if (!(interval.begin < interval.end)) throw std::invalid_argument("integrator interval must satisfy t_a < t_b");
}

Tensor integrate(const VelocityField& field, const Tensor& x0, const IntegratorConfig& cfg, Direction dir) {
  const std::vector<Tensor> params = field.parameters();
  return integrate_field<Tensor>(field, params, x0, cfg, dir);
}

AugmentedState<Tensor> integrate_augmented(const VelocityField& field, const Tensor& x0, const IntegratorConfig& cfg,
                                           const DivergenceEstimator& est, Rng& rng, Direction dir) {
  const std::vector<Tensor> params = field.parameters();
  const DivergencePlan plan = DivergencePlan::make(est, x0.rows(), field.dim(), rng);
  return integrate_field_augmented<Tensor>(field, params, x0, cfg, plan, dir);
}

double mean_squared_displacement(const Tensor& start, const Tensor& end) {
  if (!start.same_shape(end)) throw ShapeError("displacement: shape mismatch");
  return (end.matrix() - start.matrix()).rowwise().squaredNorm().mean();
}

}  // namespace wflow
