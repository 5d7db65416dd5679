#include "wflow/velocity_field.hpp"

#include <cmath>
#include <string>

namespace wflow {
namespace {
constexpr double kTimeSlack = 1e-12;
}

bool TimeInterval::contains(double t) const {
  const double slack = kTimeSlack * std::max(1.0, std::abs(end) + std::abs(begin));
  return t >= begin - slack && t <= end + slack;
}

bool TimeInterval::contains(const TimeInterval& other) const {
  return contains(other.begin) && contains(other.end) && other.begin <= other.end;
}

DivergenceEstimator DivergenceEstimator::default_for(std::size_t dim) {
  return dim <= 8 ? exact() : hutchinson(8);
}

void DivergenceEstimator::validate() const {
  if (mode == Mode::hutchinson && probes == 0) {
    throw std::invalid_argument("Hutchinson divergence estimator needs at least one probe");
  }
}

DivergencePlan DivergencePlan::make(const DivergenceEstimator& est, std::size_t rows, std::size_t dim, Rng& rng) {
  est.validate();
  DivergencePlan plan{est, {}};
  if (est.mode == DivergenceEstimator::Mode::hutchinson) {
    for (std::size_t k = 0; k < est.probes; ++k) plan.probes.push_back(rng.rademacher_tensor(rows, dim));
  }
  return plan;
}

VelocityField::VelocityField(std::size_t dim, Mlp net, TimeInterval interval, double time_scale)
    : dim_(dim), net_(std::move(net)), interval_(interval), time_scale_(time_scale) {
  if (dim_ == 0) throw ShapeError("velocity field dimension must be positive");
  if (!(interval_.begin < interval_.end)) throw std::invalid_argument("velocity field interval must satisfy t_a < t_b");
  if (!(time_scale_ > 0)) throw std::invalid_argument("time scale must be positive");
  if (net_.in_width() != dim_ + 1) {
    throw ShapeError("velocity network input width " + std::to_string(net_.in_width()) + " != d + 1");
  }
  if (net_.out_width() != dim_) throw ShapeError("velocity network output width must equal d");
}

void VelocityField::check_time(double t) const {
  if (!interval_.contains(t)) {
    throw std::out_of_range("time " + std::to_string(t) + " outside field interval [" +
                            std::to_string(interval_.begin) + ", " + std::to_string(interval_.end) + "]");
  }
}

VelocityField init_near_identity(std::size_t dim, std::span<const std::size_t> widths, std::uint64_t seed,
                                 TimeInterval interval, double time_scale, Activation activation) {
  if (dim == 0) throw ShapeError("init_near_identity: dimension must be positive");
  if (widths.empty()) throw std::invalid_argument("init_near_identity: at least one hidden width required");
  return VelocityField(dim, Mlp::init(dim + 1, widths, dim, activation, seed, true), interval, time_scale);
}

Tensor eval_velocity(const VelocityField& field, const Tensor& x, double t) {
  field.check_time(t);
  const std::vector<Tensor> params = field.parameters();
  return evaluate_field<Tensor>(field, params, x, t, nullptr).velocity;
}

Tensor divergence(const VelocityField& field, const Tensor& x, double t, const DivergenceEstimator& est, Rng& rng) {
  field.check_time(t);
  const DivergencePlan plan = DivergencePlan::make(est, x.rows(), field.dim(), rng);
  const std::vector<Tensor> params = field.parameters();
  return *evaluate_field<Tensor>(field, params, x, t, &plan).divergence;
}

}  // namespace wflow
