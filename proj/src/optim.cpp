#include "dcvh/optim.hpp"

#include <cmath>

#include "dcvh/error.hpp"

namespace dcvh {

std::size_t ParamSet::add(std::string name, Tensor value) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Tensor grad(value.shape());
  params_.push_back(Param{std::move(name), std::move(value), std::move(grad)});
  return params_.size() - 1;
}

void ParamSet::accumulate(std::size_t i, const Tensor& g) {
  Param& p = params_.at(i);
  if (g.shape() != p.value.shape()) {
    throw DimensionError("gradient for '" + p.name + "' has shape " + shape_string(g.shape()) +
                         ", expected " + shape_string(p.value.shape()));
  }
  p.grad += g;
}

void ParamSet::zero_grad() {
  for (Param& p : params_) p.grad.fill(0.0);
}

std::optional<std::size_t> ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.value.size();
  return n;
}

double LrSchedule::rate(std::int64_t iteration) const {
  const auto steps = static_cast<double>(iteration / decay_every);
  return base_rate * std::pow(decay_factor, steps);
}

void LrSchedule::validate() const {
  if (!(base_rate > 0.0) || !std::isfinite(base_rate)) {
    throw ConfigError("learning rate must be positive");
  }
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw ConfigError("decay factor must lie in (0, 1]");
  }
  if (decay_every <= 0) throw ConfigError("decay interval must be positive");
}

void sgd_step(ParamSet& params, const LrSchedule& schedule, std::int64_t iteration, double scale) {
  for (const Param& p : params) {
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient for parameter '" + p.name + "'");
  }
  const double step = schedule.rate(iteration) * scale;
  for (Param& p : params) {
    auto v = p.value.data();
    auto g = p.grad.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= step * g[i];
  }
  params.zero_grad();
}

GradCheckResult grad_check(const LossAndGrad& loss_fn, ParamSet& params, double eps) {
  params.zero_grad();
  loss_fn(params);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const Param& p : params) analytic.push_back(p.grad);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = params.value(pi);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      params.zero_grad();
      const double up = loss_fn(params);
      value[i] = saved - eps;
      params.zero_grad();
      const double down = loss_fn(params);
      value[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      if (!(rel <= result.max_rel_error)) {
        result = {rel, params[pi].name, i, a, numeric};
      }
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace dcvh
