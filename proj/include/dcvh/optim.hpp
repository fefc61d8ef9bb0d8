#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dcvh/tensor.hpp"

namespace dcvh {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Named parameters, each paired with a gradient buffer of identical shape.
// Insertion order is preserved and defines iteration order.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }

  Tensor& value(std::size_t i) { return params_[i].value; }
  const Tensor& value(std::size_t i) const { return params_[i].value; }
  Tensor& grad(std::size_t i) { return params_[i].grad; }

  // Adds `g` into the gradient buffer of parameter `i`.
  void accumulate(std::size_t i, const Tensor& g);
  void zero_grad();

  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Param> params_;
};

struct LrSchedule {
  double base_rate = 1e-4;
  double decay_factor = 0.9;
  std::int64_t decay_every = 1000;

  // base_rate * decay_factor^floor(t / decay_every)
  double rate(std::int64_t iteration) const;
  void validate() const;
};

// p <- p - rate(iteration) * scale * grad(p), then gradients are zeroed.
// Every gradient is checked for finiteness before any parameter moves.
void sgd_step(ParamSet& params, const LrSchedule& schedule, std::int64_t iteration, double scale);

// Computes the loss and writes the analytic gradient into `params` grads.
using LossAndGrad = std::function<double(ParamSet&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central-difference check of every scalar in `params`. Relative error is
// |a - n| / (|a| + |n| + 1e-12); the worst one is reported.
GradCheckResult grad_check(const LossAndGrad& loss_fn, ParamSet& params, double eps = 1e-5);

}  // namespace dcvh
