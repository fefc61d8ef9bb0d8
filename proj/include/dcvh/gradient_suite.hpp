#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dcvh {

struct GradSuiteEntry {
  std::string op;
  int seeds = 0;
  double worst_rel_error = 0.0;
  std::string worst_param;
  bool passed = false;
};

// Central-difference checks of every differentiable operation, each over
// `seeds` random instances, against `tolerance`.
std::vector<GradSuiteEntry> run_gradient_suite(int seeds = 20, double tolerance = 1e-5, double eps = 1e-5);

}  // namespace dcvh
