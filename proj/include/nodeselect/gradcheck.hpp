#pragma once

#include <cstdint>
#include <string>

#include "nodeselect/model.hpp"

namespace nodeselect {

enum class GradcheckMode { Soft, HardFrozen };

struct GradcheckOptions {
  GradcheckMode mode = GradcheckMode::Soft;
  std::size_t nodes = 6;
  std::size_t trials = 20;
  std::size_t feat_dim = 4;
  std::size_t classes = 3;
  std::size_t layers = 2;
  std::size_t depth = 1;
  Stacking stacking = Stacking::Parallel;
  double edge_prob = 0.4;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 1;
  double weight_scale = 1.0;  // multiplies the Glorot init
  // Negative control: perturbs one analytic gradient entry by 1%.
  bool corrupt_backward = false;
};

struct GradcheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "trial=<t> param=<layer.name> index=<i> analytic=<a> numeric=<n>"
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crossed a gate or relu kink
  bool passed = true;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Central finite differences of the full-model masked NLL against the
// analytic backward on random small graphs. Hard-frozen mode uses the
// frozen-gate gradient and skips coordinates whose perturbation flips a gate.
GradcheckResult run_gradcheck(const GradcheckOptions& opts);

}  // namespace nodeselect
