#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rp3d/tensor.hpp"

namespace rp3d {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int n_checked = 0;
  std::string worst_param;
  int worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool ok(double tol) const { return max_rel_err <= tol; }
};

// Compares reverse-mode gradients of `f` (a scalar-producing closure over
// `params`) against central differences. `f` is re-evaluated with perturbed
// parameter values, so it must be deterministic given those values.
//
// Relative error per coordinate: |a - n| / max(|a|, |n|, 1e-8).
// With max_coords_per_param > 0, at most that many coordinates per parameter
// are tested, chosen by a seeded draw; otherwise every coordinate is tested.
GradCheckResult gradcheck(const std::function<Tensor()>& f,
                          const std::vector<Tensor>& params, double eps = 1e-5,
                          int max_coords_per_param = 0,
                          std::uint64_t sample_seed = 1234);

}  // namespace rp3d
