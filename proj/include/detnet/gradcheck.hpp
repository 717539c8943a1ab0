#pragma once

#include <functional>
#include <vector>

#include "detnet/tensor.hpp"

namespace detnet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t coords_checked = 0;
  int worst_param = -1;
  std::int64_t worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool ok(double tol = 1e-5) const { return max_rel_error < tol; }
};

// Central-difference check in 64-bit precision. `f` evaluates the scalar
// function at the current contents of `params`; `analytic` holds the reference
// gradients, one per param. Coordinates are subsampled deterministically when a
// tensor exceeds max_coords_per_param. Relative error uses a denominator floor
// so near-zero gradients do not blow up the ratio:
//   rel = |a - n| / max(|a|, |n|, denom_floor)
GradCheckReport finite_diff_check(const std::function<double()>& f,
                                  const std::vector<Tensor64*>& params,
                                  const std::vector<const Tensor64*>& analytic,
                                  double epsilon = 1e-4,
                                  std::int64_t max_coords_per_param = 48,
                                  double denom_floor = 1e-2);

}  // namespace detnet
