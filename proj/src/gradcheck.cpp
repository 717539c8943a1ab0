#include "detnet/gradcheck.hpp"

#include <cmath>

namespace detnet {

GradCheckReport finite_diff_check(const std::function<double()>& f,
                                  const std::vector<Tensor64*>& params,
                                  const std::vector<const Tensor64*>& analytic,
                                  double epsilon, std::int64_t max_coords_per_param,
                                  double denom_floor) {
  DETNET_CHECK(params.size() == analytic.size(),
               "finite_diff_check: params/analytic count mismatch");
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor64& theta = *params[p];
    const Tensor64& ref = *analytic[p];
    DETNET_CHECK_T(theta.same_shape(ref), shape_error,
                   "finite_diff_check: param " << p << " gradient shape mismatch");
    const std::int64_t n = theta.size();
    const std::int64_t count = std::min(n, max_coords_per_param);
    for (std::int64_t j = 0; j < count; ++j) {
      const std::int64_t idx = (j * n) / count;  // deterministic spread
      const double saved = theta[idx];
      theta[idx] = saved + epsilon;
      const double plus = f();
      theta[idx] = saved - epsilon;
      const double minus = f();
      theta[idx] = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double a = ref[idx];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), denom_floor});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = static_cast<int>(p);
        report.worst_coord = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace detnet
