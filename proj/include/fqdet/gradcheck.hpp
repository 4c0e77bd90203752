#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fqdet/rng.hpp"
#include "fqdet/tensor.hpp"

namespace fqdet::tc {

struct GradcheckResult {
  double max_rel_err = 0.0;
  int worst_input = -1;
  std::int64_t worst_coord = -1;
  std::int64_t coords_checked = 0;
};

/// Compares analytic gradients of a scalar-valued function against central
/// finite differences at the given point. Relative error per coordinate is
/// |analytic - numeric| / max(1, |numeric|). Inputs must be float64 and sit
/// away from kinks; non-finite values throw naming the coordinate.
GradcheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          std::vector<Tensor> point, double eps = 1e-6);

/// Samples a float64 tensor from U(lo, hi), resampling any coordinate whose
/// value lies within `margin` of a kink listed by `kinks`(value) -> distance.
Tensor sample_away_from_kinks(Rng& rng, Shape shape, double lo, double hi,
                              const std::function<double(double)>& distance_to_kink,
                              double margin = 1e-4);

}  // namespace fqdet::tc
