#include "fqdet/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "fqdet/tape.hpp"

namespace fqdet::tc {

GradcheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                          std::vector<Tensor> point, double eps) {
  for (Tensor& t : point) {
    if (t.dtype() != DType::Float64) throw std::runtime_error("gradcheck: float64 inputs required");
    t.set_requires_grad(true);
    t.zero_grad();
  }

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(point);
    if (loss.numel() != 1) throw std::runtime_error("gradcheck: function must be scalar-valued");
    if (!std::isfinite(loss.item())) throw std::runtime_error("gradcheck: non-finite loss value");
    tape.backward(loss);
    for (Tensor& t : point) analytic.push_back(t.grad());
  }

  // Numeric pass, no tape.
  GradcheckResult result;
  NoGradScope off;
  for (std::size_t ti = 0; ti < point.size(); ++ti) {
    Tensor& t = point[ti];
    for (std::int64_t c = 0; c < t.numel(); ++c) {
      const double saved = t.data()[static_cast<std::size_t>(c)];
      t.data()[static_cast<std::size_t>(c)] = saved + eps;
      const double fp = f(point).item();
      t.data()[static_cast<std::size_t>(c)] = saved - eps;
      const double fm = f(point).item();
      t.data()[static_cast<std::size_t>(c)] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[ti][static_cast<std::size_t>(c)];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        throw std::runtime_error("gradcheck: non-finite gradient at input " + std::to_string(ti) +
                                 " coordinate " + std::to_string(c));
      }
      const double rel = std::fabs(a - numeric) / std::max(1.0, std::fabs(numeric));
      ++result.coords_checked;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_input = static_cast<int>(ti);
        result.worst_coord = c;
      }
    }
  }
  return result;
}

Tensor sample_away_from_kinks(Rng& rng, Shape shape, double lo, double hi,
                              const std::function<double(double)>& distance_to_kink,
                              double margin) {
  Tensor t = rng.uniform_tensor(std::move(shape), lo, hi);
  if (distance_to_kink) {
    for (double& v : t.data()) {
      int guard = 0;
      while (distance_to_kink(v) < margin && guard++ < 1000) v = rng.uniform(lo, hi);
      if (guard >= 1000) throw std::runtime_error("sample_away_from_kinks: no kink-free value found");
    }
  }
  return t;
}

}  // namespace fqdet::tc
