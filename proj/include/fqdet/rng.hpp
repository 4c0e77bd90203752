#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "fqdet/tensor.hpp"

namespace fqdet::tc {

/// mt19937_64 with self-contained distributions, so one seed gives one
/// stream of values independent of the standard library build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive bounds
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(gen_() % span);
  }

  double normal() {
    // Box-Muller, one value per call.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Derives an independent stream, e.g. per (seed, epoch) or (seed, index).
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a * 0x9E3779B97F4A7C15ull + b + 0x85EBCA77C2B2AE63ull;
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi, DType dtype = DType::Float64,
                        bool requires_grad = false) {
    Tensor t = Tensor::zeros(std::move(shape), dtype, requires_grad);
    for (double& v : t.data()) v = uniform(lo, hi);
    t.impl()->quantize_data();
    return t;
  }

  Tensor normal_tensor(Shape shape, double stddev = 1.0, DType dtype = DType::Float64,
                       bool requires_grad = false) {
    Tensor t = Tensor::zeros(std::move(shape), dtype, requires_grad);
    for (double& v : t.data()) v = normal() * stddev;
    t.impl()->quantize_data();
    return t;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace fqdet::tc
