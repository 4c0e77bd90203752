#include "fqdet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fqdet::tc {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::runtime_error(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                           shape_str(b));
}

void check_same_dtype(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype()) {
    throw std::runtime_error(std::string(op) + ": dtype mismatch " +
                             std::string(dtype_name(a.dtype())) + " vs " + dtype_name(b.dtype()));
  }
}

// Broadcast plan: per-output-dim strides into each operand, 0 on expanded dims.
struct BcastPlan {
  Shape out_shape;
  std::vector<std::int64_t> stride_a;
  std::vector<std::int64_t> stride_b;
  std::int64_t n = 0;
  bool same = false;  // identical shapes, fast path
};

std::vector<std::int64_t> row_major_strides(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] =
        s[static_cast<std::size_t>(i + 1)] * shape[static_cast<std::size_t>(i + 1)];
  }
  return s;
}

BcastPlan make_bcast(const char* op, const Shape& a, const Shape& b) {
  BcastPlan p;
  if (a == b) {
    p.out_shape = a;
    p.n = shape_numel(a);
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  p.out_shape.assign(rank, 1);
  Shape ap(rank, 1), bp(rank, 1);
  std::copy(a.begin(), a.end(), ap.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), bp.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  for (std::size_t d = 0; d < rank; ++d) {
    if (ap[d] == bp[d]) {
      p.out_shape[d] = ap[d];
    } else if (ap[d] == 1) {
      p.out_shape[d] = bp[d];
    } else if (bp[d] == 1) {
      p.out_shape[d] = ap[d];
    } else {
      shape_error(op, a, b);
    }
  }
  const auto sa = row_major_strides(ap);
  const auto sb = row_major_strides(bp);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  for (std::size_t d = 0; d < rank; ++d) {
    if (ap[d] != 1) p.stride_a[d] = sa[d];
    if (bp[d] != 1) p.stride_b[d] = sb[d];
  }
  p.n = shape_numel(p.out_shape);
  return p;
}

// Walks the broadcast iteration space calling f(ia, ib, i) per output element.
template <class F>
void bcast_walk(const BcastPlan& p, F f) {
  if (p.same) {
    for (std::int64_t i = 0; i < p.n; ++i) f(i, i, i);
    return;
  }
  const int rank = static_cast<int>(p.out_shape.size());
  std::vector<std::int64_t> counter(static_cast<std::size_t>(rank), 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t i = 0; i < p.n; ++i) {
    f(ia, ib, i);
    for (int d = rank - 1; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      ++counter[du];
      ia += p.stride_a[du];
      ib += p.stride_b[du];
      if (counter[du] < p.out_shape[du]) break;
      counter[du] = 0;
      ia -= p.stride_a[du] * p.out_shape[du];
      ib -= p.stride_b[du] * p.out_shape[du];
    }
  }
}

// Generic elementwise binary op. fwd(x, y) -> value; dfa/dfb(x, y, g) -> grad
// contributions to a and b.
template <class Fwd, class Dfa, class Dfb>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Dfa dfa, Dfb dfb) {
  check_same_dtype(name, a, b);
  BcastPlan plan = make_bcast(name, a.shape(), b.shape());
  const bool rec = tracing(a, b);
  Tensor out = Tensor::zeros(plan.out_shape, a.dtype(), rec);
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    bcast_walk(plan, [&](std::int64_t ia, std::int64_t ib, std::int64_t i) {
      po[i] = fwd(pa[ia], pb[ib]);
    });
    out.impl()->quantize_data();
  }
  if (rec) {
    auto ai = a.ptr();
    auto bi = b.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ai, bi, oi, plan, dfa, dfb]() {
      std::vector<double>* ga = ai->requires_grad ? &ai->ensure_grad() : nullptr;
      std::vector<double>* gb = bi->requires_grad ? &bi->ensure_grad() : nullptr;
      if (oi->grad.empty()) return;
      const double* pa = ai->data.data();
      const double* pb = bi->data.data();
      const double* g = oi->grad.data();
      bcast_walk(plan, [&](std::int64_t ia, std::int64_t ib, std::int64_t i) {
        if (ga) (*ga)[static_cast<std::size_t>(ia)] += dfa(pa[ia], pb[ib], g[i]);
        if (gb) (*gb)[static_cast<std::size_t>(ib)] += dfb(pa[ia], pb[ib], g[i]);
      });
      if (ga) ai->quantize_grad();
      if (gb) bi->quantize_grad();
    });
  }
  return out;
}

template <class Fwd, class Df>
Tensor unary_op(const Tensor& a, Fwd fwd, Df df) {
  const bool rec = tracing(a);
  Tensor out = Tensor::zeros(a.shape(), a.dtype(), rec);
  const std::int64_t n = a.numel();
  {
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    out.impl()->quantize_data();
  }
  if (rec) {
    auto ai = a.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ai, oi, df, n]() {
      auto& ga = ai->ensure_grad();
      if (oi->grad.empty()) return;
      const double* pa = ai->data.data();
      const double* po = oi->data.data();
      const double* g = oi->grad.data();
      for (std::int64_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += df(pa[i], po[i], g[i]);
      ai->quantize_grad();
    });
  }
  return out;
}

int normalize_axis(const char* op, int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw std::runtime_error(std::string(op) + ": axis out of range for rank " +
                             std::to_string(rank));
  }
  return axis;
}

// Decomposes shape around `axis` into [outer, n, inner].
void axis_split(const Shape& shape, int axis, std::int64_t& outer, std::int64_t& n,
                std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[static_cast<std::size_t>(d)];
  n = shape[static_cast<std::size_t>(axis)];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shape.size(); ++d) inner *= shape[d];
}

double stable_softplus(double t) {
  // log(1 + e^t) without overflow.
  if (t > 0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return g; }, [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return g; }, [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double g) { return g * y; },
      [](double x, double, double g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double g) { return g / y; },
      [](double x, double y, double g) { return -g * x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double g) { return x <= y ? g : 0.0; },
      [](double x, double y, double g) { return x <= y ? 0.0 : g; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double g) { return x >= y ? g : 0.0; },
      [](double x, double y, double g) { return x >= y ? 0.0 : g; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x + s; }, [](double, double, double g) { return g; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x * s; }, [s](double, double, double g) { return g * s; });
}

Tensor pow_scalar(const Tensor& a, double p) {
  return unary_op(
      a, [p](double x) { return std::pow(x, p); },
      [p](double x, double, double g) { return g * p * std::pow(x, p - 1.0); });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor clamp_max(const Tensor& a, double hi) {
  return unary_op(
      a, [hi](double x) { return x < hi ? x : hi; },
      [hi](double x, double, double g) { return x <= hi ? g : 0.0; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0 ? g : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return stable_sigmoid(x); },
      [](double, double y, double g) { return g * y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double, double y, double g) { return g * y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double, double g) { return g / x; });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::fabs(x); },
      [](double x, double, double g) { return x > 0 ? g : (x < 0 ? -g : 0.0); });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::runtime_error("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(shape));
  }
  const bool rec = tracing(a);
  Tensor out = Tensor::zeros(std::move(shape), a.dtype(), rec);
  out.data() = a.data();
  if (rec) {
    auto ai = a.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ai, oi]() {
      auto& ga = ai->ensure_grad();
      if (oi->grad.empty()) return;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::runtime_error("transpose: rank-2 only, got " + shape_str(a.shape()));
  const std::int64_t m = a.dim(0), n = a.dim(1);
  const bool rec = tracing(a);
  Tensor out = Tensor::zeros({n, m}, a.dtype(), rec);
  {
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
  }
  if (rec) {
    auto ai = a.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ai, oi, m, n]() {
      auto& ga = ai->ensure_grad();
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      for (std::int64_t j = 0; j < n; ++j)
        for (std::int64_t i = 0; i < m; ++i) ga[static_cast<std::size_t>(i * n + j)] += g[j * m + i];
      ai->quantize_grad();
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::runtime_error("concat: no inputs");
  const int rank = parts[0].rank();
  axis = normalize_axis("concat", axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  bool rec = false;
  for (const Tensor& t : parts) {
    check_same_dtype("concat", parts[0], t);
    if (t.rank() != rank) shape_error("concat", parts[0].shape(), t.shape());
    for (int d = 0; d < rank; ++d) {
      if (d != axis && t.dim(d) != parts[0].dim(d)) shape_error("concat", parts[0].shape(), t.shape());
    }
    out_shape[static_cast<std::size_t>(axis)] += t.dim(axis);
    rec = rec || tracing(t);
  }
  Tensor out = Tensor::zeros(out_shape, parts[0].dtype(), rec);

  std::int64_t outer, n_out, inner;
  axis_split(out_shape, axis, outer, n_out, inner);
  double* po = out.data().data();
  std::int64_t offset = 0;  // running offset along the concat axis
  struct Piece {
    std::shared_ptr<TensorImpl> impl;
    std::int64_t start, n;
  };
  std::vector<Piece> pieces;
  for (const Tensor& t : parts) {
    const std::int64_t n_t = t.dim(axis);
    const double* pt = t.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(pt + o * n_t * inner, pt + (o + 1) * n_t * inner,
                po + (o * n_out + offset) * inner);
    }
    pieces.push_back({t.ptr(), offset, n_t});
    offset += n_t;
  }
  if (rec) {
    auto oi = out.ptr();
    Tape::active()->record([oi, pieces, outer, n_out, inner]() {
      for (const Piece& p : pieces) {
        if (!p.impl->requires_grad) continue;
        p.impl->ensure_grad();
      }
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      for (const Piece& p : pieces) {
        if (!p.impl->requires_grad) continue;
        auto& ga = p.impl->grad;
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* gs = g + (o * n_out + p.start) * inner;
          double* gd = ga.data() + o * p.n * inner;
          for (std::int64_t i = 0; i < p.n * inner; ++i) gd[i] += gs[i];
        }
        p.impl->quantize_grad();
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len) {
  axis = normalize_axis("slice", axis, a.rank());
  if (start < 0 || len <= 0 || start + len > a.dim(axis)) {
    throw std::runtime_error("slice: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of bounds for axis size " +
                             std::to_string(a.dim(axis)));
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  const bool rec = tracing(a);
  Tensor out = Tensor::zeros(out_shape, a.dtype(), rec);

  std::int64_t outer, n, inner;
  axis_split(a.shape(), axis, outer, n, inner);
  {
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(pa + (o * n + start) * inner, pa + (o * n + start + len) * inner,
                po + o * len * inner);
    }
  }
  if (rec) {
    auto ai = a.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ai, oi, outer, n, inner, start, len]() {
      auto& ga = ai->ensure_grad();
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        double* gd = ga.data() + (o * n + start) * inner;
        const double* gs = g + o * len * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) gd[i] += gs[i];
      }
      ai->quantize_grad();
    });
  }
  return out;
}

Tensor index_select(const Tensor& a, int axis, const std::vector<std::int64_t>& indices) {
  axis = normalize_axis("index_select", axis, a.rank());
  const std::int64_t axis_n = a.dim(axis);
  for (std::int64_t idx : indices) {
    if (idx < 0 || idx >= axis_n) {
      throw std::runtime_error("index_select: index " + std::to_string(idx) +
                               " out of range for axis size " + std::to_string(axis_n));
    }
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = static_cast<std::int64_t>(indices.size());
  const bool rec = tracing(a);
  Tensor out = Tensor::zeros(out_shape, a.dtype(), rec);

  std::int64_t outer, n, inner;
  axis_split(a.shape(), axis, outer, n, inner);
  const std::int64_t k = static_cast<std::int64_t>(indices.size());
  {
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t j = 0; j < k; ++j) {
        const double* src = pa + (o * n + indices[static_cast<std::size_t>(j)]) * inner;
        std::copy(src, src + inner, po + (o * k + j) * inner);
      }
    }
  }
  if (rec) {
    auto ai = a.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ai, oi, indices, outer, n, inner, k]() {
      auto& ga = ai->ensure_grad();
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t j = 0; j < k; ++j) {
          double* gd = ga.data() + (o * n + indices[static_cast<std::size_t>(j)]) * inner;
          const double* gs = g + (o * k + j) * inner;
          for (std::int64_t i = 0; i < inner; ++i) gd[i] += gs[i];
        }
      }
      ai->quantize_grad();
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_dtype("matmul", a, b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const std::int64_t m = a.dim(0), kk = a.dim(1), n = b.dim(1);
  const bool rec = tracing(a, b);
  Tensor out = Tensor::zeros({m, n}, a.dtype(), rec);
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::int64_t i = 0; i < m; ++i) {
      double* orow = po + i * n;
      for (std::int64_t k = 0; k < kk; ++k) {
        const double av = pa[i * kk + k];
        if (av == 0.0) continue;
        const double* brow = pb + k * n;
        for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    out.impl()->quantize_data();
  }
  if (rec) {
    auto ai = a.ptr();
    auto bi = b.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ai, bi, oi, m, kk, n]() {
      std::vector<double>* ga = ai->requires_grad ? &ai->ensure_grad() : nullptr;
      std::vector<double>* gb = bi->requires_grad ? &bi->ensure_grad() : nullptr;
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      if (ga) {
        const double* pb = bi->data.data();
        for (std::int64_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (std::int64_t k = 0; k < kk; ++k) {
            const double* brow = pb + k * n;
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            (*ga)[static_cast<std::size_t>(i * kk + k)] += acc;
          }
        }
        ai->quantize_grad();
      }
      if (gb) {
        const double* pa = ai->data.data();
        for (std::int64_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (std::int64_t k = 0; k < kk; ++k) {
            const double av = pa[i * kk + k];
            if (av == 0.0) continue;
            double* gbrow = gb->data() + k * n;
            for (std::int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
        bi->quantize_grad();
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& a, int axis) {
  axis = normalize_axis("softmax", axis, a.rank());
  std::int64_t outer, n, inner;
  axis_split(a.shape(), axis, outer, n, inner);
  const bool rec = tracing(a);
  Tensor out = Tensor::zeros(a.shape(), a.dtype(), rec);
  {
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::int64_t base = o * n * inner + in;
        double mx = pa[base];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, pa[base + j * inner]);
        double z = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
          const double e = std::exp(pa[base + j * inner] - mx);
          po[base + j * inner] = e;
          z += e;
        }
        for (std::int64_t j = 0; j < n; ++j) po[base + j * inner] /= z;
      }
    }
    out.impl()->quantize_data();
  }
  if (rec) {
    auto ai = a.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ai, oi, outer, n, inner]() {
      auto& ga = ai->ensure_grad();
      if (oi->grad.empty()) return;
      const double* s = oi->data.data();
      const double* g = oi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * n * inner + in;
          double dot = 0.0;
          for (std::int64_t j = 0; j < n; ++j) dot += g[base + j * inner] * s[base + j * inner];
          for (std::int64_t j = 0; j < n; ++j) {
            const std::int64_t idx = base + j * inner;
            ga[static_cast<std::size_t>(idx)] += s[idx] * (g[idx] - dot);
          }
        }
      }
      ai->quantize_grad();
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_same_dtype("layer_norm", x, gamma);
  check_same_dtype("layer_norm", x, beta);
  const std::int64_t d = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
    shape_error("layer_norm", x.shape(), gamma.shape());
  }
  const std::int64_t rows = x.numel() / d;
  const bool rec = tracing(x, gamma) || tracing(beta);
  Tensor out = Tensor::zeros(x.shape(), x.dtype(), rec);
  // Cached per-row statistics reused by the backward step.
  auto mu = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  {
    const double* px = x.data().data();
    const double* pg = gamma.data().data();
    const double* pb = beta.data().data();
    double* po = out.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* row = px + r * d;
      double m = 0.0;
      for (std::int64_t j = 0; j < d; ++j) m += row[j];
      m /= static_cast<double>(d);
      double var = 0.0;
      for (std::int64_t j = 0; j < d; ++j) {
        const double c = row[j] - m;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double iv = 1.0 / std::sqrt(var + eps);
      (*mu)[static_cast<std::size_t>(r)] = m;
      (*inv)[static_cast<std::size_t>(r)] = iv;
      double* orow = po + r * d;
      for (std::int64_t j = 0; j < d; ++j) orow[j] = (row[j] - m) * iv * pg[j] + pb[j];
    }
    out.impl()->quantize_data();
  }
  if (rec) {
    auto xi = x.ptr();
    auto gi = gamma.ptr();
    auto bi = beta.ptr();
    auto oi = out.ptr();
    Tape::active()->record([xi, gi, bi, oi, mu, inv, rows, d]() {
      std::vector<double>* gx = xi->requires_grad ? &xi->ensure_grad() : nullptr;
      std::vector<double>* gg = gi->requires_grad ? &gi->ensure_grad() : nullptr;
      std::vector<double>* gb = bi->requires_grad ? &bi->ensure_grad() : nullptr;
      if (oi->grad.empty()) return;
      const double* px = xi->data.data();
      const double* pg = gi->data.data();
      const double* g = oi->grad.data();
      const double dn = static_cast<double>(d);
      for (std::int64_t r = 0; r < rows; ++r) {
        const double m = (*mu)[static_cast<std::size_t>(r)];
        const double iv = (*inv)[static_cast<std::size_t>(r)];
        const double* xrow = px + r * d;
        const double* grow = g + r * d;
        double sum_gh = 0.0, sum_ghx = 0.0;  // sums of gamma*g and gamma*g*xhat
        for (std::int64_t j = 0; j < d; ++j) {
          const double xh = (xrow[j] - m) * iv;
          const double gh = grow[j] * pg[j];
          sum_gh += gh;
          sum_ghx += gh * xh;
          if (gg) (*gg)[static_cast<std::size_t>(j)] += grow[j] * xh;
          if (gb) (*gb)[static_cast<std::size_t>(j)] += grow[j];
        }
        if (gx) {
          for (std::int64_t j = 0; j < d; ++j) {
            const double xh = (xrow[j] - m) * iv;
            const double gh = grow[j] * pg[j];
            (*gx)[static_cast<std::size_t>(r * d + j)] +=
                iv * (gh - sum_gh / dn - xh * sum_ghx / dn);
          }
        }
      }
      if (gx) xi->quantize_grad();
      if (gg) gi->quantize_grad();
      if (gb) bi->quantize_grad();
    });
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  check_same_dtype("conv2d", input, weight);
  check_same_dtype("conv2d", input, bias);
  if (input.rank() != 3 || weight.rank() != 4 || bias.rank() != 1) {
    shape_error("conv2d", input.shape(), weight.shape());
  }
  const std::int64_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::int64_t kh = weight.dim(0), kw = weight.dim(1);
  if (weight.dim(2) != cin || bias.dim(0) != weight.dim(3)) {
    shape_error("conv2d", input.shape(), weight.shape());
  }
  const std::int64_t cout = weight.dim(3);
  if (stride < 1) throw std::runtime_error("conv2d: stride must be >= 1");
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (w + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) shape_error("conv2d", input.shape(), weight.shape());

  const bool rec = tracing(input, weight) || tracing(bias);
  Tensor out = Tensor::zeros({oh, ow, cout}, input.dtype(), rec);
  {
    const double* pi = input.data().data();
    const double* pw = weight.data().data();
    const double* pb = bias.data().data();
    double* po = out.data().data();
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        double* orow = po + (oy * ow + ox) * cout;
        for (std::int64_t c = 0; c < cout; ++c) orow[c] = pb[c];
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          const std::int64_t iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const std::int64_t ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= w) continue;
            const double* irow = pi + (iy * w + ix) * cin;
            const double* wrow = pw + (ky * kw + kx) * cin * cout;
            for (std::int64_t ci = 0; ci < cin; ++ci) {
              const double v = irow[ci];
              if (v == 0.0) continue;
              const double* wc = wrow + ci * cout;
              for (std::int64_t c = 0; c < cout; ++c) orow[c] += v * wc[c];
            }
          }
        }
      }
    }
    out.impl()->quantize_data();
  }
  if (rec) {
    auto ii = input.ptr();
    auto wi = weight.ptr();
    auto bi = bias.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ii, wi, bi, oi, h, w, cin, kh, kw, cout, oh, ow, stride, pad]() {
      std::vector<double>* gin = ii->requires_grad ? &ii->ensure_grad() : nullptr;
      std::vector<double>* gw = wi->requires_grad ? &wi->ensure_grad() : nullptr;
      std::vector<double>* gb = bi->requires_grad ? &bi->ensure_grad() : nullptr;
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      const double* pi = ii->data.data();
      const double* pw = wi->data.data();
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const double* grow = g + (oy * ow + ox) * cout;
          if (gb) {
            for (std::int64_t c = 0; c < cout; ++c) (*gb)[static_cast<std::size_t>(c)] += grow[c];
          }
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= w) continue;
              const double* irow = pi + (iy * w + ix) * cin;
              const double* wrow = pw + (ky * kw + kx) * cin * cout;
              for (std::int64_t ci = 0; ci < cin; ++ci) {
                const double* wc = wrow + ci * cout;
                if (gin) {
                  double acc = 0.0;
                  for (std::int64_t c = 0; c < cout; ++c) acc += grow[c] * wc[c];
                  (*gin)[static_cast<std::size_t>((iy * w + ix) * cin + ci)] += acc;
                }
                if (gw) {
                  const double v = irow[ci];
                  if (v == 0.0) continue;
                  double* gwc = gw->data() + (ky * kw + kx) * cin * cout + ci * cout;
                  for (std::int64_t c = 0; c < cout; ++c) gwc[c] += v * grow[c];
                }
              }
            }
          }
        }
      }
      if (gin) ii->quantize_grad();
      if (gw) wi->quantize_grad();
      if (gb) bi->quantize_grad();
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  const bool rec = tracing(a);
  Tensor out = Tensor::zeros({1}, a.dtype(), rec);
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out.data()[0] = acc;
  out.impl()->quantize_data();
  if (rec) {
    auto ai = a.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ai, oi]() {
      auto& ga = ai->ensure_grad();
      if (oi->grad.empty()) return;
      const double g = oi->grad[0];
      for (double& v : ga) v += g;
      ai->quantize_grad();
    });
  }
  return out;
}

Tensor sum(const Tensor& a, int axis) {
  axis = normalize_axis("sum", axis, a.rank());
  std::int64_t outer, n, inner;
  axis_split(a.shape(), axis, outer, n, inner);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + axis);
  if (out_shape.empty()) out_shape = {1};
  const bool rec = tracing(a);
  Tensor out = Tensor::zeros(out_shape, a.dtype(), rec);
  {
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t j = 0; j < n; ++j) {
        const double* src = pa + (o * n + j) * inner;
        double* dst = po + o * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
    out.impl()->quantize_data();
  }
  if (rec) {
    auto ai = a.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ai, oi, outer, n, inner]() {
      auto& ga = ai->ensure_grad();
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t j = 0; j < n; ++j) {
          double* gd = ga.data() + (o * n + j) * inner;
          const double* gs = g + o * inner;
          for (std::int64_t i = 0; i < inner; ++i) gd[i] += gs[i];
        }
      }
      ai->quantize_grad();
    });
  }
  return out;
}

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean(const Tensor& a, int axis) {
  const int ax = normalize_axis("mean", axis, a.rank());
  return mul_scalar(sum(a, ax), 1.0 / static_cast<double>(a.dim(ax)));
}

Tensor max(const Tensor& a, int axis) {
  axis = normalize_axis("max", axis, a.rank());
  std::int64_t outer, n, inner;
  axis_split(a.shape(), axis, outer, n, inner);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + axis);
  if (out_shape.empty()) out_shape = {1};
  const bool rec = tracing(a);
  Tensor out = Tensor::zeros(out_shape, a.dtype(), rec);
  auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(outer * inner));
  {
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * n * inner + i;
        double best = pa[base];
        std::int64_t bj = 0;
        for (std::int64_t j = 1; j < n; ++j) {
          const double v = pa[base + j * inner];
          if (v > best) {
            best = v;
            bj = j;
          }
        }
        po[o * inner + i] = best;
        (*arg)[static_cast<std::size_t>(o * inner + i)] = bj;
      }
    }
  }
  if (rec) {
    auto ai = a.ptr();
    auto oi = out.ptr();
    Tape::active()->record([ai, oi, arg, outer, n, inner]() {
      auto& ga = ai->ensure_grad();
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t j = (*arg)[static_cast<std::size_t>(o * inner + i)];
          ga[static_cast<std::size_t>(o * n * inner + j * inner + i)] += g[o * inner + i];
        }
      }
      ai->quantize_grad();
    });
  }
  return out;
}

TopK top_k(const Tensor& a, std::int64_t k, int axis) {
  if (a.rank() > 2) throw std::runtime_error("top_k: rank-1 or rank-2 only");
  axis = normalize_axis("top_k", axis, a.rank());
  if (a.rank() == 2 && axis != 1) throw std::runtime_error("top_k: rank-2 supports the last axis only");
  const std::int64_t n = a.dim(axis);
  if (k < 1 || k > n) {
    throw std::runtime_error("top_k: k=" + std::to_string(k) + " out of range for axis size " +
                             std::to_string(n));
  }
  const std::int64_t rows = a.rank() == 2 ? a.dim(0) : 1;
  std::vector<std::int64_t> indices(static_cast<std::size_t>(rows * k));
  const double* pa = a.data().data();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = pa + r * n;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [row](std::int64_t x, std::int64_t y) {
                        if (row[x] != row[y]) return row[x] > row[y];
                        return x < y;
                      });
    std::copy(order.begin(), order.begin() + k, indices.begin() + r * k);
  }

  Tensor values;
  if (a.rank() == 1) {
    values = index_select(a, 0, indices);
  } else {
    // Row-wise gather expressed through flat selection on the reshaped input.
    std::vector<std::int64_t> flat(indices.size());
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < k; ++j)
        flat[static_cast<std::size_t>(r * k + j)] = r * n + indices[static_cast<std::size_t>(r * k + j)];
    values = reshape(index_select(reshape(a, {rows * n}), 0, flat), {rows, k});
  }
  return {values, std::move(indices)};
}

Tensor sigmoid_focal(const Tensor& logits, const Tensor& targets, double alpha, double gamma) {
  check_same_dtype("sigmoid_focal", logits, targets);
  if (logits.shape() != targets.shape()) shape_error("sigmoid_focal", logits.shape(), targets.shape());
  if (alpha < 0.0 || alpha > 1.0) throw std::runtime_error("sigmoid_focal: alpha outside [0,1]");
  if (gamma < 0.0) throw std::runtime_error("sigmoid_focal: negative gamma");
  const std::int64_t n = logits.numel();
  const bool rec = tracing(logits);
  Tensor out = Tensor::zeros(logits.shape(), logits.dtype(), rec);
  {
    const double* px = logits.data().data();
    const double* py = targets.data().data();
    double* po = out.data().data();
    for (std::int64_t i = 0; i < n; ++i) {
      const bool pos = py[i] > 0.5;
      const double s = pos ? 1.0 : -1.0;
      const double z = s * px[i];
      const double pt = stable_sigmoid(z);
      const double log_pt = -stable_softplus(-z);
      const double at = pos ? alpha : 1.0 - alpha;
      po[i] = -at * std::pow(1.0 - pt, gamma) * log_pt;
    }
    out.impl()->quantize_data();
  }
  if (rec) {
    auto xi = logits.ptr();
    auto yi = targets.ptr();
    auto oi = out.ptr();
    Tape::active()->record([xi, yi, oi, alpha, gamma, n]() {
      auto& gx = xi->ensure_grad();
      if (oi->grad.empty()) return;
      const double* px = xi->data.data();
      const double* py = yi->data.data();
      const double* g = oi->grad.data();
      for (std::int64_t i = 0; i < n; ++i) {
        const bool pos = py[i] > 0.5;
        const double s = pos ? 1.0 : -1.0;
        const double z = s * px[i];
        const double pt = stable_sigmoid(z);
        const double u = 1.0 - pt;
        const double log_pt = -stable_softplus(-z);
        const double at = pos ? alpha : 1.0 - alpha;
        const double dz = at * (gamma * pt * std::pow(u, gamma) * log_pt - std::pow(u, gamma + 1.0));
        gx[static_cast<std::size_t>(i)] += g[i] * s * dz;
      }
      xi->quantize_grad();
    });
  }
  return out;
}

}  // namespace fqdet::tc
