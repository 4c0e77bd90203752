#include "fqdet/tensor.hpp"

#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fqdet::tc {

namespace {
std::atomic<std::int64_t> g_live_bytes{0};
std::atomic<std::int64_t> g_peak_bytes{0};

void track_alloc(std::int64_t bytes) {
  const std::int64_t live = g_live_bytes.fetch_add(bytes) + bytes;
  std::int64_t peak = g_peak_bytes.load();
  while (live > peak && !g_peak_bytes.compare_exchange_weak(peak, live)) {
  }
}

void track_free(std::int64_t bytes) { g_live_bytes.fetch_sub(bytes); }
}  // namespace

DType dtype_from_name(const std::string& name) {
  if (name == "float32") return DType::Float32;
  if (name == "float64") return DType::Float64;
  throw std::runtime_error("unknown dtype: " + name);
}

std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<std::int64_t>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

TensorImpl::TensorImpl(Shape s, DType dt, bool rg) : shape(std::move(s)), dtype(dt), requires_grad(rg) {
  for (std::int64_t d : shape) {
    if (d <= 0) throw std::runtime_error("tensor: non-positive dimension in shape " + shape_str(shape));
  }
  data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  track_alloc(static_cast<std::int64_t>(data.size() * dtype_size(dtype)));
}

TensorImpl::~TensorImpl() {
  track_free(static_cast<std::int64_t>((data.size() + grad.size()) * dtype_size(dtype)));
}

std::vector<double>& TensorImpl::ensure_grad() {
  if (grad.empty()) {
    grad.assign(data.size(), 0.0);
    track_alloc(static_cast<std::int64_t>(grad.size() * dtype_size(dtype)));
  }
  return grad;
}

void TensorImpl::quantize_data() {
  if (dtype != DType::Float32) return;
  for (double& v : data) v = static_cast<double>(static_cast<float>(v));
}

void TensorImpl::quantize_grad() {
  if (dtype != DType::Float32) return;
  for (double& v : grad) v = static_cast<double>(static_cast<float>(v));
}

Tensor Tensor::zeros(Shape shape, DType dtype, bool requires_grad) {
  return Tensor(std::make_shared<TensorImpl>(std::move(shape), dtype, requires_grad));
}

Tensor Tensor::full(Shape shape, double value, DType dtype, bool requires_grad) {
  Tensor t = zeros(std::move(shape), dtype, requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  t.impl()->quantize_data();
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, DType dtype, bool requires_grad) {
  Tensor t = zeros(std::move(shape), dtype, requires_grad);
  if (static_cast<std::int64_t>(values.size()) != t.numel()) {
    throw std::runtime_error("from_data: " + std::to_string(values.size()) + " values for shape " +
                             shape_str(t.shape()));
  }
  t.data() = std::move(values);
  t.impl()->quantize_data();
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw std::runtime_error("item(): tensor has " + std::to_string(numel()) + " elements");
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  return impl_->data[static_cast<std::size_t>(flat_index(shape(), idx))];
}

Tensor Tensor::detach() const {
  Tensor t = zeros(shape(), dtype(), false);
  t.data() = data();
  return t;
}

std::int64_t flat_index(const Shape& shape, std::initializer_list<std::int64_t> idx) {
  if (idx.size() != shape.size()) throw std::runtime_error("flat_index: rank mismatch");
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (std::int64_t i : idx) {
    if (i < 0 || i >= shape[k]) throw std::runtime_error("flat_index: index out of range");
    flat = flat * shape[k] + i;
    ++k;
  }
  return flat;
}

std::int64_t live_tensor_bytes() { return g_live_bytes.load(); }
std::int64_t peak_tensor_bytes() { return g_peak_bytes.load(); }
void reset_peak_tensor_bytes() { g_peak_bytes.store(g_live_bytes.load()); }

}  // namespace fqdet::tc
