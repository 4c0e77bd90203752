#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace fqdet::tc {

enum class DType { Float32, Float64 };

inline std::size_t dtype_size(DType d) { return d == DType::Float32 ? 4 : 8; }
inline const char* dtype_name(DType d) { return d == DType::Float32 ? "float32" : "float64"; }
DType dtype_from_name(const std::string& name);

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor. Values are held as doubles regardless of dtype;
/// float32 tensors keep every element rounded to the nearest float so that
/// arithmetic matches single-precision storage while sharing one code path.
struct TensorImpl {
  Shape shape;
  DType dtype = DType::Float64;
  bool requires_grad = false;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation

  TensorImpl(Shape s, DType dt, bool rg);
  ~TensorImpl();
  TensorImpl(const TensorImpl&) = delete;
  TensorImpl& operator=(const TensorImpl&) = delete;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::vector<double>& ensure_grad();
  void quantize_data();
  void quantize_grad();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::Float64, bool requires_grad = false);
  static Tensor full(Shape shape, double value, DType dtype = DType::Float64,
                     bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values, DType dtype = DType::Float64,
                          bool requires_grad = false);
  static Tensor scalar(double value, DType dtype = DType::Float64);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return impl_->numel(); }
  DType dtype() const { return impl_->dtype; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<double>& grad() { return impl_->ensure_grad(); }
  const std::vector<double>& grad() const { return impl_->grad; }
  void zero_grad();

  double item() const;
  double at(std::initializer_list<std::int64_t> idx) const;

  /// Value copy detached from any tape (requires_grad = false).
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

std::int64_t flat_index(const Shape& shape, std::initializer_list<std::int64_t> idx);

// Allocator statistics backing the bench memory proxy.
std::int64_t live_tensor_bytes();
std::int64_t peak_tensor_bytes();
void reset_peak_tensor_bytes();

}  // namespace fqdet::tc
