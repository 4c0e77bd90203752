#pragma once

#include <vector>

#include "fqdet/tape.hpp"
#include "fqdet/tensor.hpp"

namespace fqdet::tc {

// Elementwise binary ops with numpy-style broadcasting. Both operands must
// share a dtype; shape mismatches throw naming the op and both shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

// Scalar ops.
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor pow_scalar(const Tensor& a, double p);  // non-integer p needs positive inputs
Tensor neg(const Tensor& a);
Tensor clamp_max(const Tensor& a, double hi);

// Elementwise unary ops.
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);

// Shape ops.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank-2
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len);
Tensor index_select(const Tensor& a, int axis, const std::vector<std::int64_t>& indices);

// Contractions and NN building blocks.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& a, int axis);
/// Normalizes over the last axis with eps inside the square root; a constant
/// row therefore normalizes to zero before the affine rescale.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// input [H,W,Cin], weight [KH,KW,Cin,Cout], bias [Cout]; zero padding.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad);

// Reductions.
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis);
Tensor max(const Tensor& a, int axis);  // ties resolve to the first maximum

/// Top-k along an axis of a rank-1 or rank-2 tensor, descending, ties by
/// lower index. Values are differentiable; indices are plain integers.
struct TopK {
  Tensor values;
  std::vector<std::int64_t> indices;  // row-major for rank-2
};
TopK top_k(const Tensor& a, std::int64_t k, int axis = 0);

/// Per-element sigmoid focal loss from logits, computed in logit space so no
/// log ever sees 0. Targets must be 0/1 and are treated as constants.
Tensor sigmoid_focal(const Tensor& logits, const Tensor& targets, double alpha, double gamma);

}  // namespace fqdet::tc
