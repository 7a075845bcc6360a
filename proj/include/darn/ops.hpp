#pragma once

#include <cstddef>
#include <vector>

#include "darn/tensor.hpp"

// Differentiable operators. Every op allocates a fresh output and, when an
// input requires grad and a tape is recording, pushes its backward closure.
namespace darn::ops {

// input [B,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding);

// input [B,Din], weight [Dout,Din], bias [Dout] or undefined.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

enum class Pointwise { Relu, Sigmoid, Log, Neg, AddConst, MulConst };

// `constant` is used by AddConst / MulConst only.
Tensor pointwise(const Tensor& input, Pointwise kind, double constant = 0.0);

inline Tensor relu(const Tensor& x) { return pointwise(x, Pointwise::Relu); }
inline Tensor sigmoid(const Tensor& x) { return pointwise(x, Pointwise::Sigmoid); }
inline Tensor log(const Tensor& x) { return pointwise(x, Pointwise::Log); }
inline Tensor neg(const Tensor& x) { return pointwise(x, Pointwise::Neg); }
inline Tensor add_const(const Tensor& x, double c) { return pointwise(x, Pointwise::AddConst, c); }
inline Tensor mul_const(const Tensor& x, double c) { return pointwise(x, Pointwise::MulConst, c); }

// Elementwise binary ops on identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// x * s where s.shape is a leading prefix of x.shape; s is broadcast over the
// trailing axes. Covers per-sample ([B]) and per-channel ([B,C]) scaling.
Tensor scale(const Tensor& x, const Tensor& s);

// [B,C,H,W] -> [B,C]
Tensor gap(const Tensor& input);

// [B,C,H,W] -> [B,C,out_h,out_w]; bin i covers [floor(i*H/out), ceil((i+1)*H/out)).
Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w);

// Bilinear with half-pixel centres (align_corners = false).
Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);

enum class Reduce { Sum, Mean, Var };

// Reduces over `axes` (removed from the output shape). Var is the population
// variance (divides by N).
Tensor reduce(const Tensor& input, Reduce kind, const std::vector<std::size_t>& axes);
// Reduction over every axis to a rank-0 tensor.
Tensor reduce_all(const Tensor& input, Reduce kind);

// Concatenate [B,Ci,H,W] tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& inputs);

Tensor reshape(const Tensor& input, Shape shape);

// Zero padding of the two spatial axes of [B,C,H,W].
Tensor pad2d(const Tensor& input, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right);

}  // namespace darn::ops
