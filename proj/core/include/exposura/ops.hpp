#pragma once

#include <span>

#include "exposura/tape.hpp"
#include "exposura/tensor.hpp"

// Differentiable operators. Every op records itself on the tape of its taped
// inputs (if any) and otherwise runs as a plain computation. Image tensors
// are NCHW.

namespace exposura {

/// kDirect is a loop-nest reference used to validate the im2col/GEMM path.
enum class ConvPath { kIm2col, kDirect };

/// weight: (out_c, in_c, k, k); bias: (out_c) or undefined for none.
/// Zero padding on all four sides.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int pad,
                 ConvPath path = ConvPath::kIm2col);

/// Adjoint of conv2d: weight is (in_c, out_c, k, k), i.e. the conv2d weight
/// that maps this op's output back to its input. Output extent is
/// (H - 1) * stride - 2 * pad + k.
template <typename T>
Tensor<T> conv2d_transposed(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                            int pad, ConvPath path = ConvPath::kIm2col);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

// Binary ops broadcast numpy-style (right-aligned, extent 1 stretches).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value);

// Reductions to a one-element tensor of shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// mean(|x|); the subgradient at 0 is taken as 0.
template <typename T>
Tensor<T> abs_mean(const Tensor<T>& x);
/// mean(x^2)
template <typename T>
Tensor<T> sq_mean(const Tensor<T>& x);

/// Non-overlapping factor x factor box average.
template <typename T>
Tensor<T> downsample_avg(const Tensor<T>& x, int factor);

/// Mirror padding without repeating the edge sample. An axis of extent 1
/// is replicated instead.
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, int pad);

template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::int64_t begin, std::int64_t count);

int conv_output_extent(std::int64_t in, int kernel, int stride, int pad);
int conv_transposed_output_extent(std::int64_t in, int kernel, int stride, int pad);

}  // namespace exposura
