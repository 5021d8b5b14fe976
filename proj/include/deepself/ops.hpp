#pragma once

// Differentiable tensor operations. Each records itself on the current
// thread's tape when any input requires grad and recording is enabled.
// There is no implicit broadcasting; add_bias is the only exception.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "deepself/tensor.hpp"

namespace deepself {

enum class Activation { relu, sigmoid, tanh, identity };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation kind);

/// [m x k] . [k x n] -> [m x n]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Elementwise (Hadamard) product.
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// scale * x + shift, elementwise.
template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, T scale, T shift);

/// x [... x n] + bias [n], bias broadcast over every leading index.
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, Activation kind);

/// Sum of all elements, shape {1}.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

/// Same values, new shape with equal element count.
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

/// [B x C x S1..Sk x T] -> [B x T x (C*S1*..*Sk)]; rank >= 3. Time (last axis)
/// becomes the sequence axis; the remaining axes flatten channel-major.
template <typename T>
BasicTensor<T> to_sequence(const BasicTensor<T>& x);

/// seq [B x T x F] -> [B x F] at time step t.
template <typename T>
BasicTensor<T> select_step(const BasicTensor<T>& seq, std::size_t t);

/// T tensors of [B x F] -> [B x T x F].
template <typename T>
BasicTensor<T> stack_steps(const std::vector<BasicTensor<T>>& steps);

/// Concatenation along the last axis; leading axes must agree.
template <typename T>
BasicTensor<T> concat_last(const BasicTensor<T>& a, const BasicTensor<T>& b);

struct ConvGeometry {
  std::vector<std::size_t> stride;
  std::vector<std::size_t> padding;
};

/// N-d cross-correlation (kernels are not flipped) with zero padding and a
/// per-output-channel bias.
///   input   [C_in x S...] or batched [B x C_in x S...], spatial rank 1..3
///   kernels [C_out x C_in x K...]
///   bias    [C_out]
/// Output extent per axis follows conv_output_extent; extents < 1 are a
/// ConfigError naming the axis.
template <typename T>
BasicTensor<T> convolve_nd(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                           const BasicTensor<T>& bias, const ConvGeometry& geometry);

/// floor((in + 2*padding - kernel) / stride) + 1, or ConfigError when < 1.
std::size_t conv_output_extent(std::size_t in_extent, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

/// Row-wise softmax with max subtraction. Not recorded on the tape.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <typename T>
struct LossAndProbabilities {
  BasicTensor<T> loss;           // shape {1}, mean over batch
  BasicTensor<T> probabilities;  // [B x C]
};

template <typename T>
LossAndProbabilities<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                              std::span<const std::size_t> targets);

/// Central-difference gradient of a scalar function, evaluated in 64-bit.
template <typename T>
BasicTensor<double> finite_diff_grad(const std::function<double(const BasicTensor<T>&)>& f,
                                     const BasicTensor<T>& x, double h);

}  // namespace deepself
