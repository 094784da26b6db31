#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lvp/tape.hpp"
#include "lvp/tensor.hpp"

// Differentiable operations. Each op records a backward rule on the active
// tape when any input requires a gradient; otherwise it is a plain forward
// computation. Instantiated for float and double.
namespace lvp::ops {

template <typename T> using TensorT = BasicTensor<T>;

// Elementwise, identical shapes.
template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> scale(const TensorT<T>& a, T factor);

// x[..., n] + bias[n].
template <typename T> TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& bias);

template <typename T> TensorT<T> relu(const TensorT<T>& x);
template <typename T> TensorT<T> leaky_relu(const TensorT<T>& x, T slope);
// tanh approximation.
template <typename T> TensorT<T> gelu(const TensorT<T>& x);
template <typename T> TensorT<T> tanh(const TensorT<T>& x);
// log σ(x), stable for large |x|.
template <typename T> TensorT<T> log_sigmoid(const TensorT<T>& x);

// Normalizes over the trailing axis.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-5));

// [M×K]·[K×N].
template <typename T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

// Rows of table[V×D] selected by indices → [n×D].
template <typename T> TensorT<T> embedding(const TensorT<T>& table, std::span<const int> indices);
template <typename T> TensorT<T> gather_rows(const TensorT<T>& x, std::span<const int> rows);

template <typename T> TensorT<T> reshape(const TensorT<T>& x, Shape shape);
template <typename T> TensorT<T> permute(const TensorT<T>& x, std::span<const std::size_t> axes);
template <typename T> TensorT<T> transpose(const TensorT<T>& x);

template <typename T> TensorT<T> sum(const TensorT<T>& x);
template <typename T> TensorT<T> mean(const TensorT<T>& x);
// mean((a − b)²).
template <typename T> TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b);

template <typename T> TensorT<T> softmax(const TensorT<T>& x, int axis = -1);
// Mean negative log-likelihood of targets under row-wise softmax(logits).
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, std::span<const int> targets);

// Forward identity; contributes no gradient to its input.
template <typename T> TensorT<T> stop_gradient(const TensorT<T>& x);
// Forward values of `quantized`; the whole upstream gradient goes to `encoded`.
template <typename T>
TensorT<T> straight_through(const TensorT<T>& encoded, const TensorT<T>& quantized);

// input [B×C×H×W], kernel [O×C×kh×kw], optional bias [O] → [B×O×H'×W'].
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                  std::size_t stride, std::size_t padding);
// Adjoint of conv2d with the same kernel: input [B×O×H'×W'] → [B×C×H×W];
// optional bias [C].
template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& input, const TensorT<T>& kernel,
                            const TensorT<T>& bias, std::size_t stride, std::size_t padding);

// x / sqrt(Σ_c x² + eps) over axis 1 of [B×C×H×W].
template <typename T> TensorT<T> channel_normalize(const TensorT<T>& x, T eps = T(1e-10));

// qkv [batch·len × 3·width] → [batch·len × width].
template <typename T>
TensorT<T> causal_attention(const TensorT<T>& qkv, std::size_t batch, std::size_t len,
                            std::size_t heads);

}  // namespace lvp::ops
