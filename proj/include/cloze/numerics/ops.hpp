#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cloze/numerics/rng.hpp"
#include "cloze/numerics/tensor.hpp"

// Differentiable operations. Shapes are never broadcast except along the
// leading (row) axes of `linear` and the per-row vectors of `layer_norm`.

namespace cloze::numerics {

/// [m x k] * [k x n]; dA = dC B^T, dB = A^T dC.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[..., in] * w[in x out] + bias[out]. `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

/// Normalizes along `axis` with max subtraction. NaN inputs propagate.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
/// Log-softmax along the last axis.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x);

/// Standardizes the last axis, then applies per-feature gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, std::size_t axis) {
  std::vector<Tensor<T>> v(parts);
  return concat(std::span<const Tensor<T>>(v), axis);
}
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::span<const std::size_t> sizes, std::size_t axis);

/// Matrix transpose.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Inverted dropout: kept units scaled by 1/(1-p). Identity when not
/// training or p == 0. The mask is a pure function of (ctx.seed, ctx.step,
/// op id, element index).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, ForwardContext& ctx);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Rows of `table` selected by `ids`; result is [ids.size() x dim].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::size_t> ids);

/// Rows of a matrix; a negative index yields an all-zero row.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::ptrdiff_t> rows);

/// sum_i weight[i] * -logp[i, target[i]] as a scalar.
template <typename T>
Tensor<T> nll_sum(const Tensor<T>& logp, std::span<const std::size_t> targets, std::span<const T> weights);

/// sum_i (pred[i] - target[i])^2 as a scalar.
template <typename T>
Tensor<T> squared_error_sum(const Tensor<T>& pred, std::span<const T> target);

/// Width-`width` valid convolution over `seq_len`-long sequences followed by
/// a max over time. x is [N*seq_len x c], w is [width*c x out]; result [N x out].
template <typename T>
Tensor<T> conv1d_maxpool(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t seq_len,
                         std::size_t width);

}  // namespace cloze::numerics
