#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "srf/tensor.hpp"

namespace srf {

// Elementwise binary operators. Operands share a rank; each extent must be
// equal or 1 on one side (broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Sum / mean of all elements, returned with shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, int axis);
inline Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

/// Subtracts the mean along `axis`.
Tensor center(const Tensor& x, int axis);

/// x / sqrt(sum(x^2) + eps) along `axis`.
Tensor l2_normalize(const Tensor& x, int axis, double eps = 1e-12);

/// [M,K]·[K,N] or batched [B,M,K]·[B,K,N]; trans flags transpose the last
/// two axes of the corresponding operand.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

/// Fully connected layer: x [N,in], weight [out,in], optional bias [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

/// 2-D cross-correlation. weight [C_out, C_in/groups, k, k], optional bias [C_out].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {}, int stride = 1, int padding = 0,
              int groups = 1);

enum class PoolMode { average, global_average };

/// Average pooling onto an out_h×out_w grid whose extents divide the input's.
/// global_average ignores out_h/out_w beyond validation and returns N×C×1×1.
Tensor pool2d(const Tensor& input, PoolMode mode, std::int64_t out_h, std::int64_t out_w);
inline Tensor global_avg_pool(const Tensor& input) { return pool2d(input, PoolMode::global_average, 1, 1); }

/// Per-sample, per-channel normalization over H×W with learned gain/bias [C].
Tensor channel_norm(const Tensor& input, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// N×C×H×W times an N×C×1×1 gain.
Tensor scale_channels(const Tensor& input, const Tensor& gains);

/// Rows of an N×C×H×W map at flat pixel indices (n·H·W + y·W + x); result [A, C].
Tensor gather_pixels(const Tensor& input, std::span<const std::int64_t> pixels);

}  // namespace srf
