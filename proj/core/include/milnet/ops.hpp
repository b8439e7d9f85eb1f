#pragma once

#include <cstddef>
#include <vector>

#include "milnet/autodiff.hpp"

/// Differentiable operations over Graph variables. Every op validates shapes
/// and throws std::invalid_argument naming the offending shapes.
namespace milnet::ops {

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation of an NCHW input with an OIKhKw kernel.
Var conv2d(Var input, Var kernel, Conv2dParams params = {});

/// Adds bias[c] to every element of channel c of an NCHW tensor.
Var add_channel_bias(Var input, Var bias);

/// Max over window x window patches of each NCHW plane. Gradient goes to the
/// first maximal element (row-major order) of each window.
Var maxpool2d(Var input, std::size_t window, std::size_t stride);

Var relu(Var input);
Var sigmoid(Var input);

/// Contracts the channel axis: out[n,y,x] = sum_c weight[c]*in[n,c,y,x] + bias.
Var affine_channel(Var input, Var weight, Var bias);

Var reshape(Var input, Shape shape);

/// Clamps to [lo, hi]; gradient passes only where lo < x < hi.
Var clamp(Var input, double lo, double hi);

/// 1 - x.
Var one_minus(Var input);

/// Natural log; throws if any element is not strictly positive.
Var log(Var input);

Var scale(Var input, double factor);
Var add(Var a, Var b);

/// sum_i weights[i] * x[i], weights a constant of the same shape.
Var weighted_sum(Var input, const Tensor& weights);

Var reduce_sum(Var input);
Var l1_norm(Var input);
Var l2_norm_sq(Var input);

struct SortResult {
  Var sorted;
  /// perm[row*m + j] is the original column of sorted[row, j].
  std::vector<std::size_t> perm;
};

/// Sorts each row (last axis) in nonincreasing order. Ties keep the smaller
/// original index first. 1-D inputs are treated as a single row.
SortResult sort_descending(Var input);

}  // namespace milnet::ops
