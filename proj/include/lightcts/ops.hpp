#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lightcts/tensor.hpp"

// Differentiable tensor operations. Every function records itself on the
// active tape (see TapeScope) when one of its inputs requires a gradient.
namespace lightcts::ops {

// a[..., m, k] x b[k, n] -> [..., m, n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Block-diagonal product: the last axis of x is split into G equal groups
// and group g is multiplied by w[g]. x[..., G*in] x w[G, in, out] ->
// [..., G*out]. With G == 1 this is exactly matmul.
Tensor grouped_matmul(const Tensor& x, const Tensor& w);

// Batched product with matching leading dims: a[..., m, k] x b[..., k, n].
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor swap_axes(const Tensor& x, int axis_a, int axis_b);

// Binary ops broadcast with numpy rules (size-1 or missing leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

// Softmax over the last axis. Entries equal to -inf or to the lowest finite
// double are treated as masked and come out exactly 0; a row with every
// entry masked throws DegenerateMaskError.
Tensor softmax_rows(const Tensor& x);

// Replaces scores[..., i, j] by the lowest finite double where
// mask[i * n + j] == 0. The mask is n x n and broadcast over leading axes.
Tensor mask_fill(const Tensor& scores, std::span<const std::uint8_t> mask);

// Causal dilated convolution over the time axis of h[..., P, Din] with
// weights w[Dout, Din / groups, K]. Tap k reads time t - dilation * k;
// reads before t = 0 are zero. Output channel o belongs to group
// o / (Dout / groups) and sees only that group's input channel block.
Tensor dilated_causal_conv1d(const Tensor& h, const Tensor& w,
                             const std::optional<Tensor>& bias,
                             std::size_t dilation, std::size_t groups = 1);

// out[..., j] = x[..., perm[j]]
Tensor permute_channels(const Tensor& x, const std::vector<std::size_t>& perm);

// Drops `axis`, keeping slice `index`.
Tensor select(const Tensor& x, int axis, std::size_t index);
// Mean over `axis`, which is removed.
Tensor mean(const Tensor& x, int axis);
Tensor sum(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Mean absolute error over all entries; subgradient 0 at exact ties.
Tensor mae_loss(const Tensor& pred, const Tensor& truth);

}  // namespace lightcts::ops
