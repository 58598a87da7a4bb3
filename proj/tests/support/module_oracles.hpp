#pragma once

// Loop references for the composite layers, built only from oracles.hpp
// helpers and raw parameter buffers.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "lightcts/glformer.hpp"
#include "lightcts/ltcn.hpp"
#include "support/oracles.hpp"

namespace lightcts::oracle {

using BoolMask = std::vector<std::vector<bool>>;

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline BoolMask to_bool(const MaskMatrix& m) {
  BoolMask b(m.n, std::vector<bool>(m.n));
  for (std::size_t i = 0; i < m.n; ++i)
    for (std::size_t j = 0; j < m.n; ++j) b[i][j] = m.at(i, j);
  return b;
}

// Grid-transpose channel shuffle over rows of width d.
inline std::vector<double> shuffle(std::span<const double> h, std::size_t rows, std::size_t d,
                                   std::size_t g) {
  std::vector<double> out(h.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = h[r * d + (j % g) * (d / g) + j / g];
  return out;
}

// Shuffle, then a dense causal convolution with the block-sparse expansion of
// the grouped weight, plus optional bias. h is [N][P][D] flat.
inline std::vector<double> sgtcn(std::span<const double> h, std::size_t n, std::size_t p,
                                 const SgtcnBranch& branch, std::size_t dilation,
                                 std::size_t groups) {
  const std::size_t d = branch.weight.dim(0), taps = branch.weight.dim(2);
  const auto shuffled = shuffle(h, n * p, d, groups);
  const auto dense = block_sparse_weight(branch.weight.data(), d, d, taps, groups);
  auto out = causal_conv(shuffled, dense, n, p, d, d, taps, dilation);
  if (branch.bias)
    for (std::size_t r = 0; r < n * p; ++r)
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] += (*branch.bias)[c];
  return out;
}

inline std::vector<double> ltcn_layer(std::span<const double> h, std::size_t n, std::size_t p,
                                      const LtcnLayerParams& layer, std::size_t dilation,
                                      std::size_t groups) {
  const auto o = sgtcn(h, n, p, layer.out, dilation, groups);
  const auto g = sgtcn(h, n, p, layer.gate, dilation, groups);
  std::vector<double> y(o.size());
  for (std::size_t i = 0; i < o.size(); ++i) y[i] = std::tanh(o[i]) * sigmoid(g[i]);
  return y;
}

// h is N x D.
inline Matrix se(const Matrix& h, const SeParams& p) {
  const std::size_t n = h.size(), d = h[0].size(), r = p.squeeze.dim(0);
  std::vector<double> pooled(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) pooled[c] += h[i][c] / static_cast<double>(n);
  std::vector<double> z(r, 0.0), att(d, 0.0);
  for (std::size_t k = 0; k < r; ++k) {
    for (std::size_t c = 0; c < d; ++c) z[k] += p.squeeze[k * d + c] * pooled[c];
    z[k] = std::max(z[k], 0.0);
  }
  for (std::size_t c = 0; c < d; ++c) {
    double acc = 0.0;
    for (std::size_t k = 0; k < r; ++k) acc += p.excite[c * r + k] * z[k];
    att[c] = sigmoid(acc);
  }
  Matrix out = h;
  for (auto& row : out)
    for (std::size_t c = 0; c < d; ++c) row[c] *= att[c];
  return out;
}

inline Matrix group_matrix(const Tensor& grouped, std::size_t g) {
  const std::size_t rows = grouped.dim(1), cols = grouped.dim(2);
  return to_matrix(grouped.data().subspan(g * rows * cols, rows * cols), rows, cols);
}

// Slice channels per group, run single-group attention, concatenate.
inline Matrix l_mha(const Matrix& x, const MhaParams& p, std::size_t heads, const BoolMask* mask) {
  const std::size_t groups = p.query.dim(0), dg = p.query.dim(1);
  Matrix out(x.size(), std::vector<double>(groups * dg));
  for (std::size_t g = 0; g < groups; ++g) {
    Matrix slice(x.size(), std::vector<double>(dg));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t c = 0; c < dg; ++c) slice[i][c] = x[i][g * dg + c];
    const Matrix part = attention(slice, group_matrix(p.query, g), group_matrix(p.key, g),
                                  group_matrix(p.value, g), heads, mask);
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t c = 0; c < dg; ++c) out[i][g * dg + c] = part[i][c];
  }
  return out;
}

// Full first layer, dense block-diagonal second layer.
inline Matrix l_ffn(const Matrix& x, const FfnParams& p) {
  const std::size_t d = x[0].size(), dh = p.w1.dim(1), groups = p.w2.dim(0);
  const std::size_t in = dh / groups, out = d / groups;
  Matrix hidden = matmul(x, to_matrix(p.w1.data(), d, dh));
  for (auto& row : hidden)
    for (std::size_t j = 0; j < dh; ++j) row[j] = std::max(0.0, row[j] + p.b1[j]);
  Matrix dense(dh, std::vector<double>(d, 0.0));
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t r = 0; r < in; ++r)
      for (std::size_t c = 0; c < out; ++c) dense[g * in + r][g * out + c] = p.w2[(g * in + r) * out + c];
  Matrix y = matmul(hidden, dense);
  for (auto& row : y)
    for (std::size_t j = 0; j < d; ++j) row[j] += p.b2[j];
  return y;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  Matrix c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) c[i][j] += b[i][j];
  return c;
}

inline Matrix attention_block(const Matrix& x, const AttentionBlockParams& p, std::size_t heads,
                              const BoolMask* mask) {
  const Matrix y = layer_norm(add(x, l_mha(x, p.mha, heads, mask)), values(p.norm1_gain),
                              values(p.norm1_bias));
  return layer_norm(add(y, l_ffn(y, p.ffn)), values(p.norm2_gain), values(p.norm2_bias));
}

}  // namespace lightcts::oracle
