#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "lightcts/tensor.hpp"

namespace lightcts {

// Light TCN: gated, shuffled-group dilated causal convolutions followed by
// last-shot compression and squeeze-and-excitation recalibration.
struct LtcnConfig {
  std::size_t d_model = 64;
  std::size_t kernel_size = 2;
  std::vector<std::size_t> dilations{1, 2, 4, 8};  // one entry per layer
  std::size_t groups = 4;
  std::size_t se_reduction = 8;
  bool conv_bias = true;

  std::size_t layers() const { return dilations.size(); }
  // Divisibility and positivity checks; throws ConfigError naming the rule.
  void validate() const;
};

// Steps of input history visible to the final step of the last layer:
// 1 + (K - 1) * sum(dilations).
std::size_t receptive_field(const LtcnConfig& config);
std::size_t receptive_field(std::size_t kernel_size, std::span<const std::size_t> dilations);

struct SgtcnBranch {
  Tensor weight;  // [D, D / G, K]
  std::optional<Tensor> bias;  // [D]
};

struct LtcnLayerParams {
  SgtcnBranch out;   // feature branch, passed through tanh
  SgtcnBranch gate;  // ratio branch, passed through sigmoid
};

struct SeParams {
  Tensor squeeze;  // [D / r, D]
  Tensor excite;   // [D, D / r]
};

LtcnLayerParams init_ltcn_layer(const LtcnConfig& config, std::mt19937_64& rng);
SeParams init_se(const LtcnConfig& config, std::mt19937_64& rng);

// Output channel j reads input channel (j mod G) * (D / G) + j / G, i.e. the
// transpose of the G x (D / G) channel grid.
std::vector<std::size_t> shuffle_permutation(std::size_t channels, std::size_t groups);
Tensor group_shuffle(const Tensor& h, std::size_t groups);

// Shuffle, then a G-group dilated causal convolution. h is [..., P, D].
Tensor sgtcn(const Tensor& h, const SgtcnBranch& branch, std::size_t dilation,
             std::size_t groups);

// tanh(sgtcn_out(h)) * sigmoid(sgtcn_gate(h))
Tensor ltcn_layer(const Tensor& h, const LtcnLayerParams& layer, std::size_t dilation,
                  std::size_t groups);

// Sum over layers of the final time step: [..., N, P, D] each -> [..., N, D].
Tensor last_shot_compress(std::span<const Tensor> layer_outputs);

// h * sigmoid(relu(pool(h) W_s1^T) W_s2^T), pooled over the node axis.
// h is [..., N, D].
Tensor se_recalibrate(const Tensor& h, const SeParams& se);

}  // namespace lightcts
