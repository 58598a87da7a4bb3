#include "lightcts/ltcn.hpp"

#include <numeric>

#include "lightcts/errors.hpp"
#include "lightcts/init.hpp"
#include "lightcts/ops.hpp"

namespace lightcts {

void LtcnConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("L-TCN: " + msg); };
  if (d_model == 0) fail("embedding size D must be >= 1");
  if (kernel_size == 0) fail("kernel size K must be >= 1");
  if (dilations.empty()) fail("at least one layer (dilation entry) is required");
  for (std::size_t d : dilations)
    if (d == 0) fail("dilation rates must be >= 1");
  if (groups == 0 || d_model % groups != 0) {
    fail("D=" + std::to_string(d_model) + " must be divisible by G^T=" + std::to_string(groups));
  }
  if ((d_model / groups) % groups != 0) {
    fail("channels per group D/G^T=" + std::to_string(d_model / groups) +
         " must be divisible by G^T=" + std::to_string(groups) + " for shuffling");
  }
  if (se_reduction == 0 || d_model % se_reduction != 0) {
    fail("D=" + std::to_string(d_model) + " must be divisible by SE reduction r=" +
         std::to_string(se_reduction));
  }
}

std::size_t receptive_field(std::size_t kernel_size, std::span<const std::size_t> dilations) {
  const std::size_t total = std::accumulate(dilations.begin(), dilations.end(), std::size_t{0});
  return 1 + (kernel_size == 0 ? 0 : kernel_size - 1) * total;
}

std::size_t receptive_field(const LtcnConfig& config) {
  return receptive_field(config.kernel_size, config.dilations);
}

namespace {

SgtcnBranch init_branch(const LtcnConfig& c, std::mt19937_64& rng) {
  const std::size_t cin = c.d_model / c.groups;
  const std::size_t fan_in = cin * c.kernel_size;
  SgtcnBranch b;
  b.weight = init_uniform({c.d_model, cin, c.kernel_size}, fan_in, rng);
  if (c.conv_bias) b.bias = init_uniform({c.d_model}, fan_in, rng);
  return b;
}

}  // namespace

LtcnLayerParams init_ltcn_layer(const LtcnConfig& config, std::mt19937_64& rng) {
  LtcnLayerParams p;
  p.out = init_branch(config, rng);
  p.gate = init_branch(config, rng);
  return p;
}

SeParams init_se(const LtcnConfig& config, std::mt19937_64& rng) {
  const std::size_t reduced = config.d_model / config.se_reduction;
  SeParams se;
  se.squeeze = init_uniform({reduced, config.d_model}, config.d_model, rng);
  se.excite = init_uniform({config.d_model, reduced}, reduced, rng);
  return se;
}

std::vector<std::size_t> shuffle_permutation(std::size_t channels, std::size_t groups) {
  if (groups == 0 || channels % groups != 0) {
    throw ShapeError("group_shuffle: " + std::to_string(channels) +
                     " channels are not divisible into " + std::to_string(groups) + " groups");
  }
  const std::size_t per_group = channels / groups;
  std::vector<std::size_t> perm(channels);
  for (std::size_t j = 0; j < channels; ++j) perm[j] = (j % groups) * per_group + j / groups;
  return perm;
}

Tensor group_shuffle(const Tensor& h, std::size_t groups) {
  if (h.rank() == 0) throw ShapeError("group_shuffle: scalar input");
  return ops::permute_channels(h, shuffle_permutation(h.dim(-1), groups));
}

Tensor sgtcn(const Tensor& h, const SgtcnBranch& branch, std::size_t dilation,
             std::size_t groups) {
  return ops::dilated_causal_conv1d(group_shuffle(h, groups), branch.weight, branch.bias,
                                    dilation, groups);
}

Tensor ltcn_layer(const Tensor& h, const LtcnLayerParams& layer, std::size_t dilation,
                  std::size_t groups) {
  // Both branches read the same shuffled input.
  const Tensor shuffled = group_shuffle(h, groups);
  const Tensor feat = ops::dilated_causal_conv1d(shuffled, layer.out.weight, layer.out.bias,
                                                 dilation, groups);
  const Tensor gate = ops::dilated_causal_conv1d(shuffled, layer.gate.weight, layer.gate.bias,
                                                 dilation, groups);
  return ops::mul(ops::tanh(feat), ops::sigmoid(gate));
}

Tensor last_shot_compress(std::span<const Tensor> layer_outputs) {
  if (layer_outputs.empty()) throw ShapeError("last_shot_compress: no layer outputs");
  const Shape& shape = layer_outputs.front().shape();
  if (shape.size() < 3) {
    throw ShapeError("last_shot_compress: expected [..., N, P, D], got " + shape_str(shape));
  }
  const std::size_t last = shape[shape.size() - 2] - 1;
  Tensor total;
  for (std::size_t b = 0; b < layer_outputs.size(); ++b) {
    if (layer_outputs[b].shape() != shape) {
      throw ShapeError("last_shot_compress: layer " + std::to_string(b) + " output " +
                       shape_str(layer_outputs[b].shape()) + " differs from " + shape_str(shape));
    }
    Tensor step = ops::select(layer_outputs[b], -2, last);
    total = b == 0 ? step : ops::add(total, step);
  }
  return total;
}

Tensor se_recalibrate(const Tensor& h, const SeParams& se) {
  if (h.rank() < 2) throw ShapeError("se_recalibrate: expected [..., N, D], got " + shape_str(h.shape()));
  const std::size_t d = h.dim(-1);
  if (se.squeeze.rank() != 2 || se.squeeze.dim(1) != d || se.excite.rank() != 2 ||
      se.excite.dim(0) != d || se.excite.dim(1) != se.squeeze.dim(0)) {
    throw ShapeError("se_recalibrate: input " + shape_str(h.shape()) + " with W_s1 " +
                     shape_str(se.squeeze.shape()) + " and W_s2 " + shape_str(se.excite.shape()));
  }
  const Tensor pooled = ops::mean(h, -2);  // [..., D]
  const Tensor squeezed = ops::relu(ops::matmul(pooled, ops::swap_axes(se.squeeze, 0, 1)));
  const Tensor attention = ops::sigmoid(ops::matmul(squeezed, ops::swap_axes(se.excite, 0, 1)));
  Shape broadcast = attention.shape();
  broadcast.insert(broadcast.end() - 1, 1);
  return ops::mul(h, ops::reshape(attention, broadcast));
}

}  // namespace lightcts
