#pragma once

#include <random>
#include <string>
#include <vector>

#include "lightcts/cts_data.hpp"
#include "lightcts/tensor.hpp"

namespace lightcts {

enum class BlockKind { Global, Local };

std::string to_string(BlockKind kind);
BlockKind parse_block_kind(const std::string& text);

// Global/local attention stack over the node axis.
struct GlFormerConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;       // per channel group
  std::size_t mha_groups = 2;  // G^M
  std::size_t ffn_groups = 2;  // G^F
  std::size_t ffn_hidden = 0;  // D'; 0 selects 4 * D
  std::vector<BlockKind> pattern = alternating(4);

  std::size_t blocks() const { return pattern.size(); }
  std::size_t hidden() const { return ffn_hidden ? ffn_hidden : 4 * d_model; }
  bool has_local() const;
  void validate() const;

  // global, local, global, ...
  static std::vector<BlockKind> alternating(std::size_t blocks);
};

// Query/key/value projections stored per channel group: [G, D/G, D/G].
// Within a group, head i owns output columns [i * dk, (i + 1) * dk).
struct MhaParams {
  Tensor query, key, value;
};

struct FfnParams {
  Tensor w1;  // [D, D']
  Tensor b1;  // [D']
  Tensor w2;  // [G, D'/G, D/G]
  Tensor b2;  // [D]
};

struct AttentionBlockParams {
  MhaParams mha;
  FfnParams ffn;
  Tensor norm1_gain, norm1_bias;  // around the attention sub-layer
  Tensor norm2_gain, norm2_bias;  // around the feed-forward sub-layer
};

AttentionBlockParams init_attention_block(const GlFormerConfig& config, std::mt19937_64& rng);
Tensor init_positional_encoding(std::size_t n_series, std::size_t d_model, std::mt19937_64& rng);

// hT + W_PE; hT is [..., N, D], W_PE is [N, D].
Tensor positional_encode(const Tensor& h, const Tensor& w_pe);

// Multi-head self-attention over the node axis of x[..., N, Dg] with
// [Dg, Dg] projections. A mask hides pairs with M[i][j] == false. When
// `weights` is non-null it receives the [..., h, N, N] attention matrix.
Tensor mha(const Tensor& x, const Tensor& w_query, const Tensor& w_key, const Tensor& w_value,
           std::size_t heads, const MaskMatrix* mask, Tensor* weights = nullptr);

// mha applied independently to each of the G channel groups, h heads each,
// results concatenated. `weights` receives [..., G*h, N, N].
Tensor l_mha(const Tensor& x, const MhaParams& params, std::size_t heads,
             const MaskMatrix* mask, Tensor* weights = nullptr);

// ReLU(x W1 + b1) W2 + b2 with an ungrouped [D', D] second layer.
Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
           const Tensor& b2);
// Same first layer; the second layer is block-diagonal over G^F groups.
Tensor l_ffn(const Tensor& x, const FfnParams& params);

// Post-norm block: y = LN(x + l_mha(x)), out = LN(y + l_ffn(y)). Local
// blocks require a mask.
Tensor attention_block(const Tensor& x, const AttentionBlockParams& params, std::size_t heads,
                       BlockKind kind, const MaskMatrix* mask);

Tensor gl_former(const Tensor& h, const GlFormerConfig& config, const Tensor& w_pe,
                 const std::vector<AttentionBlockParams>& blocks, const MaskMatrix* mask);

}  // namespace lightcts
