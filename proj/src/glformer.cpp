#include "lightcts/glformer.hpp"

#include <cmath>

#include "lightcts/errors.hpp"
#include "lightcts/init.hpp"
#include "lightcts/ops.hpp"

namespace lightcts {

std::string to_string(BlockKind kind) { return kind == BlockKind::Global ? "global" : "local"; }

BlockKind parse_block_kind(const std::string& text) {
  if (text == "global") return BlockKind::Global;
  if (text == "local") return BlockKind::Local;
  throw ConfigError("block kind must be 'global' or 'local', got '" + text + "'");
}

bool GlFormerConfig::has_local() const {
  for (BlockKind k : pattern)
    if (k == BlockKind::Local) return true;
  return false;
}

std::vector<BlockKind> GlFormerConfig::alternating(std::size_t blocks) {
  std::vector<BlockKind> p(blocks);
  for (std::size_t i = 0; i < blocks; ++i) p[i] = i % 2 == 0 ? BlockKind::Global : BlockKind::Local;
  return p;
}

void GlFormerConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("GL-Former: " + msg); };
  if (d_model == 0) fail("embedding size D must be >= 1");
  if (heads == 0) fail("head count h must be >= 1");
  if (mha_groups == 0 || d_model % mha_groups != 0) {
    fail("D=" + std::to_string(d_model) + " must be divisible by G^M=" + std::to_string(mha_groups));
  }
  if ((d_model / mha_groups) % heads != 0) {
    fail("D/G^M=" + std::to_string(d_model / mha_groups) + " must be divisible by h=" +
         std::to_string(heads));
  }
  if (ffn_groups == 0 || d_model % ffn_groups != 0) {
    fail("D=" + std::to_string(d_model) + " must be divisible by G^F=" + std::to_string(ffn_groups));
  }
  if (hidden() % ffn_groups != 0) {
    fail("D'=" + std::to_string(hidden()) + " must be divisible by G^F=" +
         std::to_string(ffn_groups));
  }
}

AttentionBlockParams init_attention_block(const GlFormerConfig& c, std::mt19937_64& rng) {
  const std::size_t dg = c.d_model / c.mha_groups;
  const std::size_t dh = c.hidden();
  const std::size_t gf = c.ffn_groups;
  AttentionBlockParams p;
  p.mha.query = init_uniform({c.mha_groups, dg, dg}, dg, rng);
  p.mha.key = init_uniform({c.mha_groups, dg, dg}, dg, rng);
  p.mha.value = init_uniform({c.mha_groups, dg, dg}, dg, rng);
  p.ffn.w1 = init_uniform({c.d_model, dh}, c.d_model, rng);
  p.ffn.b1 = init_uniform({dh}, c.d_model, rng);
  p.ffn.w2 = init_uniform({gf, dh / gf, c.d_model / gf}, dh / gf, rng);
  p.ffn.b2 = init_uniform({c.d_model}, dh / gf, rng);
  p.norm1_gain = Tensor::full({c.d_model}, 1.0, true);
  p.norm1_bias = Tensor::zeros({c.d_model}, true);
  p.norm2_gain = Tensor::full({c.d_model}, 1.0, true);
  p.norm2_bias = Tensor::zeros({c.d_model}, true);
  return p;
}

Tensor init_positional_encoding(std::size_t n_series, std::size_t d_model, std::mt19937_64& rng) {
  return init_uniform({n_series, d_model}, d_model, rng);
}

Tensor positional_encode(const Tensor& h, const Tensor& w_pe) {
  if (h.rank() < 2 || w_pe.rank() != 2 || h.dim(-2) != w_pe.dim(0) || h.dim(-1) != w_pe.dim(1)) {
    throw ShapeError("positional encoding mismatch: input " + shape_str(h.shape()) +
                     " vs W_PE " + shape_str(w_pe.shape()));
  }
  return ops::add(h, w_pe);
}

namespace {

// [..., N, H*dk] -> [..., H, N, dk]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  Shape s = x.shape();
  const std::size_t width = s.back();
  s.back() = heads;
  s.push_back(width / heads);
  return ops::swap_axes(ops::reshape(x, s), -3, -2);
}

// [..., H, N, dk] -> [..., N, H*dk]
Tensor merge_heads(const Tensor& x) {
  Tensor t = ops::swap_axes(x, -3, -2);
  Shape s = t.shape();
  const std::size_t dk = s.back();
  s.pop_back();
  s.back() *= dk;
  return ops::reshape(t, s);
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t total_heads,
              const MaskMatrix* mask, Tensor* weights) {
  const std::size_t dk = q.dim(-1) / total_heads;
  const Tensor qh = split_heads(q, total_heads);
  const Tensor kh = split_heads(k, total_heads);
  const Tensor vh = split_heads(v, total_heads);
  Tensor scores = ops::scale(ops::bmm(qh, ops::swap_axes(kh, -2, -1)),
                             1.0 / std::sqrt(static_cast<double>(dk)));
  if (mask) {
    if (mask->n != q.dim(-2)) {
      throw ShapeError("attention mask is " + std::to_string(mask->n) + "x" +
                       std::to_string(mask->n) + " but there are " + std::to_string(q.dim(-2)) +
                       " nodes");
    }
    scores = ops::mask_fill(scores, mask->keep);
  }
  const Tensor attn = ops::softmax_rows(scores);
  if (weights) *weights = attn;
  return merge_heads(ops::bmm(attn, vh));
}

void check_projection(const Tensor& x, const Tensor& w, const char* name) {
  if (x.rank() < 2 || w.rank() != 2 || w.dim(0) != x.dim(-1) || w.dim(1) != x.dim(-1)) {
    throw ShapeError(std::string("mha: ") + name + " weights " + shape_str(w.shape()) +
                     " do not match input " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor mha(const Tensor& x, const Tensor& w_query, const Tensor& w_key, const Tensor& w_value,
           std::size_t heads, const MaskMatrix* mask, Tensor* weights) {
  check_projection(x, w_query, "query");
  check_projection(x, w_key, "key");
  check_projection(x, w_value, "value");
  if (heads == 0 || x.dim(-1) % heads != 0) {
    throw ShapeError("mha: width " + std::to_string(x.dim(-1)) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  return attend(ops::matmul(x, w_query), ops::matmul(x, w_key), ops::matmul(x, w_value), heads,
                mask, weights);
}

Tensor l_mha(const Tensor& x, const MhaParams& params, std::size_t heads, const MaskMatrix* mask,
             Tensor* weights) {
  const Tensor* ws[] = {&params.query, &params.key, &params.value};
  for (const Tensor* w : ws) {
    if (x.rank() < 2 || w->rank() != 3 || w->dim(1) != w->dim(2) ||
        w->dim(0) * w->dim(1) != x.dim(-1)) {
      throw ShapeError("l_mha: grouped weights " + shape_str(w->shape()) +
                       " do not match input " + shape_str(x.shape()));
    }
  }
  const std::size_t groups = params.query.dim(0);
  const std::size_t width = params.query.dim(1);
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("l_mha: group width " + std::to_string(width) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  // Heads are laid out group-major, so G groups of h heads act as G*h heads
  // whose outputs concatenate back in group order.
  return attend(ops::grouped_matmul(x, params.query), ops::grouped_matmul(x, params.key),
                ops::grouped_matmul(x, params.value), groups * heads, mask, weights);
}

Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
           const Tensor& b2) {
  const Tensor hidden = ops::relu(ops::add(ops::matmul(x, w1), b1));
  return ops::add(ops::matmul(hidden, w2), b2);
}

Tensor l_ffn(const Tensor& x, const FfnParams& p) {
  const Tensor hidden = ops::relu(ops::add(ops::matmul(x, p.w1), p.b1));
  return ops::add(ops::grouped_matmul(hidden, p.w2), p.b2);
}

Tensor attention_block(const Tensor& x, const AttentionBlockParams& p, std::size_t heads,
                       BlockKind kind, const MaskMatrix* mask) {
  if (kind == BlockKind::Local && mask == nullptr) {
    throw ConfigError("local attention block requires a mask matrix");
  }
  const MaskMatrix* used = kind == BlockKind::Local ? mask : nullptr;
  const Tensor y = ops::layer_norm(ops::add(x, l_mha(x, p.mha, heads, used)), p.norm1_gain,
                                   p.norm1_bias);
  return ops::layer_norm(ops::add(y, l_ffn(y, p.ffn)), p.norm2_gain, p.norm2_bias);
}

Tensor gl_former(const Tensor& h, const GlFormerConfig& config, const Tensor& w_pe,
                 const std::vector<AttentionBlockParams>& blocks, const MaskMatrix* mask) {
  if (blocks.size() != config.blocks()) {
    throw ConfigError("GL-Former: " + std::to_string(blocks.size()) +
                      " parameter blocks for a pattern of " + std::to_string(config.blocks()));
  }
  if (config.has_local() && mask == nullptr) {
    throw ConfigError("GL-Former: pattern has local blocks but no mask was supplied");
  }
  Tensor cur = positional_encode(h, w_pe);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    cur = attention_block(cur, blocks[b], config.heads, config.pattern[b], mask);
  }
  return cur;
}

}  // namespace lightcts
