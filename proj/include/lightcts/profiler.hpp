#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lightcts/model.hpp"

namespace lightcts {

// Counting conventions: a multiply-accumulate is 2 FLOPs; bias adds,
// residual adds, ReLU/tanh/sigmoid and elementwise products are 1 FLOP per
// element; softmax is 4 FLOPs per element; layer norm is 7 FLOPs per element.
// Reshapes, permutations and channel shuffles are free.
enum class CostKind {
  Mac,          // weight products (dense, grouped and convolution)
  Bias,
  Elementwise,  // activations, gates, residual and encoding adds, pooling
  Attention,    // Q K^T scores and attention-weighted sums of V
  Softmax,
  Norm,
};

std::string to_string(CostKind kind);

struct CostEntry {
  std::string name;
  Component component = Component::Embedding;
  CostKind kind = CostKind::Mac;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

struct ComponentCost {
  Component component;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  double param_pct = 0.0;
  double flop_pct = 0.0;
};

struct CostReport {
  std::vector<CostEntry> entries;

  std::uint64_t total_params() const;
  std::uint64_t total_flops() const;
  // All four components in fixed order, with shares of the totals.
  std::vector<ComponentCost> components() const;
  ComponentCost component(Component c) const;
  // Sums restricted to one kind of cost (and optionally one component).
  std::uint64_t params_of(CostKind kind) const;
  std::uint64_t flops_of(CostKind kind) const;
  std::uint64_t flops_of(Component c, CostKind kind) const;

  void append(const CostReport& other);
};

// Building blocks; `rows` is the number of vectors pushed through a layer.
CostReport dense_cost(const std::string& name, Component c, std::uint64_t rows, std::uint64_t in,
                      std::uint64_t out, bool bias);
// Block-diagonal [rows, in] x [G, in/G, out/G] product.
CostReport grouped_dense_cost(const std::string& name, Component c, std::uint64_t rows,
                              std::uint64_t in, std::uint64_t out, std::uint64_t groups, bool bias);
CostReport sgtcn_cost(const std::string& name, std::uint64_t n, std::uint64_t p, std::uint64_t d,
                      std::uint64_t kernel, std::uint64_t groups, bool bias);
CostReport ltcn_cost(const LtcnConfig& config, std::uint64_t n, std::uint64_t p);
CostReport se_cost(const LtcnConfig& config, std::uint64_t n);
// time_steps = 1 for the last-shot input; P when attention runs on every step.
CostReport mha_cost(const std::string& name, std::uint64_t n, std::uint64_t d, std::uint64_t heads,
                    std::uint64_t groups, std::uint64_t time_steps = 1);
CostReport ffn_cost(const std::string& name, std::uint64_t n, std::uint64_t d, std::uint64_t hidden,
                    std::uint64_t groups, std::uint64_t time_steps = 1);
CostReport glformer_cost(const GlFormerConfig& config, std::uint64_t n, std::uint64_t time_steps = 1);

// Analytic count for one forward pass on input [N, P, F] or [B, N, P, F].
// N and F must match the config; P may differ from config.history.
CostReport count_flops(const ModelConfig& config);
CostReport count_flops(const ModelConfig& config, const Shape& input_shape);
// Exact enumeration of the model's registered tensors (FLOPs left at 0).
CostReport count_params(const LightCtsModel& model);

// Grouped-vs-ungrouped twin comparison. Ratios use the weight parameters and
// MAC FLOPs only; bias vectors do not shrink with grouping.
struct RatioCheck {
  std::string name;
  std::uint64_t grouped_params = 0, plain_params = 0;
  std::uint64_t grouped_flops = 0, plain_flops = 0;
  std::uint64_t num = 1, den = 1;  // expected grouped / plain
  bool params_exact() const { return grouped_params * den == plain_params * num; }
  bool flops_exact() const { return grouped_flops * den == plain_flops * num; }
};

// L-TCN (1/G^T), L-MHA projections (1/G^M), L-FFN ((1 + 1/G^F) / 2) and
// its second layer alone (1/G^F).
std::vector<RatioCheck> group_ratio_checks(const ModelConfig& config);
// Throws ContractError naming the first ratio that is not exact.
void assert_group_ratios(const ModelConfig& config);

enum class SweepVar { D, GT, GM, P, N };
enum class ScalingTarget { TOperatorMac, AttentionScores, SOperatorMac, Total };

std::string to_string(SweepVar v);
std::string to_string(ScalingTarget t);

struct ScalingPoint {
  std::size_t value = 0;
  std::uint64_t flops = 0;
};

struct ScalingResult {
  SweepVar var;
  ScalingTarget target;
  std::vector<ScalingPoint> points;
  double slope = 0.0;  // least-squares slope of log(flops) against log(value)
};

// Counts the target FLOPs at each swept value (other settings from base).
// Needs at least 3 values; every point must be a valid config.
ScalingResult scaling_check(const ModelConfig& base, SweepVar var,
                            const std::vector<std::size_t>& values, ScalingTarget target);

std::string format_cost_csv(const CostReport& report);
std::string format_cost_table(const CostReport& report);

}  // namespace lightcts
