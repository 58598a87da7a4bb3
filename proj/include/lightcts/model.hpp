#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lightcts/cts_data.hpp"
#include "lightcts/glformer.hpp"
#include "lightcts/ltcn.hpp"
#include "lightcts/tensor.hpp"

namespace lightcts {

// Cost-report buckets.
enum class Component { Embedding, TOperator, SOperator, AggregationOutput };

std::string to_string(Component c);

struct ModelConfig {
  std::size_t n_series = 0;
  std::size_t n_features = 1;
  std::size_t history = 12;  // P
  std::size_t horizon = 12;  // Q
  ForecastMode mode = ForecastMode::Multi;
  LtcnConfig ltcn;
  GlFormerConfig glformer;
  std::size_t head_hidden = 0;  // D_h; 0 selects 512 (multi) or D (single)
  std::uint64_t seed = 0;

  std::size_t d_model() const { return ltcn.d_model; }
  std::size_t output_len() const { return mode == ForecastMode::Multi ? horizon : 1; }
  std::size_t hidden_width() const;
  // Sets D on both the temporal and spatial parts.
  void set_d_model(std::size_t d);
  void validate() const;

  // Canonical "key=value" lines; from_text accepts exactly what to_text emits
  // (in any order, with omitted keys keeping their defaults).
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  // Applies one key; returns false for keys that are not model settings.
  bool apply(const std::string& key, const std::string& value);
};

struct NamedParameter {
  std::string name;
  Component component;
  Tensor tensor;
};

class LightCtsModel {
 public:
  // Initializes every parameter from config.seed. A mask is required when the
  // block pattern contains local blocks.
  explicit LightCtsModel(ModelConfig config, std::optional<MaskMatrix> mask = std::nullopt);

  const ModelConfig& config() const { return config_; }
  const std::optional<MaskMatrix>& mask() const { return mask_; }
  void set_mask(std::optional<MaskMatrix> mask);

  // [..., N, P, F] -> [..., N, P, D]
  Tensor embed(const Tensor& x) const;
  // Embedded input -> H^T [..., N, D].
  Tensor temporal(const Tensor& embedded) const;
  // [..., N, P, F] -> [..., N, L]
  Tensor forward(const Tensor& x) const;

  // Every trainable tensor once, in a fixed registration order. The tensors
  // share storage with the model.
  std::vector<NamedParameter> parameters() const;
  std::size_t parameter_count() const;

  Tensor embed_weight;  // [F, D]
  Tensor embed_bias;    // [D]
  std::vector<LtcnLayerParams> ltcn_layers;
  SeParams se;
  Tensor positional;  // W^PE [N, D]
  std::vector<AttentionBlockParams> blocks;
  Tensor head_w1;  // [D, D_h]
  Tensor head_b1;  // [D_h]
  Tensor head_w2;  // [D_h, L]
  Tensor head_b2;  // [L]

 private:
  ModelConfig config_;
  std::optional<MaskMatrix> mask_;
};

// Binary checkpoint: "LCTS", config text, parameters in registration order
// (rank, dims, float64 payload), then the optional mask.
void save_checkpoint(const LightCtsModel& model, const std::filesystem::path& path);
LightCtsModel load_checkpoint(const std::filesystem::path& path);

}  // namespace lightcts
