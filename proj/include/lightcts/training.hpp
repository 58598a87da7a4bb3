#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "lightcts/cts_data.hpp"
#include "lightcts/model.hpp"
#include "lightcts/tensor.hpp"

namespace lightcts {

struct TrainConfig {
  double learning_rate = 0.002;
  std::size_t epochs = 250;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip;     // global L2 norm bound
  std::optional<std::size_t> patience;  // epochs without validation improvement
  void validate() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

AdamState make_adam_state(const std::vector<Tensor>& params);

// One bias-corrected Adam update of every parameter in place.
void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mae = 0.0;
  double val_mae = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  bool stopped_early = false;
};

// Minimises MAE with Adam over shuffled mini-batches and leaves the model
// holding the parameters of the epoch with the lowest validation MAE.
// Losses are in the (normalized) units of the window targets.
TrainResult train(LightCtsModel& model, const WindowSet& train_set, const WindowSet& val_set,
                  const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

// Batched forward over inputs [S, N, P, F] -> [S, N, L] without recording.
Tensor predict(const LightCtsModel& model, const Tensor& inputs, std::size_t batch_size = 64);

struct HorizonMetrics {
  std::size_t step = 0;  // 1-based forecast step
  double mae = 0.0, rmse = 0.0;
  std::optional<double> mape;
};

struct MetricReport {
  double mae = 0.0;
  double rmse = 0.0;
  // Empty when no truth value exceeds the zero threshold.
  std::optional<double> mape;
  std::optional<double> rrse;
  std::optional<double> corr;
  std::vector<HorizonMetrics> horizons;  // multi-step only
};

constexpr double kMapeThreshold = 1e-3;

// pred and truth are [..., N, L] on the original scale. Multi-step reports
// include a per-step breakdown; single-step reports add RRSE and CORR.
MetricReport evaluate(const Tensor& pred, const Tensor& truth, ForecastMode mode,
                      double mape_threshold = kMapeThreshold);

}  // namespace lightcts
