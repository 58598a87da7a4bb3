#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lightcts/tensor.hpp"

namespace lightcts {

// N correlated series of T steps with F features, plus optional N x N
// adjacency matrices.
struct CtsDataset {
  std::size_t n_series = 0;
  std::size_t n_steps = 0;
  std::size_t n_features = 0;
  std::vector<double> values;  // (series, time, feature) row-major
  std::vector<std::vector<double>> adjacencies;

  double at(std::size_t series, std::size_t step, std::size_t feature) const {
    return values[(series * n_steps + step) * n_features + feature];
  }
  // Copies steps [begin, begin + count) with all adjacencies.
  CtsDataset slice_steps(std::size_t begin, std::size_t count) const;
  // Throws ShapeError / FormatError when an invariant does not hold.
  void validate() const;
};

enum class ForecastMode { Single, Multi };
enum class DataFormat { Cts1, Csv };

std::string to_string(ForecastMode mode);
ForecastMode parse_forecast_mode(const std::string& text);

// history covers steps origin .. origin+P-1. A multi-step target covers the
// next Q steps; a single-step target is the one step origin+P+Q-1.
struct WindowSample {
  std::size_t origin = 0;
  Tensor history;  // [N, P, F]
  Tensor target;   // [N, Q, F] or [N, 1, F]
};

// Windows stacked for batched training: inputs [S, N, P, F] and targets
// [S, N, L] restricted to the forecast feature.
struct WindowSet {
  Tensor inputs;
  Tensor targets;
  std::vector<std::size_t> origins;

  std::size_t size() const { return origins.size(); }
  WindowSet gather(std::span<const std::size_t> rows) const;
};

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  void validate() const;
};

struct DatasetSplit {
  CtsDataset train, val, test;
};

// Per-feature z-score statistics.
struct Normalizer {
  static constexpr double kStdFloor = 1e-8;
  std::vector<double> mean;
  std::vector<double> stddev;

  CtsDataset normalize(const CtsDataset& ds) const;
  CtsDataset denormalize(const CtsDataset& ds) const;
  double normalize(double v, std::size_t feature) const {
    return (v - mean[feature]) / stddev[feature];
  }
  double denormalize(double v, std::size_t feature) const {
    return v * stddev[feature] + mean[feature];
  }
};

// N x N relevance pattern for local attention; keep[i * n + j] != 0 lets
// node i attend to node j.
struct MaskMatrix {
  std::size_t n = 0;
  std::vector<std::uint8_t> keep;

  bool at(std::size_t i, std::size_t j) const { return keep[i * n + j] != 0; }
  static MaskMatrix all_true(std::size_t n);
  static MaskMatrix identity(std::size_t n);
};

CtsDataset load_dataset(const std::filesystem::path& path, DataFormat format,
                        const std::vector<std::filesystem::path>& adjacency_csvs = {});
// CSV output writes adjacency i next to the data file as <stem>_adj<i>.csv.
void save_dataset(const CtsDataset& ds, const std::filesystem::path& path, DataFormat format);
std::vector<std::filesystem::path> adjacency_csv_paths(const std::filesystem::path& data_csv,
                                                       std::size_t count);

std::vector<WindowSample> make_windows(const CtsDataset& ds, std::size_t history,
                                       std::size_t horizon, ForecastMode mode);
WindowSet stack_windows(const std::vector<WindowSample>& windows, std::size_t target_feature = 0);

// Contiguous train/val/test partition. Part lengths are floor(T * fraction)
// with the remainder going to test; every part must hold min_length steps.
DatasetSplit split(const CtsDataset& ds, const SplitSpec& spec, std::size_t min_length = 1);

Normalizer fit_normalizer(const CtsDataset& train);

// M[i][j] is true iff (sum of adjacencies)[i][j] > threshold, or i == j.
MaskMatrix build_mask(const std::vector<std::vector<double>>& adjacencies, std::size_t n,
                      double threshold = 0.0);

}  // namespace lightcts
