#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lightcts/cts_data.hpp"
#include "lightcts/model.hpp"
#include "lightcts/profiler.hpp"
#include "lightcts/training.hpp"

namespace lightcts {

enum class SynthKind { CoupledSinusoids, RandomWalk };

std::string to_string(SynthKind kind);
SynthKind parse_synth_kind(const std::string& text);

// Desk-scale stand-in for a sensor network. Series i follows
//   x_i(t) = (1 - eps) * s_i(t) + eps * mean_{j ~ i} x_j(t - 1) + noise
// where s_i is its own sinusoid (integer period, so exactly periodic) and
// j ~ i ranges over its graph neighbours. Isolated nodes and t = 0 use s_i
// alone. The random-walk kind replaces s_i(t) with x_i(t - 1) plus a step.
struct SynthSpec {
  std::size_t n_series = 8;
  std::size_t n_steps = 2000;
  std::size_t n_features = 1;
  double density = 0.3;   // edge probability per unordered pair
  double coupling = 0.3;  // eps
  double noise = 0.05;    // noise standard deviation
  SynthKind kind = SynthKind::CoupledSinusoids;
  std::uint64_t seed = 0;
  void validate() const;
};

// Deterministic for a given spec; the coupling graph becomes adjacency 0.
CtsDataset synthesize(const SynthSpec& spec);

enum class OutputFormat { Csv, Table };

struct RunConfig {
  std::optional<std::filesystem::path> data;  // CTS1, or CSV when it ends in .csv
  SynthSpec synth;                            // used when no data path is set
  ModelConfig model;
  TrainConfig train;
  SplitSpec split;
  double mask_threshold = 0.0;
  std::filesystem::path out = ".";
  std::optional<std::filesystem::path> checkpoint;  // defaults to <out>/model.lcts
  std::string study_param;                          // d_model, ltcn_groups or s_blocks
  std::vector<std::size_t> study_values;
  std::size_t study_epochs = 30;

  // Sets model, training, synth and split seeds together.
  void set_seed(std::uint64_t seed);
  // Unknown keys and malformed values raise ConfigError naming the key.
  void apply(const std::string& key, const std::string& value);
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  std::filesystem::path checkpoint_path() const;
  // Validates everything that can be checked before touching data.
  void validate() const;
};

// Dataset described by the config (loaded or synthesized), with the model
// dimensions filled in and every downstream invariant checked.
struct PreparedData {
  CtsDataset raw;
  Normalizer normalizer;
  WindowSet train, val, test;
  std::optional<MaskMatrix> mask;
  ModelConfig model;
};

PreparedData prepare(const RunConfig& config);

struct TrainOutcome {
  TrainResult result;
  std::filesystem::path checkpoint;
  std::filesystem::path history;
};

struct EvalOutcome {
  MetricReport model;
  MetricReport persistence;  // repeat the last observed value
  std::filesystem::path metrics;
};

struct StudyRow {
  std::size_t value = 0;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  double val_mae = 0.0, val_rmse = 0.0;
  std::optional<double> val_mape;
};

// Each command writes its artifacts under config.out and a short report to
// `log` in the requested format.
std::filesystem::path cmd_synth(const RunConfig& config, std::ostream& log);
TrainOutcome cmd_train(const RunConfig& config, std::ostream& log);
EvalOutcome cmd_eval(const RunConfig& config, std::ostream& log,
                     OutputFormat format = OutputFormat::Table);
CostReport cmd_profile(const RunConfig& config, std::ostream& log,
                       OutputFormat format = OutputFormat::Table);
std::vector<StudyRow> cmd_study(const RunConfig& config, std::ostream& log,
                                OutputFormat format = OutputFormat::Table);

std::string format_history_csv(const std::vector<EpochRecord>& history);
// One row per scope: "all", then "step_<k>" for k in 3, 6, 12 when
// the horizon has at least 12 steps.
std::string format_metrics_csv(const MetricReport& model, const MetricReport& persistence);
std::string format_study_csv(const std::string& param, const std::vector<StudyRow>& rows);

}  // namespace lightcts
