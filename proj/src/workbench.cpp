#include "lightcts/workbench.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "lightcts/csv.hpp"
#include "lightcts/errors.hpp"

namespace lightcts {

namespace fs = std::filesystem;

std::string to_string(SynthKind kind) {
  return kind == SynthKind::CoupledSinusoids ? "sinusoid" : "random_walk";
}

SynthKind parse_synth_kind(const std::string& text) {
  if (text == "sinusoid") return SynthKind::CoupledSinusoids;
  if (text == "random_walk") return SynthKind::RandomWalk;
  throw ConfigError("synth_kind must be 'sinusoid' or 'random_walk', got '" + text + "'");
}

void SynthSpec::validate() const {
  if (n_series == 0 || n_steps == 0 || n_features == 0) {
    throw ConfigError("synth: N, T and F must all be >= 1");
  }
  if (!(density >= 0.0 && density <= 1.0)) throw ConfigError("synth_density must lie in [0, 1]");
  if (!(coupling >= 0.0 && coupling <= 1.0)) throw ConfigError("synth_coupling must lie in [0, 1]");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("synth_noise must be >= 0");
}

CtsDataset synthesize(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_series, t_len = spec.n_steps, f = spec.n_features;
  std::mt19937_64 rng(spec.seed);
  std::bernoulli_distribution edge(spec.density);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> period_dist(12, 48);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> adj(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (edge(rng)) adj[i * n + j] = adj[j * n + i] = 1.0;

  std::vector<std::size_t> period(n);
  std::vector<double> amplitude(n), phase(n), offset(n);
  for (std::size_t i = 0; i < n; ++i) {
    period[i] = period_dist(rng);
    amplitude[i] = 0.5 + unit(rng);
    phase[i] = 2.0 * std::numbers::pi * unit(rng);
    offset[i] = 2.0 * unit(rng) - 1.0;
  }
  auto own = [&](std::size_t i, std::size_t t, std::size_t harmonic) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(harmonic * (t % period[i])) /
                         static_cast<double>(period[i]);
    return offset[i] + amplitude[i] * std::sin(angle + phase[i]);
  };

  CtsDataset ds;
  ds.n_series = n;
  ds.n_steps = t_len;
  ds.n_features = f;
  ds.values.assign(n * t_len * f, 0.0);
  ds.adjacencies.push_back(adj);
  auto x = [&](std::size_t i, std::size_t t) -> double& { return ds.values[(i * t_len + t) * f]; };

  const double eps = spec.coupling;
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      double base;
      if (spec.kind == SynthKind::CoupledSinusoids || t == 0) {
        base = own(i, t, 1);
      } else {
        base = x(i, t - 1);
      }
      double neighbours = 0.0;
      std::size_t degree = 0;
      if (t > 0) {
        for (std::size_t j = 0; j < n; ++j) {
          if (adj[i * n + j] == 0.0) continue;
          neighbours += x(j, t - 1);
          ++degree;
        }
      }
      double v = degree ? (1.0 - eps) * base + eps * neighbours / static_cast<double>(degree) : base;
      if (spec.noise > 0.0) v += spec.noise * gauss(rng);
      x(i, t) = v;
      for (std::size_t k = 1; k < f; ++k) ds.values[(i * t_len + t) * f + k] = own(i, t, k + 1);
    }
  }
  return ds;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t size_value(const std::string& key, const std::string& v) {
  try {
    return static_cast<std::size_t>(parse_unsigned(v));
  } catch (const FormatError&) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double double_value(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const FormatError&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

std::vector<std::size_t> size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream in(v);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(size_value(key, trim(part)));
  return out;
}

bool is_study_param(const std::string& p) {
  return p == "d_model" || p == "ltcn_groups" || p == "s_blocks";
}

ModelConfig study_variant(ModelConfig base, const std::string& param, std::size_t value) {
  base.apply(param, std::to_string(value));
  return base;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  model.seed = seed;
  train.seed = seed;
  synth.seed = seed;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "seed") {
    try {
      set_seed(parse_unsigned(value));
    } catch (const FormatError&) {
      throw ConfigError("'seed' expects an unsigned integer, got '" + value + "'");
    }
  } else if (key == "data") data = value;
  else if (key == "out") out = value;
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "synth_n") synth.n_series = size_value(key, value);
  else if (key == "synth_t") synth.n_steps = size_value(key, value);
  else if (key == "synth_f") synth.n_features = size_value(key, value);
  else if (key == "synth_density") synth.density = double_value(key, value);
  else if (key == "synth_coupling") synth.coupling = double_value(key, value);
  else if (key == "synth_noise") synth.noise = double_value(key, value);
  else if (key == "synth_kind") synth.kind = parse_synth_kind(value);
  else if (key == "learning_rate") train.learning_rate = double_value(key, value);
  else if (key == "epochs") train.epochs = size_value(key, value);
  else if (key == "batch_size") train.batch_size = size_value(key, value);
  else if (key == "grad_clip") train.grad_clip = double_value(key, value);
  else if (key == "patience") train.patience = size_value(key, value);
  else if (key == "split_train") split.train = double_value(key, value);
  else if (key == "split_val") split.val = double_value(key, value);
  else if (key == "split_test") split.test = double_value(key, value);
  else if (key == "mask_threshold") mask_threshold = double_value(key, value);
  else if (key == "study_param") study_param = value;
  else if (key == "study_values") study_values = size_list(key, value);
  else if (key == "study_epochs") study_epochs = size_value(key, value);
  else if (key == "n_series" || key == "n_features") {
    throw ConfigError("'" + key + "' is taken from the dataset and cannot be set");
  } else if (!model.apply(key, value)) {
    throw ConfigError("unknown configuration key '" + key + "'");
  }
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    try {
      c.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

fs::path RunConfig::checkpoint_path() const { return checkpoint ? *checkpoint : out / "model.lcts"; }

void RunConfig::validate() const {
  train.validate();
  split.validate();
  if (!std::isfinite(mask_threshold)) throw ConfigError("mask_threshold must be finite");
  if (!data) synth.validate();
  ModelConfig m = model;
  m.n_series = data ? 1 : synth.n_series;
  m.n_features = data ? 1 : synth.n_features;
  m.validate();
  if (!study_param.empty()) {
    if (!is_study_param(study_param)) {
      throw ConfigError("study_param must be d_model, ltcn_groups or s_blocks, got '" +
                        study_param + "'");
    }
    if (study_values.size() < 2) throw ConfigError("study_values needs at least 2 entries");
    if (study_epochs == 0) throw ConfigError("study_epochs must be >= 1");
    for (std::size_t v : study_values) {
      try {
        study_variant(m, study_param, v).validate();
      } catch (const ConfigError& e) {
        throw ConfigError("study value " + study_param + "=" + std::to_string(v) + ": " + e.what());
      }
    }
  }
}

PreparedData prepare(const RunConfig& config) {
  config.validate();
  PreparedData p;
  if (config.data) {
    const fs::path& path = *config.data;
    if (path.extension() == ".csv") {
      std::vector<fs::path> adj;
      for (std::size_t i = 0;; ++i) {
        const auto candidate = adjacency_csv_paths(path, i + 1).back();
        if (!fs::exists(candidate)) break;
        adj.push_back(candidate);
      }
      p.raw = load_dataset(path, DataFormat::Csv, adj);
    } else {
      p.raw = load_dataset(path, DataFormat::Cts1);
    }
  } else {
    p.raw = synthesize(config.synth);
  }
  p.raw.validate();

  p.model = config.model;
  p.model.n_series = p.raw.n_series;
  p.model.n_features = p.raw.n_features;
  p.model.validate();

  const std::size_t span = p.model.history + p.model.horizon;
  const DatasetSplit parts = split(p.raw, config.split, span);
  p.normalizer = fit_normalizer(parts.train);
  auto windows = [&](const CtsDataset& part) {
    return stack_windows(make_windows(p.normalizer.normalize(part), p.model.history,
                                      p.model.horizon, p.model.mode));
  };
  p.train = windows(parts.train);
  p.val = windows(parts.val);
  p.test = windows(parts.test);

  bool needs_mask = p.model.glformer.has_local();
  if (config.study_param == "s_blocks") {
    for (std::size_t v : config.study_values)
      needs_mask = needs_mask || study_variant(p.model, "s_blocks", v).glformer.has_local();
  }
  if (!p.raw.adjacencies.empty()) {
    p.mask = build_mask(p.raw.adjacencies, p.raw.n_series, config.mask_threshold);
  } else if (needs_mask) {
    throw ConfigError("block pattern has local blocks but the dataset has no adjacency matrix");
  }
  return p;
}

namespace {

Tensor denormalize_target(const Tensor& t, const Normalizer& norm) {
  std::vector<double> v(t.data().begin(), t.data().end());
  for (double& x : v) x = norm.denormalize(x, 0);
  return Tensor(t.shape(), std::move(v));
}

// Last observed value of the forecast feature, repeated for every step.
Tensor persistence_forecast(const WindowSet& w, std::size_t output_len) {
  const std::size_t s = w.inputs.dim(0), n = w.inputs.dim(1), p = w.inputs.dim(2),
                    f = w.inputs.dim(3);
  std::vector<double> out(s * n * output_len);
  for (std::size_t a = 0; a < s; ++a)
    for (std::size_t i = 0; i < n; ++i) {
      const double last = w.inputs[((a * n + i) * p + p - 1) * f];
      for (std::size_t k = 0; k < output_len; ++k) out[(a * n + i) * output_len + k] = last;
    }
  return Tensor({s, n, output_len}, std::move(out));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string fixed(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

void print_table(std::ostream& log, const CsvTable& t) {
  std::vector<std::size_t> width(t.header.size());
  auto cell = [](const std::string& s) {
    // Show numbers with 4 decimals in tables.
    try {
      if (s.find('.') != std::string::npos || s.find('e') != std::string::npos) {
        return fixed(parse_double(s));
      }
    } catch (const FormatError&) {
    }
    return s.empty() ? std::string("-") : s;
  };
  std::vector<std::vector<std::string>> rows{t.header};
  for (const auto& r : t.rows) {
    std::vector<std::string> row;
    for (const auto& c : r) row.push_back(cell(c));
    rows.push_back(row);
  }
  for (const auto& r : rows)
    for (std::size_t j = 0; j < r.size(); ++j) width[j] = std::max(width[j], r[j].size());
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      log << (j ? "  " : "") << r[j] << std::string(width[j] - r[j].size(), ' ');
    }
    log << "\n";
  }
}

void emit(std::ostream& log, const std::string& csv, OutputFormat format) {
  if (format == OutputFormat::Csv) log << csv;
  else print_table(log, parse_csv(csv));
}

}  // namespace

fs::path cmd_synth(const RunConfig& config, std::ostream& log) {
  config.synth.validate();
  const CtsDataset ds = synthesize(config.synth);
  const fs::path path = config.data ? *config.data : config.out / "synth.cts";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_dataset(ds, path, path.extension() == ".csv" ? DataFormat::Csv : DataFormat::Cts1);
  std::size_t edges = 0;
  for (double a : ds.adjacencies[0]) edges += a != 0.0;
  log << "wrote " << path.string() << ": N=" << ds.n_series << " T=" << ds.n_steps
      << " F=" << ds.n_features << " edges=" << edges / 2 << " kind=" << to_string(config.synth.kind)
      << "\n";
  return path;
}

TrainOutcome cmd_train(const RunConfig& config, std::ostream& log) {
  const PreparedData data = prepare(config);
  LightCtsModel model(data.model, data.mask);
  log << "training: " << data.train.size() << " train / " << data.val.size()
      << " validation windows, " << model.parameter_count() << " parameters\n";
  TrainOutcome outcome;
  outcome.result = train(model, data.train, data.val, config.train, [&](const EpochRecord& e) {
    char line[128];
    std::snprintf(line, sizeof line, "epoch %zu train_mae %.6f val_mae %.6f\n", e.epoch,
                  e.train_mae, e.val_mae);
    log << line;
  });
  outcome.checkpoint = config.checkpoint_path();
  if (outcome.checkpoint.has_parent_path()) fs::create_directories(outcome.checkpoint.parent_path());
  save_checkpoint(model, outcome.checkpoint);
  outcome.history = config.out / "history.csv";
  write_text(outcome.history, format_history_csv(outcome.result.history));
  log << "best epoch " << outcome.result.best_epoch << " (val_mae " << outcome.result.best_val_mae
      << "); checkpoint " << outcome.checkpoint.string() << "\n";
  return outcome;
}

EvalOutcome cmd_eval(const RunConfig& config, std::ostream& log, OutputFormat format) {
  LightCtsModel model = load_checkpoint(config.checkpoint_path());
  RunConfig run = config;
  run.model = model.config();
  const PreparedData data = prepare(run);
  if (data.raw.n_series != model.config().n_series) {
    throw ShapeError("checkpoint positional encoding W^PE covers N=" +
                     std::to_string(model.config().n_series) + " series but the dataset has N=" +
                     std::to_string(data.raw.n_series));
  }
  if (data.raw.n_features != model.config().n_features) {
    throw ShapeError("checkpoint embedding expects F=" + std::to_string(model.config().n_features) +
                     " features but the dataset has F=" + std::to_string(data.raw.n_features));
  }
  const ForecastMode mode = model.config().mode;
  const Tensor truth = denormalize_target(data.test.targets, data.normalizer);
  const Tensor pred = denormalize_target(predict(model, data.test.inputs, run.train.batch_size),
                                         data.normalizer);
  const Tensor naive = denormalize_target(
      persistence_forecast(data.test, model.config().output_len()), data.normalizer);
  EvalOutcome outcome{evaluate(pred, truth, mode), evaluate(naive, truth, mode),
                      config.out / "metrics.csv"};
  const std::string csv = format_metrics_csv(outcome.model, outcome.persistence);
  write_text(outcome.metrics, csv);
  emit(log, csv, format);
  return outcome;
}

CostReport cmd_profile(const RunConfig& config, std::ostream& log, OutputFormat format) {
  config.validate();
  ModelConfig m = config.model;
  if (config.data) {
    const PreparedData data = prepare(config);
    m = data.model;
  } else {
    m.n_series = config.synth.n_series;
    m.n_features = config.synth.n_features;
  }
  const CostReport report = count_flops(m);
  assert_group_ratios(m);
  write_text(config.out / "cost.csv", format_cost_csv(report));
  log << (format == OutputFormat::Csv ? format_cost_csv(report) : format_cost_table(report));
  return report;
}

std::vector<StudyRow> cmd_study(const RunConfig& config, std::ostream& log, OutputFormat format) {
  if (config.study_param.empty()) throw ConfigError("study needs study_param and study_values");
  const PreparedData data = prepare(config);
  // Build every variant before training anything.
  std::vector<ModelConfig> variants;
  for (std::size_t v : config.study_values) {
    ModelConfig m = study_variant(data.model, config.study_param, v);
    m.validate();
    variants.push_back(m);
  }
  TrainConfig tc = config.train;
  tc.epochs = config.study_epochs;
  const Tensor truth = denormalize_target(data.val.targets, data.normalizer);

  std::vector<StudyRow> rows;
  for (std::size_t k = 0; k < variants.size(); ++k) {
    LightCtsModel model(variants[k], data.mask);
    train(model, data.train, data.val, tc);
    const Tensor pred =
        denormalize_target(predict(model, data.val.inputs, tc.batch_size), data.normalizer);
    const MetricReport r = evaluate(pred, truth, variants[k].mode);
    const CostReport cost = count_flops(variants[k]);
    rows.push_back({config.study_values[k], cost.total_params(), cost.total_flops(), r.mae, r.rmse,
                    r.mape});
    log << config.study_param << "=" << config.study_values[k] << " done (val_mae " << r.mae
        << ")\n";
  }
  const std::string csv = format_study_csv(config.study_param, rows);
  write_text(config.out / "study.csv", csv);
  emit(log, csv, format);
  return rows;
}

std::string format_history_csv(const std::vector<EpochRecord>& history) {
  CsvTable t;
  t.header = {"epoch", "train_mae", "val_mae"};
  for (const auto& e : history) {
    t.rows.push_back({std::to_string(e.epoch), format_double(e.train_mae), format_double(e.val_mae)});
  }
  return format_csv(t);
}

std::string format_metrics_csv(const MetricReport& model, const MetricReport& persistence) {
  CsvTable t;
  t.header = {"model", "scope", "mae", "rmse", "mape", "rrse", "corr"};
  for (const auto* r : {&model, &persistence}) {
    const std::string name = r == &model ? "lightcts" : "persistence";
    t.rows.push_back({name, "all", format_double(r->mae), format_double(r->rmse), opt(r->mape),
                      opt(r->rrse), opt(r->corr)});
    if (r->horizons.size() < 12) continue;
    for (const auto& h : r->horizons) {
      if (h.step != 3 && h.step != 6 && h.step != 12) continue;
      t.rows.push_back({name, "step_" + std::to_string(h.step), format_double(h.mae),
                        format_double(h.rmse), opt(h.mape), "", ""});
    }
  }
  return format_csv(t);
}

std::string format_study_csv(const std::string& param, const std::vector<StudyRow>& rows) {
  CsvTable t;
  t.header = {"param", "value", "params", "flops", "val_mae", "val_rmse", "val_mape"};
  for (const auto& r : rows) {
    t.rows.push_back({param, std::to_string(r.value), std::to_string(r.params), std::to_string(r.flops),
                      format_double(r.val_mae), format_double(r.val_rmse), opt(r.val_mape)});
  }
  return format_csv(t);
}

}  // namespace lightcts
