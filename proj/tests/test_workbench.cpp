#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lightcts/csv.hpp"
#include "lightcts/errors.hpp"
#include "lightcts/workbench.hpp"

using namespace lightcts;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("lightcts_wb_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

RunConfig small_run(const fs::path& out) {
  RunConfig c = RunConfig::parse(
      "synth_n = 4\n"
      "synth_t = 300\n"
      "d_model = 16\n"
      "head_hidden = 16\n"
      "epochs = 2\n"
      "batch_size = 16\n"
      "study_epochs = 1\n");
  c.out = out;
  c.set_seed(3);
  return c;
}

double cross_series_variance(const CtsDataset& ds, std::size_t t) {
  double mean = 0.0;
  for (std::size_t i = 0; i < ds.n_series; ++i) mean += ds.at(i, t, 0);
  mean /= static_cast<double>(ds.n_series);
  double var = 0.0;
  for (std::size_t i = 0; i < ds.n_series; ++i) var += std::pow(ds.at(i, t, 0) - mean, 2);
  return var / static_cast<double>(ds.n_series);
}

}  // namespace

TEST_CASE("synthesize: decoupled noiseless series are exactly periodic") {
  SynthSpec spec;
  spec.n_series = 6;
  spec.n_steps = 400;
  spec.density = 0.0;
  spec.noise = 0.0;
  spec.seed = 11;
  const CtsDataset ds = synthesize(spec);
  REQUIRE(ds.adjacencies.size() == 1);
  for (double a : ds.adjacencies[0]) CHECK(a == 0.0);
  for (std::size_t i = 0; i < ds.n_series; ++i) {
    bool found = false;
    for (std::size_t p = 2; p <= 100 && !found; ++p) {
      bool periodic = true;
      for (std::size_t t = 0; t + p < ds.n_steps && periodic; ++t)
        periodic = ds.at(i, t, 0) == ds.at(i, t + p, 0);
      found = periodic;
    }
    CHECK_MESSAGE(found, "series " << i << " is not exactly periodic");
  }
}

TEST_CASE("synthesize: adjacency is symmetric with an empty diagonal") {
  SynthSpec spec;
  spec.n_series = 10;
  spec.density = 0.5;
  const CtsDataset ds = synthesize(spec);
  const auto& a = ds.adjacencies[0];
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(a[i * 10 + i] == 0.0);
    for (std::size_t j = 0; j < 10; ++j) CHECK(a[i * 10 + j] == a[j * 10 + i]);
  }
}

TEST_CASE("synthesize: strong dense coupling contracts cross-series spread") {
  SynthSpec spec;
  spec.n_series = 8;
  spec.n_steps = 600;
  spec.density = 1.0;
  spec.coupling = 0.95;
  spec.noise = 0.0;
  const CtsDataset coupled = synthesize(spec);
  spec.coupling = 0.0;
  const CtsDataset free = synthesize(spec);

  double late_coupled = 0.0, late_free = 0.0;
  for (std::size_t t = 500; t < 600; ++t) {
    late_coupled += cross_series_variance(coupled, t);
    late_free += cross_series_variance(free, t);
  }
  CHECK(cross_series_variance(coupled, 0) == doctest::Approx(cross_series_variance(free, 0)));
  CHECK(late_coupled < 0.05 * late_free);
}

TEST_CASE("synthesize: random walk and extra features") {
  SynthSpec spec;
  spec.n_series = 3;
  spec.n_steps = 200;
  spec.n_features = 2;
  spec.kind = SynthKind::RandomWalk;
  const CtsDataset ds = synthesize(spec);
  CHECK(ds.n_features == 2);
  CHECK(ds.values.size() == 3 * 200 * 2);
  for (double v : ds.values) CHECK(std::isfinite(v));
  CHECK(parse_synth_kind(to_string(SynthKind::RandomWalk)) == SynthKind::RandomWalk);
  CHECK_THROWS_AS(parse_synth_kind("walk"), ConfigError);
}

TEST_CASE("cmd_synth: deterministic files that round-trip through load_dataset") {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  RunConfig ca = small_run(a), cb = small_run(b);
  std::ostringstream log;
  const fs::path pa = cmd_synth(ca, log), pb = cmd_synth(cb, log);
  CHECK(pa == a / "synth.cts");
  CHECK(read_file(pa) == read_file(pb));

  const CtsDataset loaded = load_dataset(pa, DataFormat::Cts1);
  const CtsDataset direct = synthesize(ca.synth);
  CHECK(loaded.values == direct.values);
  CHECK(loaded.adjacencies == direct.adjacencies);

  cb.set_seed(4);
  CHECK(read_file(cmd_synth(cb, log)) != read_file(pa));

  RunConfig csv = small_run(a);
  csv.data = a / "series.csv";
  cmd_synth(csv, log);
  const CtsDataset from_csv =
      load_dataset(*csv.data, DataFormat::Csv, adjacency_csv_paths(*csv.data, 1));
  REQUIRE(from_csv.values.size() == direct.values.size());
  for (std::size_t k = 0; k < direct.values.size(); ++k) CHECK(from_csv.values[k] == direct.values[k]);
  CHECK(from_csv.adjacencies == direct.adjacencies);
}

TEST_CASE("RunConfig parsing") {
  SUBCASE("keys, comments and seed") {
    const RunConfig c = RunConfig::parse(
        "# comment\n"
        "  d_model = 32   # trailing\n"
        "\n"
        "seed=9\n"
        "synth_kind = random_walk\n"
        "learning_rate = 0.01\n"
        "grad_clip = 5\n"
        "split_train = 0.7\n"
        "split_val = 0.1\n"
        "study_param = ltcn_groups\n"
        "study_values = 1, 2 ,4\n");
    CHECK(c.model.d_model() == 32);
    CHECK(c.model.glformer.d_model == 32);
    CHECK(c.model.seed == 9);
    CHECK(c.train.seed == 9);
    CHECK(c.synth.seed == 9);
    CHECK(c.synth.kind == SynthKind::RandomWalk);
    CHECK(c.train.learning_rate == 0.01);
    CHECK(c.train.grad_clip.value() == 5.0);
    CHECK(c.split.train == 0.7);
    CHECK(c.study_values == std::vector<std::size_t>{1, 2, 4});
    CHECK(c.checkpoint_path() == fs::path(".") / "model.lcts");
  }
  SUBCASE("errors name the line and key") {
    auto message = [](const std::string& text) {
      try {
        RunConfig::parse(text);
      } catch (const ConfigError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK(message("bogus = 1\n").find("line 1") != std::string::npos);
    CHECK(message("bogus = 1\n").find("bogus") != std::string::npos);
    CHECK(message("epochs = 1\nepochs = ten\n").find("line 2") != std::string::npos);
    CHECK(message("no equals sign\n").find("key=value") != std::string::npos);
    CHECK(message("n_series = 4\n").find("n_series") != std::string::npos);
    CHECK(message("mode = sideways\n") != "");
  }
  SUBCASE("validation rejects every upstream violation up front") {
    RunConfig c = small_run(scratch("cfg"));
    c.validate();
    RunConfig bad = c;
    bad.apply("ltcn_groups", "3");
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.apply("dilations", "1,2");
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.apply("split_train", "0.95");
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.apply("synth_density", "1.5");
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.apply("learning_rate", "-1");
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.apply("study_param", "heads");
    bad.apply("study_values", "1,2");
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.apply("study_param", "d_model");
    bad.apply("study_values", "8");
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
  SUBCASE("load from file") {
    const fs::path dir = scratch("cfg_file");
    std::ofstream(dir / "run.cfg") << "epochs = 7\nout = " << dir.string() << "\n";
    const RunConfig c = RunConfig::load(dir / "run.cfg");
    CHECK(c.train.epochs == 7);
    CHECK(c.out == dir);
    CHECK_THROWS_AS(RunConfig::load(dir / "missing.cfg"), ConfigError);
  }
}

TEST_CASE("prepare: too short a series is rejected before training") {
  RunConfig c = small_run(scratch("short"));
  c.apply("synth_t", "60");
  CHECK_THROWS_AS(prepare(c), InsufficientLengthError);
}

TEST_CASE("cmd_train and cmd_eval produce parseable artifacts") {
  const fs::path dir = scratch("train");
  RunConfig c = small_run(dir);
  std::ostringstream log;
  const TrainOutcome trained = cmd_train(c, log);
  CHECK(fs::exists(trained.checkpoint));
  CHECK(trained.checkpoint == dir / "model.lcts");

  const CsvTable history = parse_csv(read_file(trained.history));
  CHECK(history.header == std::vector<std::string>{"epoch", "train_mae", "val_mae"});
  REQUIRE(history.rows.size() == trained.result.history.size());
  for (std::size_t k = 0; k < history.rows.size(); ++k) {
    CHECK(parse_double(history.rows[k][1]) == trained.result.history[k].train_mae);
    CHECK(parse_double(history.rows[k][2]) == trained.result.history[k].val_mae);
  }

  std::ostringstream table;
  const EvalOutcome evaluated = cmd_eval(c, table, OutputFormat::Table);
  CHECK(table.str().find("persistence") != std::string::npos);
  const CsvTable metrics = parse_csv(read_file(evaluated.metrics));
  CHECK(metrics.header ==
        std::vector<std::string>{"model", "scope", "mae", "rmse", "mape", "rrse", "corr"});
  std::vector<std::string> scopes;
  for (const auto& row : metrics.rows) scopes.push_back(row[0] + "/" + row[1]);
  CHECK(scopes == std::vector<std::string>{"lightcts/all", "lightcts/step_3", "lightcts/step_6",
                                           "lightcts/step_12", "persistence/all",
                                           "persistence/step_3", "persistence/step_6",
                                           "persistence/step_12"});
  CHECK(parse_double(metrics.rows[0][2]) == evaluated.model.mae);
  CHECK(parse_double(metrics.rows[4][3]) == evaluated.persistence.rmse);

  SUBCASE("short horizons emit only the average row") {
    RunConfig q = small_run(scratch("short_q"));
    q.apply("horizon", "6");
    cmd_train(q, log);
    const CsvTable m = parse_csv(read_file(cmd_eval(q, log, OutputFormat::Csv).metrics));
    CHECK(m.rows.size() == 2);
  }
  SUBCASE("checkpoint trained on a different N") {
    RunConfig other = c;
    other.apply("synth_n", "5");
    try {
      cmd_eval(other, log);
      FAIL("expected a shape error");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("positional") != std::string::npos);
    }
  }
  SUBCASE("missing checkpoint") {
    RunConfig missing = c;
    missing.checkpoint = dir / "nope.lcts";
    CHECK_THROWS(cmd_eval(missing, log));
  }
}

TEST_CASE("cmd_profile: four components summing to the total") {
  const fs::path dir = scratch("profile");
  RunConfig c;
  c.out = dir;
  std::ostringstream log;
  const CostReport report = cmd_profile(c, log, OutputFormat::Csv);
  const auto parts = report.components();
  REQUIRE(parts.size() == 4);
  std::uint64_t params = 0, flops = 0;
  for (const auto& p : parts) {
    params += p.params;
    flops += p.flops;
  }
  CHECK(params == report.total_params());
  CHECK(flops == report.total_flops());

  const CsvTable csv = parse_csv(read_file(dir / "cost.csv"));
  REQUIRE(csv.rows.size() == 5);
  std::uint64_t csv_params = 0;
  for (std::size_t k = 0; k < 4; ++k) csv_params += parse_unsigned(csv.rows[k][1]);
  CHECK(csv_params == parse_unsigned(csv.rows[4][1]));
  CHECK(log.str() == read_file(dir / "cost.csv"));
}

TEST_CASE("cmd_study sweeps") {
  std::ostringstream log;
  SUBCASE("G^T: params strictly decreasing") {
    RunConfig c = small_run(scratch("study_gt"));
    c.apply("study_param", "ltcn_groups");
    c.apply("study_values", "1,2,4");
    const auto rows = cmd_study(c, log, OutputFormat::Csv);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].params > rows[1].params);
    CHECK(rows[1].params > rows[2].params);
    const CsvTable t = parse_csv(read_file(c.out / "study.csv"));
    CHECK(t.header == std::vector<std::string>{"param", "value", "params", "flops", "val_mae",
                                               "val_rmse", "val_mape"});
    REQUIRE(t.rows.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(parse_unsigned(t.rows[k][1]) == rows[k].value);
      CHECK(parse_unsigned(t.rows[k][2]) == rows[k].params);
      CHECK(parse_unsigned(t.rows[k][3]) == rows[k].flops);
      CHECK(parse_double(t.rows[k][4]) == rows[k].val_mae);
    }
  }
  SUBCASE("D: quadratic T/S FLOPs") {
    RunConfig c = small_run(scratch("study_d"));
    c.apply("study_param", "d_model");
    c.apply("study_values", "16,32");
    const auto rows = cmd_study(c, log);
    REQUIRE(rows.size() == 2);
    const PreparedData data = prepare(c);
    ModelConfig small = data.model, large = data.model;
    small.set_d_model(16);
    large.set_d_model(32);
    const CostReport a = count_flops(small), b = count_flops(large);
    for (Component comp : {Component::TOperator, Component::SOperator}) {
      const double ratio = static_cast<double>(b.flops_of(comp, CostKind::Mac)) /
                           static_cast<double>(a.flops_of(comp, CostKind::Mac));
      CHECK(ratio == doctest::Approx(4.0).epsilon(0.05));
    }
    CHECK(rows[0].flops == a.total_flops());
    CHECK(rows[1].flops == b.total_flops());
  }
  SUBCASE("L_S: S-operator params linear") {
    RunConfig c = small_run(scratch("study_ls"));
    c.apply("study_param", "s_blocks");
    c.apply("study_values", "0,2,4");
    const auto rows = cmd_study(c, log);
    REQUIRE(rows.size() == 3);
    const std::uint64_t step1 = rows[1].params - rows[0].params;
    const std::uint64_t step2 = rows[2].params - rows[1].params;
    CHECK(step1 > 0);
    CHECK(step1 == step2);
  }
  SUBCASE("invalid value rejected before any training") {
    RunConfig c = small_run(scratch("study_bad"));
    c.apply("study_param", "d_model");
    c.apply("study_values", "16,12");
    CHECK_THROWS_AS(cmd_study(c, log), ConfigError);
    CHECK_FALSE(fs::exists(c.out / "study.csv"));
    CHECK(log.str().find("done") == std::string::npos);
  }
}

TEST_CASE("local blocks without adjacency are rejected") {
  const fs::path dir = scratch("no_adj");
  CtsDataset ds = synthesize(small_run(dir).synth);
  ds.adjacencies.clear();
  save_dataset(ds, dir / "plain.cts", DataFormat::Cts1);
  RunConfig c = small_run(dir);
  c.data = dir / "plain.cts";
  CHECK_THROWS_AS(prepare(c), ConfigError);
  c.apply("pattern", "global,global,global,global");
  CHECK_NOTHROW(prepare(c));
}

TEST_CASE("single-step runs report RRSE and CORR") {
  RunConfig c = small_run(scratch("single"));
  c.apply("mode", "single");
  std::ostringstream log;
  cmd_train(c, log);
  const EvalOutcome e = cmd_eval(c, log, OutputFormat::Csv);
  CHECK(e.model.rrse.has_value());
  CHECK(e.model.corr.has_value());
  CHECK(e.persistence.rrse.has_value());
  const CsvTable m = parse_csv(read_file(e.metrics));
  REQUIRE(m.rows.size() == 2);
  CHECK(parse_double(m.rows[0][5]) == *e.model.rrse);
  CHECK(parse_double(m.rows[0][6]) == *e.model.corr);
}
