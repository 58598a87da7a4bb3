#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lightcts/errors.hpp"
#include "lightcts/workbench.hpp"

using namespace lightcts;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string format = "table";
  std::vector<std::string> overrides;
};

RunConfig build_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.apply(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.set_seed(*o.seed);
  if (o.out) c.out = *o.out;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LightCTS correlated time series forecasting workbench"};
  app.require_subcommand(1, 1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "seed for data, initialization and shuffling");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--format", o.format, "report format")->check(CLI::IsMember({"csv", "table"}));
    sub->add_option("--set", o.overrides, "override one config key (key=value), repeatable");
  };
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic coupled dataset");
  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  CLI::App* profile = app.add_subcommand("profile", "count parameters and FLOPs per component");
  CLI::App* study = app.add_subcommand("study", "sweep D, G^T or L_S at reduced epochs");
  for (CLI::App* sub : {synth, train, eval, profile, study}) add_common(sub);
  std::string param, values;
  study->add_option("--param", param, "d_model, ltcn_groups or s_blocks");
  study->add_option("--values", values, "comma-separated sweep values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig config = build_config(o);
    if (!param.empty()) config.apply("study_param", param);
    if (!values.empty()) config.apply("study_values", values);
    config.validate();
    const OutputFormat format = o.format == "csv" ? OutputFormat::Csv : OutputFormat::Table;

    if (*synth) cmd_synth(config, std::cout);
    else if (*train) cmd_train(config, std::cout);
    else if (*eval) cmd_eval(config, std::cout, format);
    else if (*profile) cmd_profile(config, std::cout, format);
    else if (*study) cmd_study(config, std::cout, format);
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
