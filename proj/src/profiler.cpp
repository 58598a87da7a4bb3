#include "lightcts/profiler.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "lightcts/csv.hpp"
#include "lightcts/errors.hpp"

namespace lightcts {

namespace {

constexpr std::uint64_t kSoftmaxFlops = 4;
constexpr std::uint64_t kNormFlops = 7;

constexpr Component kComponents[] = {Component::Embedding, Component::TOperator,
                                     Component::SOperator, Component::AggregationOutput};

CostEntry entry(std::string name, Component c, CostKind kind, std::uint64_t params,
                std::uint64_t flops) {
  return CostEntry{std::move(name), c, kind, params, flops};
}

CostReport single(CostEntry e) {
  CostReport r;
  r.entries.push_back(std::move(e));
  return r;
}

}  // namespace

std::string to_string(CostKind kind) {
  switch (kind) {
    case CostKind::Mac: return "mac";
    case CostKind::Bias: return "bias";
    case CostKind::Elementwise: return "elementwise";
    case CostKind::Attention: return "attention";
    case CostKind::Softmax: return "softmax";
    case CostKind::Norm: return "norm";
  }
  return "unknown";
}

std::uint64_t CostReport::total_params() const {
  std::uint64_t t = 0;
  for (const auto& e : entries) t += e.params;
  return t;
}

std::uint64_t CostReport::total_flops() const {
  std::uint64_t t = 0;
  for (const auto& e : entries) t += e.flops;
  return t;
}

ComponentCost CostReport::component(Component c) const {
  ComponentCost out{c};
  for (const auto& e : entries) {
    if (e.component != c) continue;
    out.params += e.params;
    out.flops += e.flops;
  }
  const std::uint64_t tp = total_params(), tf = total_flops();
  out.param_pct = tp ? 100.0 * static_cast<double>(out.params) / static_cast<double>(tp) : 0.0;
  out.flop_pct = tf ? 100.0 * static_cast<double>(out.flops) / static_cast<double>(tf) : 0.0;
  return out;
}

std::vector<ComponentCost> CostReport::components() const {
  std::vector<ComponentCost> out;
  for (Component c : kComponents) out.push_back(component(c));
  return out;
}

std::uint64_t CostReport::params_of(CostKind kind) const {
  std::uint64_t t = 0;
  for (const auto& e : entries)
    if (e.kind == kind) t += e.params;
  return t;
}

std::uint64_t CostReport::flops_of(CostKind kind) const {
  std::uint64_t t = 0;
  for (const auto& e : entries)
    if (e.kind == kind) t += e.flops;
  return t;
}

std::uint64_t CostReport::flops_of(Component c, CostKind kind) const {
  std::uint64_t t = 0;
  for (const auto& e : entries)
    if (e.kind == kind && e.component == c) t += e.flops;
  return t;
}

void CostReport::append(const CostReport& other) {
  entries.insert(entries.end(), other.entries.begin(), other.entries.end());
}

CostReport dense_cost(const std::string& name, Component c, std::uint64_t rows, std::uint64_t in,
                      std::uint64_t out, bool bias) {
  CostReport r = single(entry(name + ".weight", c, CostKind::Mac, in * out, 2 * rows * in * out));
  if (bias) r.entries.push_back(entry(name + ".bias", c, CostKind::Bias, out, rows * out));
  return r;
}

CostReport grouped_dense_cost(const std::string& name, Component c, std::uint64_t rows,
                              std::uint64_t in, std::uint64_t out, std::uint64_t groups,
                              bool bias) {
  CostReport r = single(entry(name + ".weight", c, CostKind::Mac, in * out / groups,
                              2 * rows * in * out / groups));
  if (bias) r.entries.push_back(entry(name + ".bias", c, CostKind::Bias, out, rows * out));
  return r;
}

CostReport sgtcn_cost(const std::string& name, std::uint64_t n, std::uint64_t p, std::uint64_t d,
                      std::uint64_t kernel, std::uint64_t groups, bool bias) {
  CostReport r = single(entry(name + ".weight", Component::TOperator, CostKind::Mac,
                              d * (d / groups) * kernel, 2 * n * p * kernel * d * d / groups));
  if (bias) {
    r.entries.push_back(entry(name + ".bias", Component::TOperator, CostKind::Bias, d, n * p * d));
  }
  return r;
}

CostReport ltcn_cost(const LtcnConfig& c, std::uint64_t n, std::uint64_t p) {
  CostReport r;
  const std::uint64_t d = c.d_model, cells = n * p * d;
  for (std::size_t b = 0; b < c.layers(); ++b) {
    const std::string name = "ltcn." + std::to_string(b);
    r.append(sgtcn_cost(name + ".out", n, p, d, c.kernel_size, c.groups, c.conv_bias));
    r.append(sgtcn_cost(name + ".gate", n, p, d, c.kernel_size, c.groups, c.conv_bias));
    r.entries.push_back(entry(name + ".tanh", Component::TOperator, CostKind::Elementwise, 0, cells));
    r.entries.push_back(entry(name + ".sigmoid", Component::TOperator, CostKind::Elementwise, 0, cells));
    r.entries.push_back(entry(name + ".gating", Component::TOperator, CostKind::Elementwise, 0, cells));
  }
  return r;
}

CostReport se_cost(const LtcnConfig& c, std::uint64_t n) {
  const Component agg = Component::AggregationOutput;
  const std::uint64_t d = c.d_model, squeezed = d / c.se_reduction;
  CostReport r;
  const std::uint64_t layers = c.layers();
  r.entries.push_back(entry("last_shot.sum", agg, CostKind::Elementwise, 0,
                            layers > 0 ? (layers - 1) * n * d : 0));
  r.entries.push_back(entry("se.pool", agg, CostKind::Elementwise, 0, n * d));
  r.append(dense_cost("se.squeeze", agg, 1, d, squeezed, false));
  r.entries.push_back(entry("se.relu", agg, CostKind::Elementwise, 0, squeezed));
  r.append(dense_cost("se.excite", agg, 1, squeezed, d, false));
  r.entries.push_back(entry("se.sigmoid", agg, CostKind::Elementwise, 0, d));
  r.entries.push_back(entry("se.rescale", agg, CostKind::Elementwise, 0, n * d));
  return r;
}

CostReport mha_cost(const std::string& name, std::uint64_t n, std::uint64_t d, std::uint64_t heads,
                    std::uint64_t groups, std::uint64_t time_steps) {
  const Component s = Component::SOperator;
  const std::uint64_t rows = n * time_steps;
  CostReport r;
  r.append(grouped_dense_cost(name + ".query", s, rows, d, d, groups, false));
  r.append(grouped_dense_cost(name + ".key", s, rows, d, d, groups, false));
  r.append(grouped_dense_cost(name + ".value", s, rows, d, d, groups, false));
  // Every (group, head) pair handles a width dk = d / (groups * heads) slice.
  const std::uint64_t score_cells = n * n * groups * heads * time_steps;
  r.entries.push_back(entry(name + ".scores", s, CostKind::Attention, 0, 2 * n * n * d * time_steps));
  r.entries.push_back(entry(name + ".scale", s, CostKind::Elementwise, 0, score_cells));
  r.entries.push_back(entry(name + ".softmax", s, CostKind::Softmax, 0, kSoftmaxFlops * score_cells));
  r.entries.push_back(entry(name + ".mix", s, CostKind::Attention, 0, 2 * n * n * d * time_steps));
  return r;
}

CostReport ffn_cost(const std::string& name, std::uint64_t n, std::uint64_t d, std::uint64_t hidden,
                    std::uint64_t groups, std::uint64_t time_steps) {
  const Component s = Component::SOperator;
  const std::uint64_t rows = n * time_steps;
  CostReport r = dense_cost(name + ".w1", s, rows, d, hidden, true);
  r.entries.push_back(entry(name + ".relu", s, CostKind::Elementwise, 0, rows * hidden));
  r.append(grouped_dense_cost(name + ".w2", s, rows, hidden, d, groups, true));
  return r;
}

CostReport glformer_cost(const GlFormerConfig& c, std::uint64_t n, std::uint64_t time_steps) {
  const Component s = Component::SOperator;
  const std::uint64_t d = c.d_model, rows = n * time_steps;
  CostReport r;
  r.entries.push_back(entry("glformer.positional", s, CostKind::Elementwise, n * d, rows * d));
  for (std::size_t b = 0; b < c.blocks(); ++b) {
    const std::string name = "glformer." + std::to_string(b);
    r.append(mha_cost(name + ".mha", n, d, c.heads, c.mha_groups, time_steps));
    r.entries.push_back(entry(name + ".residual1", s, CostKind::Elementwise, 0, rows * d));
    r.entries.push_back(entry(name + ".norm1", s, CostKind::Norm, 2 * d, kNormFlops * rows * d));
    r.append(ffn_cost(name + ".ffn", n, d, c.hidden(), c.ffn_groups, time_steps));
    r.entries.push_back(entry(name + ".residual2", s, CostKind::Elementwise, 0, rows * d));
    r.entries.push_back(entry(name + ".norm2", s, CostKind::Norm, 2 * d, kNormFlops * rows * d));
  }
  return r;
}

CostReport count_flops(const ModelConfig& config) {
  return count_flops(config, {config.n_series, config.history, config.n_features});
}

CostReport count_flops(const ModelConfig& config, const Shape& input_shape) {
  config.validate();
  const bool ok = (input_shape.size() == 3 || input_shape.size() == 4) &&
                  input_shape[input_shape.size() - 3] == config.n_series &&
                  input_shape.back() == config.n_features;
  if (!ok) {
    throw ShapeError("count_flops: input " + shape_str(input_shape) + " does not match N=" +
                     std::to_string(config.n_series) + ", F=" + std::to_string(config.n_features));
  }
  const std::uint64_t batch = input_shape.size() == 4 ? input_shape[0] : 1;
  const std::uint64_t n = config.n_series, p = input_shape[input_shape.size() - 2];
  const std::uint64_t d = config.d_model(), dh = config.hidden_width(), l = config.output_len();
  const Component agg = Component::AggregationOutput;

  CostReport r = dense_cost("embed", Component::Embedding, n * p, config.n_features, d, true);
  r.append(ltcn_cost(config.ltcn, n, p));
  r.append(se_cost(config.ltcn, n));
  r.append(glformer_cost(config.glformer, n));
  r.entries.push_back(entry("head.merge", agg, CostKind::Elementwise, 0, n * d));
  r.append(dense_cost("head.w1", agg, n, d, dh, true));
  r.entries.push_back(entry("head.relu", agg, CostKind::Elementwise, 0, n * dh));
  r.append(dense_cost("head.w2", agg, n, dh, l, true));
  for (auto& e : r.entries) e.flops *= batch;
  return r;
}

CostReport count_params(const LightCtsModel& model) {
  CostReport r;
  for (const auto& p : model.parameters()) {
    const std::string& name = p.name;
    CostKind kind = p.tensor.rank() >= 2 ? CostKind::Mac : CostKind::Bias;
    if (name.find("norm") != std::string::npos) kind = CostKind::Norm;
    if (name == "glformer.positional") kind = CostKind::Elementwise;
    r.entries.push_back(entry(name, p.component, kind, p.tensor.numel(), 0));
  }
  return r;
}

std::vector<RatioCheck> group_ratio_checks(const ModelConfig& config) {
  config.validate();
  const std::uint64_t n = config.n_series, p = config.history, d = config.d_model();
  const auto& gl = config.glformer;
  std::vector<RatioCheck> out;
  auto add = [&](std::string name, const CostReport& grouped, const CostReport& plain,
                 std::uint64_t num, std::uint64_t den) {
    out.push_back({std::move(name), grouped.params_of(CostKind::Mac), plain.params_of(CostKind::Mac),
                   grouped.flops_of(CostKind::Mac), plain.flops_of(CostKind::Mac), num, den});
  };

  LtcnConfig plain_ltcn = config.ltcn;
  plain_ltcn.groups = 1;
  add("l_tcn", ltcn_cost(config.ltcn, n, p), ltcn_cost(plain_ltcn, n, p), 1, config.ltcn.groups);
  add("l_mha", mha_cost("mha", n, d, gl.heads, gl.mha_groups), mha_cost("mha", n, d, gl.heads, 1), 1,
      gl.mha_groups);
  add("l_ffn", ffn_cost("ffn", n, d, gl.hidden(), gl.ffn_groups), ffn_cost("ffn", n, d, gl.hidden(), 1),
      gl.ffn_groups + 1, 2 * gl.ffn_groups);
  add("l_ffn.second_layer",
      grouped_dense_cost("w2", Component::SOperator, n, gl.hidden(), d, gl.ffn_groups, false),
      dense_cost("w2", Component::SOperator, n, gl.hidden(), d, false), 1, gl.ffn_groups);
  return out;
}

void assert_group_ratios(const ModelConfig& config) {
  for (const auto& c : group_ratio_checks(config)) {
    if (!c.params_exact() || !c.flops_exact()) {
      throw ContractError(c.name + ": grouped/plain ratio is not " + std::to_string(c.num) + "/" +
                          std::to_string(c.den) + " (params " + std::to_string(c.grouped_params) +
                          "/" + std::to_string(c.plain_params) + ", flops " +
                          std::to_string(c.grouped_flops) + "/" + std::to_string(c.plain_flops) + ")");
    }
  }
}

std::string to_string(SweepVar v) {
  switch (v) {
    case SweepVar::D: return "D";
    case SweepVar::GT: return "G^T";
    case SweepVar::GM: return "G^M";
    case SweepVar::P: return "P";
    case SweepVar::N: return "N";
  }
  return "?";
}

std::string to_string(ScalingTarget t) {
  switch (t) {
    case ScalingTarget::TOperatorMac: return "t_operator_mac";
    case ScalingTarget::AttentionScores: return "attention_scores";
    case ScalingTarget::SOperatorMac: return "s_operator_mac";
    case ScalingTarget::Total: return "total";
  }
  return "?";
}

ScalingResult scaling_check(const ModelConfig& base, SweepVar var,
                            const std::vector<std::size_t>& values, ScalingTarget target) {
  if (values.size() < 3) {
    throw ConfigError("scaling_check: need at least 3 values of " + to_string(var) + ", got " +
                      std::to_string(values.size()));
  }
  ScalingResult result{var, target, {}, 0.0};
  for (std::size_t v : values) {
    ModelConfig c = base;
    switch (var) {
      case SweepVar::D: c.set_d_model(v); break;
      case SweepVar::GT: c.ltcn.groups = v; break;
      case SweepVar::GM: c.glformer.mha_groups = v; break;
      case SweepVar::P: c.history = v; break;
      case SweepVar::N: c.n_series = v; break;
    }
    const CostReport r = count_flops(c);
    std::uint64_t f = 0;
    switch (target) {
      case ScalingTarget::TOperatorMac: f = r.flops_of(Component::TOperator, CostKind::Mac); break;
      case ScalingTarget::AttentionScores: f = r.flops_of(Component::SOperator, CostKind::Attention); break;
      case ScalingTarget::SOperatorMac: f = r.flops_of(Component::SOperator, CostKind::Mac); break;
      case ScalingTarget::Total: f = r.total_flops(); break;
    }
    if (v == 0 || f == 0) {
      throw ConfigError("scaling_check: " + to_string(target) + " is zero at " + to_string(var) +
                        "=" + std::to_string(v));
    }
    result.points.push_back({v, f});
  }
  double mx = 0, my = 0;
  const double k = static_cast<double>(values.size());
  for (const auto& pt : result.points) {
    mx += std::log(static_cast<double>(pt.value));
    my += std::log(static_cast<double>(pt.flops));
  }
  mx /= k;
  my /= k;
  double sxy = 0, sxx = 0;
  for (const auto& pt : result.points) {
    const double dx = std::log(static_cast<double>(pt.value)) - mx;
    sxy += dx * (std::log(static_cast<double>(pt.flops)) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw ConfigError("scaling_check: swept values must not all be equal");
  result.slope = sxy / sxx;
  return result;
}

std::string format_cost_csv(const CostReport& report) {
  CsvTable t;
  t.header = {"component", "params", "flops", "params_pct", "flops_pct"};
  for (const auto& c : report.components()) {
    t.rows.push_back({to_string(c.component), std::to_string(c.params), std::to_string(c.flops),
                      format_double(c.param_pct), format_double(c.flop_pct)});
  }
  t.rows.push_back({"total", std::to_string(report.total_params()),
                    std::to_string(report.total_flops()), "100", "100"});
  return format_csv(t);
}

std::string format_cost_table(const CostReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %14s %16s %9s %9s\n", "component", "params", "flops",
                "params%", "flops%");
  out << line;
  for (const auto& c : report.components()) {
    std::snprintf(line, sizeof line, "%-20s %14llu %16llu %8.2f%% %8.2f%%\n",
                  to_string(c.component).c_str(), static_cast<unsigned long long>(c.params),
                  static_cast<unsigned long long>(c.flops), c.param_pct, c.flop_pct);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-20s %14llu %16llu %8.2f%% %8.2f%%\n", "total",
                static_cast<unsigned long long>(report.total_params()),
                static_cast<unsigned long long>(report.total_flops()), 100.0, 100.0);
  out << line;
  return out.str();
}

}  // namespace lightcts
