#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lightcts/csv.hpp"
#include "lightcts/errors.hpp"
#include "lightcts/profiler.hpp"

using namespace lightcts;

namespace {

ModelConfig pems_config() {
  ModelConfig c;
  c.n_series = 170;
  return c;
}

// Parameter total written out term by term.
std::uint64_t hand_params(const ModelConfig& c) {
  const std::uint64_t d = c.d_model(), f = c.n_features, n = c.n_series;
  const std::uint64_t k = c.ltcn.kernel_size, gt = c.ltcn.groups, r = c.ltcn.se_reduction;
  const std::uint64_t gm = c.glformer.mha_groups, gf = c.glformer.ffn_groups;
  const std::uint64_t dp = c.glformer.hidden(), dh = c.hidden_width(), l = c.output_len();
  const std::uint64_t bias = c.ltcn.conv_bias ? d : 0;
  const std::uint64_t embed = f * d + d;
  const std::uint64_t t_ops = c.ltcn.layers() * 2 * (d * (d / gt) * k + bias);
  const std::uint64_t se = 2 * d * (d / r);
  const std::uint64_t block = 3 * d * d / gm + d * dp + dp + dp * d / gf + d + 4 * d;
  const std::uint64_t s_ops = n * d + c.glformer.blocks() * block;
  const std::uint64_t head = d * dh + dh + dh * l + l;
  return embed + t_ops + se + s_ops + head;
}

}  // namespace

TEST_CASE("building blocks") {
  const auto fc = dense_cost("fc", Component::AggregationOutput, 1, 3, 2, true);
  CHECK(fc.total_params() == 8);
  CHECK(dense_cost("mm", Component::SOperator, 3, 4, 2, false).total_flops() == 48);

  const auto grouped = sgtcn_cost("c", 5, 12, 16, 2, 4, false);
  const auto plain = sgtcn_cost("c", 5, 12, 16, 2, 1, false);
  CHECK(grouped.total_params() * 4 == plain.total_params());
  CHECK(grouped.total_flops() * 4 == plain.total_flops());
  CHECK(grouped.total_flops() == 2ull * 5 * 12 * 2 * 16 * 16 / 4);
  CHECK(sgtcn_cost("c", 5, 24, 16, 2, 4, true).total_flops() ==
        2 * sgtcn_cost("c", 5, 12, 16, 2, 4, true).total_flops());
  CHECK(sgtcn_cost("c", 10, 12, 16, 2, 4, true).total_flops() ==
        2 * sgtcn_cost("c", 5, 12, 16, 2, 4, true).total_flops());

  const auto lm = mha_cost("m", 7, 16, 2, 2), m = mha_cost("m", 7, 16, 2, 1);
  CHECK(lm.flops_of(CostKind::Mac) * 2 == m.flops_of(CostKind::Mac));
  CHECK(lm.params_of(CostKind::Mac) * 2 == m.params_of(CostKind::Mac));
  // Scores are 2 N^2 (D / h) per head per group, i.e. 2 N^2 D in total.
  CHECK(lm.flops_of(CostKind::Attention) == 2 * (2ull * 7 * 7 * 16));
}

TEST_CASE("parameter counts agree with enumeration and the hand formula") {
  std::vector<ModelConfig> configs{pems_config()};
  ModelConfig single = pems_config();
  single.n_series = 12;
  single.mode = ForecastMode::Single;
  single.ltcn.conv_bias = false;
  configs.push_back(single);
  ModelConfig no_blocks = single;
  no_blocks.glformer.pattern = {};
  no_blocks.n_features = 3;
  configs.push_back(no_blocks);
  ModelConfig tiny;
  tiny.n_series = 3;
  tiny.history = 4;
  tiny.horizon = 2;
  tiny.set_d_model(4);
  tiny.ltcn.dilations = {1, 2};
  tiny.ltcn.groups = 2;
  tiny.ltcn.se_reduction = 2;
  tiny.glformer.heads = 1;
  tiny.glformer.pattern = {BlockKind::Global, BlockKind::Global};
  configs.push_back(tiny);

  for (const auto& c : configs) {
    const LightCtsModel m(c, MaskMatrix::all_true(c.n_series));
    const CostReport enumerated = count_params(m);
    const CostReport analytic = count_flops(c);
    CHECK(enumerated.total_params() == m.parameter_count());
    CHECK(analytic.total_params() == enumerated.total_params());
    CHECK(analytic.total_params() == hand_params(c));
    for (Component comp : {Component::Embedding, Component::TOperator, Component::SOperator,
                           Component::AggregationOutput}) {
      CHECK(analytic.component(comp).params == enumerated.component(comp).params);
    }
  }
}

TEST_CASE("PEMS08-style configuration") {
  const CostReport r = count_flops(pems_config());
  const double total = static_cast<double>(r.total_params());
  CHECK(std::abs(total - 177000.0) / 177000.0 <= 0.30);
  const auto emb = r.component(Component::Embedding);
  const auto s = r.component(Component::SOperator);
  const auto out = r.component(Component::AggregationOutput);
  CHECK(s.flops + out.flops > emb.flops);
  double pct = 0.0, ppct = 0.0;
  for (const auto& c : r.components()) {
    pct += c.flop_pct;
    ppct += c.param_pct;
  }
  CHECK(std::abs(pct - 100.0) < 0.01);
  CHECK(std::abs(ppct - 100.0) < 0.01);
}

TEST_CASE("T-operator MAC FLOPs follow the hand formula") {
  ModelConfig c = pems_config();
  c.n_series = 9;
  const auto r = count_flops(c);
  const std::uint64_t n = 9, p = 12, k = 2, d = 64, g = 4;
  CHECK(r.flops_of(Component::TOperator, CostKind::Mac) == 4 * 2 * (2 * n * p * k * d * d / g));
  CHECK(r.flops_of(Component::Embedding, CostKind::Mac) == 2 * n * p * 1 * d);
}

TEST_CASE("grouping ratios are exact") {
  for (std::size_t gt : {1u, 2u, 4u, 8u})
    for (std::size_t gm : {1u, 2u, 4u})
      for (std::size_t gf : {1u, 2u, 4u}) {
        ModelConfig c = pems_config();
        c.ltcn.groups = gt;
        c.glformer.mha_groups = gm;
        c.glformer.ffn_groups = gf;
        c.glformer.heads = 2;
        const auto checks = group_ratio_checks(c);
        REQUIRE(checks.size() == 4);
        for (const auto& rc : checks) {
          INFO(rc.name << " G=" << gt << "," << gm << "," << gf);
          CHECK(rc.params_exact());
          CHECK(rc.flops_exact());
        }
        CHECK_NOTHROW(assert_group_ratios(c));
      }
  const auto checks = group_ratio_checks(pems_config());
  CHECK(checks[2].num == 3);
  CHECK(checks[2].den == 4);
  CHECK(checks[2].grouped_params * 4 == checks[2].plain_params * 3);
}

TEST_CASE("scaling exponents") {
  ModelConfig base = pems_config();
  base.n_series = 20;
  const auto d = scaling_check(base, SweepVar::D, {16, 32, 64}, ScalingTarget::TOperatorMac);
  CHECK(d.slope == doctest::Approx(2.0).epsilon(1e-12));
  const auto n = scaling_check(base, SweepVar::N, {10, 20, 40}, ScalingTarget::AttentionScores);
  CHECK(n.slope == doctest::Approx(2.0).epsilon(1e-12));
  const auto p = scaling_check(base, SweepVar::P, {4, 8, 16}, ScalingTarget::TOperatorMac);
  CHECK(p.slope == doctest::Approx(1.0).epsilon(1e-12));
  const auto nt = scaling_check(base, SweepVar::N, {10, 20, 40}, ScalingTarget::TOperatorMac);
  CHECK(nt.slope == doctest::Approx(1.0).epsilon(1e-12));

  const auto g = scaling_check(base, SweepVar::GT, {1, 2, 4}, ScalingTarget::TOperatorMac);
  CHECK(g.points[1].flops * 2 == g.points[0].flops);
  CHECK(g.points[2].flops * 4 == g.points[0].flops);
  CHECK(g.slope == doctest::Approx(-1.0).epsilon(1e-12));

  CHECK_THROWS_AS(scaling_check(base, SweepVar::D, {16, 32}, ScalingTarget::Total), ConfigError);
  CHECK_THROWS_AS(scaling_check(base, SweepVar::GT, {1, 3, 4}, ScalingTarget::Total), ConfigError);
  ModelConfig empty = base;
  empty.glformer.pattern = {};
  CHECK_THROWS_AS(scaling_check(empty, SweepVar::N, {10, 20, 40}, ScalingTarget::AttentionScores),
                  ConfigError);
}

TEST_CASE("last-shot compression saves a factor of P in the S-operator") {
  for (std::size_t p : {4u, 12u, 24u}) {
    const GlFormerConfig gl;
    const auto compressed = glformer_cost(gl, 30, 1);
    const auto full = glformer_cost(gl, 30, p);
    CHECK(full.total_flops() == p * compressed.total_flops());
    CHECK(full.total_params() == compressed.total_params());
  }
}

TEST_CASE("count_flops input shapes") {
  const ModelConfig c = pems_config();
  const auto one = count_flops(c);
  CHECK(count_flops(c, {170, 12, 1}).total_flops() == one.total_flops());
  CHECK(count_flops(c, {4, 170, 12, 1}).total_flops() == 4 * one.total_flops());
  CHECK(count_flops(c, {4, 170, 12, 1}).total_params() == one.total_params());
  CHECK_THROWS_AS(count_flops(c, {169, 12, 1}), ShapeError);
  CHECK_THROWS_AS(count_flops(c, {170, 12, 2}), ShapeError);
}

TEST_CASE("report formats") {
  const CostReport r = count_flops(pems_config());
  const CsvTable t = parse_csv(format_cost_csv(r));
  REQUIRE(t.rows.size() == 5);
  CHECK(t.header == std::vector<std::string>{"component", "params", "flops", "params_pct", "flops_pct"});
  std::uint64_t params = 0, flops = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    params += parse_unsigned(t.rows[i][1]);
    flops += parse_unsigned(t.rows[i][2]);
    CHECK(parse_double(t.rows[i][4]) == r.components()[i].flop_pct);
  }
  CHECK(t.rows[4][0] == "total");
  CHECK(parse_unsigned(t.rows[4][1]) == params);
  CHECK(parse_unsigned(t.rows[4][2]) == flops);

  const std::string table = format_cost_table(r);
  for (const char* name : {"embedding", "t_operator", "s_operator", "aggregation_output", "total"})
    CHECK(table.find(name) != std::string::npos);
}
