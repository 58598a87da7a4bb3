#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "lightcts/errors.hpp"
#include "lightcts/model.hpp"
#include "lightcts/ops.hpp"
#include "support/module_oracles.hpp"
#include "support/test_util.hpp"

using namespace lightcts;
using lightcts::testing::bit_identical;
using lightcts::testing::max_abs_diff;
using lightcts::testing::random_tensor;
using oracle::Matrix;

namespace {

MaskMatrix random_mask(std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.4);
  MaskMatrix m{n, std::vector<std::uint8_t>(n * n)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m.keep[i * n + j] = (i == j || coin(rng)) ? 1 : 0;
  return m;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_series = 3;
  c.n_features = 1;
  c.history = 4;
  c.horizon = 2;
  c.set_d_model(4);
  c.ltcn.dilations = {1, 2};
  c.ltcn.groups = 2;
  c.ltcn.se_reduction = 2;
  c.glformer.heads = 1;
  c.glformer.pattern = GlFormerConfig::alternating(2);
  c.glformer.ffn_hidden = 16;
  c.head_hidden = 8;
  c.seed = 3;
  return c;
}

ModelConfig small_config(std::size_t n) {
  ModelConfig c;
  c.n_series = n;
  c.n_features = 2;
  c.history = 12;
  c.horizon = 3;
  c.set_d_model(16);
  c.glformer.heads = 2;
  c.glformer.pattern = GlFormerConfig::alternating(2);
  c.head_hidden = 32;
  c.seed = 11;
  return c;
}

// Every module oracle composed by hand for one sample x[N][P][F].
Matrix model_oracle(const LightCtsModel& m, const Tensor& x, const MaskMatrix* mask) {
  const auto& c = m.config();
  const std::size_t n = c.n_series, p = c.history, f = c.n_features, d = c.d_model();
  std::vector<double> h(n * p * d);
  for (std::size_t r = 0; r < n * p; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = m.embed_bias[j];
      for (std::size_t k = 0; k < f; ++k) acc += x[r * f + k] * m.embed_weight[k * d + j];
      h[r * d + j] = acc;
    }
  Matrix compressed(n, std::vector<double>(d, 0.0));
  for (std::size_t b = 0; b < m.ltcn_layers.size(); ++b) {
    h = oracle::ltcn_layer(h, n, p, m.ltcn_layers[b], c.ltcn.dilations[b], c.ltcn.groups);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) compressed[i][j] += h[(i * p + p - 1) * d + j];
  }
  const Matrix h_t = oracle::se(compressed, m.se);
  Matrix s = oracle::add(h_t, oracle::to_matrix(m.positional.data(), n, d));
  const oracle::BoolMask bm = mask ? oracle::to_bool(*mask) : oracle::BoolMask{};
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    const bool local = c.glformer.pattern[b] == BlockKind::Local;
    s = oracle::attention_block(s, m.blocks[b], c.glformer.heads, local ? &bm : nullptr);
  }
  const std::size_t dh = c.hidden_width(), l = c.output_len();
  Matrix hidden = oracle::matmul(oracle::add(s, h_t), oracle::to_matrix(m.head_w1.data(), d, dh));
  for (auto& row : hidden)
    for (std::size_t j = 0; j < dh; ++j) row[j] = std::max(0.0, row[j] + m.head_b1[j]);
  Matrix y = oracle::matmul(hidden, oracle::to_matrix(m.head_w2.data(), dh, l));
  for (auto& row : y)
    for (std::size_t j = 0; j < l; ++j) row[j] += m.head_b2[j];
  return y;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lightcts_model_" + name);
}

}  // namespace

TEST_CASE("embed") {
  std::mt19937_64 rng(1);
  ModelConfig c = small_config(4);
  c.n_features = 16;
  LightCtsModel m(c, MaskMatrix::all_true(4));
  auto w = m.embed_weight.mutable_data();
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) w[i * 16 + j] = i == j ? 1.0 : 0.0;
  auto b = m.embed_bias.mutable_data();
  std::fill(b.begin(), b.end(), 0.0);
  const Tensor x = random_tensor({4, 12, 16}, rng);
  CHECK(bit_identical(m.embed(x), x));

  LightCtsModel fresh(small_config(4), MaskMatrix::all_true(4));
  const Tensor zero_out = fresh.embed(Tensor::zeros({4, 12, 2}));
  for (std::size_t r = 0; r < 48; ++r)
    for (std::size_t j = 0; j < 16; ++j) CHECK(zero_out[r * 16 + j] == fresh.embed_bias[j]);

  const Tensor x2 = random_tensor({4, 12, 2}, rng);
  const Tensor got = fresh.embed(x2);
  for (std::size_t r = 0; r < 48; ++r) {
    const Matrix row = oracle::matmul(oracle::to_matrix(x2.data().subspan(r * 2, 2), 1, 2),
                                      oracle::to_matrix(fresh.embed_weight.data(), 2, 16));
    for (std::size_t j = 0; j < 16; ++j)
      CHECK(got[r * 16 + j] == doctest::Approx(row[0][j] + fresh.embed_bias[j]).epsilon(1e-14));
  }
  CHECK_THROWS_AS(fresh.embed(Tensor::zeros({4, 12, 3})), ShapeError);
}

TEST_CASE("output head bias passes through") {
  std::mt19937_64 rng(2);
  LightCtsModel m(small_config(5), random_mask(5, rng));
  for (Tensor* t : {&m.head_w1, &m.head_b1, &m.head_w2}) {
    auto v = t->mutable_data();
    std::fill(v.begin(), v.end(), 0.0);
  }
  auto b2 = m.head_b2.mutable_data();
  std::fill(b2.begin(), b2.end(), 1.75);
  const Tensor y = m.forward(random_tensor({5, 12, 2}, rng));
  CHECK(y.shape() == Shape{5, 3});
  for (double v : y.data()) CHECK(v == 1.75);
}

TEST_CASE("tiny model matches the composed oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    ModelConfig c = tiny_config();
    c.seed = seed;
    const MaskMatrix mask = random_mask(3, rng);
    const LightCtsModel m(c, mask);
    const Tensor x = random_tensor({3, 4, 1}, rng, -2.0, 2.0);
    const Tensor y = m.forward(x);
    REQUIRE(y.shape() == Shape{3, 2});
    CHECK(max_abs_diff(y.data(), oracle::flatten(model_oracle(m, x, &mask))) < 1e-12);
  }
}

TEST_CASE("forward shapes, batching and determinism") {
  std::mt19937_64 rng(4);
  const MaskMatrix mask = random_mask(5, rng);
  const LightCtsModel m(small_config(5), mask);
  const Tensor batch = random_tensor({3, 5, 12, 2}, rng);
  const Tensor y = m.forward(batch);
  CHECK(y.shape() == Shape{3, 5, 3});
  CHECK(bit_identical(y, m.forward(batch)));
  for (std::size_t b = 0; b < 3; ++b) {
    const Tensor one = m.forward(ops::select(batch, 0, b));
    CHECK(max_abs_diff(one.data(), y.data().subspan(b * 15, 15)) == 0.0);
  }
  CHECK(bit_identical(LightCtsModel(small_config(5), mask).forward(batch), y));

  ModelConfig single = small_config(5);
  single.mode = ForecastMode::Single;
  single.head_hidden = 0;
  const LightCtsModel s(single, mask);
  CHECK(s.head_w1.shape() == Shape{16, 16});
  CHECK(s.forward(ops::select(batch, 0, 0)).shape() == Shape{5, 1});

  CHECK_THROWS_AS(m.forward(Tensor::zeros({5, 11, 2})), ShapeError);
  CHECK_THROWS_AS(m.forward(Tensor::zeros({4, 12, 2})), ShapeError);
}

TEST_CASE("all-true mask leaves a global-only model unchanged") {
  std::mt19937_64 rng(5);
  ModelConfig c = small_config(4);
  c.glformer.pattern = {BlockKind::Global, BlockKind::Global};
  const LightCtsModel plain(c);
  const LightCtsModel masked(c, MaskMatrix::all_true(4));
  const Tensor x = random_tensor({4, 12, 2}, rng);
  CHECK(bit_identical(plain.forward(x), masked.forward(x)));
  CHECK_THROWS_AS(LightCtsModel(small_config(4)), ConfigError);
  CHECK_THROWS_AS(LightCtsModel(small_config(4), MaskMatrix::all_true(3)), ShapeError);
}

TEST_CASE("every parameter is registered once and receives gradient") {
  std::mt19937_64 rng(6);
  ModelConfig c = small_config(6);
  c.set_d_model(64);
  c.ltcn.se_reduction = 8;
  c.glformer.heads = 4;
  c.glformer.pattern = GlFormerConfig::alternating(4);
  c.head_hidden = 0;
  const LightCtsModel m(c, random_mask(6, rng));
  const auto params = m.parameters();
  std::set<const TensorImpl*> seen;
  std::set<std::string> names;
  std::size_t total = 0;
  for (const auto& p : params) {
    CHECK(seen.insert(p.tensor.impl().get()).second);
    CHECK(names.insert(p.name).second);
    CHECK(p.tensor.requires_grad());
    total += p.tensor.numel();
  }
  CHECK(total == m.parameter_count());

  const Tensor x = random_tensor({2, 6, 12, 2}, rng);
  const Tensor truth = random_tensor({2, 6, 3}, rng);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(ops::mae_loss(m.forward(x), truth));
  }
  for (const auto& p : params) {
    const auto g = p.tensor.grad();
    bool nonzero = false;
    for (double v : g) nonzero = nonzero || v != 0.0;
    INFO(p.name);
    CHECK(nonzero);
  }
}

TEST_CASE("tiny model gradients match finite differences") {
  std::mt19937_64 rng(7);
  const MaskMatrix mask = random_mask(3, rng);
  const LightCtsModel m(tiny_config(), mask);
  const Tensor x = random_tensor({2, 3, 4, 1}, rng);
  std::vector<Tensor> inputs;
  for (const auto& p : m.parameters()) inputs.push_back(p.tensor);
  // The model reads its parameters through shared storage, so perturbing the
  // inputs perturbs the model.
  auto f = [&](const std::vector<Tensor>&) { return m.forward(x); };
  const auto r = lightcts::testing::check_gradients(f, inputs, 8);
  INFO(r.worst_location);
  CHECK(r.checked == m.parameter_count());
  CHECK(r.worst_relative < 1e-5);
}

TEST_CASE("mae_loss") {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  CHECK(ops::mae_loss(a, a).item() == 0.0);
  CHECK(ops::mae_loss(Tensor({1, 2}, {0, 0}), Tensor({1, 2}, {2, 4})).item() == 3.0);
  CHECK_THROWS_AS(ops::mae_loss(a, Tensor::zeros({4})), ShapeError);

  std::mt19937_64 rng(9);
  Tensor pred = random_tensor({3, 4}, rng);
  pred.set_requires_grad(true);
  const Tensor truth = random_tensor({3, 4}, rng);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(ops::mae_loss(pred, truth));
  }
  const auto g = pred.grad();
  for (std::size_t i = 0; i < 12; ++i) {
    const double sign = pred[i] > truth[i] ? 1.0 : -1.0;
    CHECK(g[i] == doctest::Approx(sign / 12.0).epsilon(1e-15));
  }
}

TEST_CASE("config text") {
  ModelConfig c = small_config(7);
  c.mode = ForecastMode::Single;
  c.ltcn.conv_bias = false;
  c.glformer.pattern = {BlockKind::Local, BlockKind::Global, BlockKind::Local};
  const ModelConfig back = ModelConfig::from_text(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.glformer.pattern == c.glformer.pattern);

  ModelConfig t;
  CHECK(t.apply("t_layers", "3"));
  CHECK(t.ltcn.dilations == std::vector<std::size_t>{1, 2, 4});
  CHECK(t.apply("s_blocks", "3"));
  CHECK(t.glformer.pattern.size() == 3);
  CHECK_FALSE(t.apply("learning_rate", "0.1"));
  CHECK_THROWS_AS(t.apply("d_model", "-4"), ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_text("colour=blue\n"), ConfigError);

  ModelConfig shortsighted = small_config(3);
  shortsighted.ltcn.dilations = {1, 2};
  CHECK_THROWS_AS(shortsighted.validate(), ConfigError);
  ModelConfig mismatch = small_config(3);
  mismatch.glformer.d_model = 32;
  CHECK_THROWS_AS(mismatch.validate(), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(10);
  const MaskMatrix mask = random_mask(5, rng);
  LightCtsModel m(small_config(5), mask);
  // Move away from the seeded initialisation so loading must read the file.
  for (auto& p : m.parameters())
    for (double& v : p.tensor.mutable_data()) v += 0.01;
  const auto path = temp_path("a.lcts");
  save_checkpoint(m, path);
  const LightCtsModel back = load_checkpoint(path);
  const auto pa = m.parameters(), pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_identical(pa[i].tensor, pb[i].tensor));
  REQUIRE(back.mask());
  CHECK(back.mask()->keep == mask.keep);
  const Tensor x = random_tensor({5, 12, 2}, rng);
  CHECK(bit_identical(m.forward(x), back.forward(x)));

  const auto again = temp_path("b.lcts");
  save_checkpoint(back, again);
  std::ifstream fa(path, std::ios::binary), fb(again, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(fa)), {});
  const std::string bytes2((std::istreambuf_iterator<char>(fb)), {});
  CHECK(bytes == bytes2);

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream(temp_path("bad.lcts"), std::ios::binary) << bad;
    CHECK_THROWS_AS(load_checkpoint(temp_path("bad.lcts")), FormatError);
  }
  SUBCASE("truncated") {
    std::ofstream(temp_path("short.lcts"), std::ios::binary) << bytes.substr(0, bytes.size() - 9);
    CHECK_THROWS_AS(load_checkpoint(temp_path("short.lcts")), FormatError);
  }
  SUBCASE("trailing bytes") {
    std::ofstream(temp_path("long.lcts"), std::ios::binary) << bytes << "zz";
    CHECK_THROWS_AS(load_checkpoint(temp_path("long.lcts")), FormatError);
  }
}
