#include "lightcts/model.hpp"

#include <cstring>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "lightcts/csv.hpp"
#include "lightcts/errors.hpp"
#include "lightcts/init.hpp"
#include "lightcts/ops.hpp"

namespace lightcts {

std::string to_string(Component c) {
  switch (c) {
    case Component::Embedding: return "embedding";
    case Component::TOperator: return "t_operator";
    case Component::SOperator: return "s_operator";
    case Component::AggregationOutput: return "aggregation_output";
  }
  return "unknown";
}

std::size_t ModelConfig::hidden_width() const {
  if (head_hidden) return head_hidden;
  return mode == ForecastMode::Multi ? 512 : d_model();
}

void ModelConfig::set_d_model(std::size_t d) {
  ltcn.d_model = d;
  glformer.d_model = d;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model: " + msg);
  };
  need(n_series >= 1, "n_series must be >= 1");
  need(n_features >= 1, "n_features must be >= 1");
  need(history >= 1, "history P must be >= 1");
  need(horizon >= 1, "horizon Q must be >= 1");
  ltcn.validate();
  need(glformer.d_model == ltcn.d_model,
       "GL-Former width " + std::to_string(glformer.d_model) + " differs from D=" +
           std::to_string(ltcn.d_model));
  glformer.validate();
  const std::size_t rf = receptive_field(ltcn);
  need(rf >= history, "receptive field " + std::to_string(rf) + " of the L-TCN is shorter than P=" +
                          std::to_string(history));
}

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  if (text.empty()) return parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = text.find(',', start);
    parts.push_back(text.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return parts;
}

std::size_t to_size(const std::string& key, const std::string& value) {
  try {
    return static_cast<std::size_t>(parse_unsigned(value));
  } catch (const FormatError&) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + value + "'");
}

}  // namespace

bool ModelConfig::apply(const std::string& key, const std::string& value) {
  if (key == "n_series") n_series = to_size(key, value);
  else if (key == "n_features") n_features = to_size(key, value);
  else if (key == "history") history = to_size(key, value);
  else if (key == "horizon") horizon = to_size(key, value);
  else if (key == "mode") mode = parse_forecast_mode(value);
  else if (key == "d_model") set_d_model(to_size(key, value));
  else if (key == "kernel_size") ltcn.kernel_size = to_size(key, value);
  else if (key == "dilations") {
    ltcn.dilations.clear();
    for (const auto& part : split_commas(value)) ltcn.dilations.push_back(to_size(key, part));
  } else if (key == "t_layers") {
    // Doubling schedule 1, 2, 4, ...
    ltcn.dilations.clear();
    for (std::size_t i = 0, n = to_size(key, value); i < n; ++i) ltcn.dilations.push_back(std::size_t{1} << i);
  } else if (key == "ltcn_groups") ltcn.groups = to_size(key, value);
  else if (key == "se_reduction") ltcn.se_reduction = to_size(key, value);
  else if (key == "conv_bias") ltcn.conv_bias = to_bool(key, value);
  else if (key == "heads") glformer.heads = to_size(key, value);
  else if (key == "mha_groups") glformer.mha_groups = to_size(key, value);
  else if (key == "ffn_groups") glformer.ffn_groups = to_size(key, value);
  else if (key == "ffn_hidden") glformer.ffn_hidden = to_size(key, value);
  else if (key == "pattern") {
    glformer.pattern.clear();
    for (const auto& part : split_commas(value)) glformer.pattern.push_back(parse_block_kind(part));
  } else if (key == "s_blocks") glformer.pattern = GlFormerConfig::alternating(to_size(key, value));
  else if (key == "head_hidden") head_hidden = to_size(key, value);
  else if (key == "seed") {
    try {
      seed = parse_unsigned(value);
    } catch (const FormatError&) {
      throw ConfigError("'seed' expects an unsigned integer, got '" + value + "'");
    }
  } else return false;
  return true;
}

std::string ModelConfig::to_text() const {
  std::string pattern;
  for (std::size_t i = 0; i < glformer.pattern.size(); ++i) {
    pattern += (i ? "," : "") + to_string(glformer.pattern[i]);
  }
  std::ostringstream out;
  out << "n_series=" << n_series << "\n"
      << "n_features=" << n_features << "\n"
      << "history=" << history << "\n"
      << "horizon=" << horizon << "\n"
      << "mode=" << to_string(mode) << "\n"
      << "d_model=" << ltcn.d_model << "\n"
      << "kernel_size=" << ltcn.kernel_size << "\n"
      << "dilations=" << join_sizes(ltcn.dilations) << "\n"
      << "ltcn_groups=" << ltcn.groups << "\n"
      << "se_reduction=" << ltcn.se_reduction << "\n"
      << "conv_bias=" << (ltcn.conv_bias ? "true" : "false") << "\n"
      << "heads=" << glformer.heads << "\n"
      << "mha_groups=" << glformer.mha_groups << "\n"
      << "ffn_groups=" << glformer.ffn_groups << "\n"
      << "ffn_hidden=" << glformer.ffn_hidden << "\n"
      << "pattern=" << pattern << "\n"
      << "head_hidden=" << head_hidden << "\n"
      << "seed=" << seed << "\n";
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("model config line " + std::to_string(line_no) + ": missing '='");
    }
    const std::string key = line.substr(0, eq);
    if (!c.apply(key, line.substr(eq + 1))) {
      throw ConfigError("model config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  return c;
}

LightCtsModel::LightCtsModel(ModelConfig config, std::optional<MaskMatrix> mask)
    : config_(std::move(config)) {
  config_.validate();
  set_mask(std::move(mask));
  const std::size_t f = config_.n_features, d = config_.d_model(), n = config_.n_series;
  const std::size_t dh = config_.hidden_width(), l = config_.output_len();
  std::mt19937_64 rng(config_.seed);
  embed_weight = init_uniform({f, d}, f, rng);
  embed_bias = init_uniform({d}, f, rng);
  for (std::size_t i = 0; i < config_.ltcn.layers(); ++i) {
    ltcn_layers.push_back(init_ltcn_layer(config_.ltcn, rng));
  }
  se = init_se(config_.ltcn, rng);
  positional = init_positional_encoding(n, d, rng);
  for (std::size_t i = 0; i < config_.glformer.blocks(); ++i) {
    blocks.push_back(init_attention_block(config_.glformer, rng));
  }
  head_w1 = init_uniform({d, dh}, d, rng);
  head_b1 = init_uniform({dh}, d, rng);
  head_w2 = init_uniform({dh, l}, dh, rng);
  head_b2 = init_uniform({l}, dh, rng);
}

void LightCtsModel::set_mask(std::optional<MaskMatrix> mask) {
  if (mask && mask->n != config_.n_series) {
    throw ShapeError("mask is " + std::to_string(mask->n) + "x" + std::to_string(mask->n) +
                     " but the model has " + std::to_string(config_.n_series) + " series");
  }
  if (!mask && config_.glformer.has_local()) {
    throw ConfigError("model has local attention blocks but no mask");
  }
  mask_ = std::move(mask);
}

Tensor LightCtsModel::embed(const Tensor& x) const {
  if (x.rank() < 3 || x.dim(-1) != config_.n_features) {
    throw ShapeError("embed: expected [..., N, P, " + std::to_string(config_.n_features) +
                     "], got " + shape_str(x.shape()));
  }
  return ops::add(ops::matmul(x, embed_weight), embed_bias);
}

Tensor LightCtsModel::temporal(const Tensor& embedded) const {
  std::vector<Tensor> outputs;
  Tensor h = embedded;
  for (std::size_t b = 0; b < ltcn_layers.size(); ++b) {
    h = ltcn_layer(h, ltcn_layers[b], config_.ltcn.dilations[b], config_.ltcn.groups);
    outputs.push_back(h);
  }
  return se_recalibrate(last_shot_compress(outputs), se);
}

Tensor LightCtsModel::forward(const Tensor& x) const {
  const bool ok = (x.rank() == 3 || x.rank() == 4) && x.dim(-3) == config_.n_series &&
                  x.dim(-2) == config_.history && x.dim(-1) == config_.n_features;
  if (!ok) {
    throw ShapeError("forward: expected [B,] N=" + std::to_string(config_.n_series) +
                     ", P=" + std::to_string(config_.history) +
                     ", F=" + std::to_string(config_.n_features) + "; got " +
                     shape_str(x.shape()));
  }
  const Tensor h_t = temporal(embed(x));
  const Tensor h_s = gl_former(h_t, config_.glformer, positional, blocks,
                               mask_ ? &*mask_ : nullptr);
  const Tensor hidden = ops::relu(ops::add(ops::matmul(ops::add(h_s, h_t), head_w1), head_b1));
  return ops::add(ops::matmul(hidden, head_w2), head_b2);
}

std::vector<NamedParameter> LightCtsModel::parameters() const {
  std::vector<NamedParameter> out;
  auto reg = [&](std::string name, Component c, const Tensor& t) {
    out.push_back({std::move(name), c, t});
  };
  reg("embed.weight", Component::Embedding, embed_weight);
  reg("embed.bias", Component::Embedding, embed_bias);
  for (std::size_t b = 0; b < ltcn_layers.size(); ++b) {
    const std::string p = "ltcn." + std::to_string(b) + ".";
    const auto& layer = ltcn_layers[b];
    reg(p + "out.weight", Component::TOperator, layer.out.weight);
    if (layer.out.bias) reg(p + "out.bias", Component::TOperator, *layer.out.bias);
    reg(p + "gate.weight", Component::TOperator, layer.gate.weight);
    if (layer.gate.bias) reg(p + "gate.bias", Component::TOperator, *layer.gate.bias);
  }
  reg("se.squeeze", Component::AggregationOutput, se.squeeze);
  reg("se.excite", Component::AggregationOutput, se.excite);
  reg("glformer.positional", Component::SOperator, positional);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string p = "glformer." + std::to_string(b) + ".";
    const auto& blk = blocks[b];
    reg(p + "mha.query", Component::SOperator, blk.mha.query);
    reg(p + "mha.key", Component::SOperator, blk.mha.key);
    reg(p + "mha.value", Component::SOperator, blk.mha.value);
    reg(p + "ffn.w1", Component::SOperator, blk.ffn.w1);
    reg(p + "ffn.b1", Component::SOperator, blk.ffn.b1);
    reg(p + "ffn.w2", Component::SOperator, blk.ffn.w2);
    reg(p + "ffn.b2", Component::SOperator, blk.ffn.b2);
    reg(p + "norm1.gain", Component::SOperator, blk.norm1_gain);
    reg(p + "norm1.bias", Component::SOperator, blk.norm1_bias);
    reg(p + "norm2.gain", Component::SOperator, blk.norm2_gain);
    reg(p + "norm2.bias", Component::SOperator, blk.norm2_bias);
  }
  reg("head.w1", Component::AggregationOutput, head_w1);
  reg("head.b1", Component::AggregationOutput, head_b1);
  reg("head.w2", Component::AggregationOutput, head_w2);
  reg("head.b2", Component::AggregationOutput, head_b2);
  return out;
}

std::size_t LightCtsModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

namespace {
constexpr char kCheckpointMagic[4] = {'L', 'C', 'T', 'S'};
}

void save_checkpoint(const LightCtsModel& model, const std::filesystem::path& path) {
  using detail::put;
  std::string out(kCheckpointMagic, 4);
  const std::string text = model.config().to_text();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) put<std::uint64_t>(out, d);
    for (double v : p.tensor.data()) put(out, v);
  }
  const auto& mask = model.mask();
  put<std::uint8_t>(out, mask ? 1 : 0);
  if (mask) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(mask->n));
    out.append(reinterpret_cast<const char*>(mask->keep.data()), mask->keep.size());
  }
  detail::spill(path, out);
}

LightCtsModel load_checkpoint(const std::filesystem::path& path) {
  detail::ByteReader r(detail::slurp(path), "LCTS");
  if (r.remaining() < 4 || std::memcmp(r.bytes().data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("LCTS: bad magic at byte offset 0 in " + path.string());
  }
  r.skip(4);
  const std::uint32_t text_len = r.read<std::uint32_t>("config length");
  if (r.remaining() < text_len) {
    throw FormatError("LCTS: truncated config text at byte offset " + std::to_string(r.offset()));
  }
  const std::string text = r.bytes().substr(r.offset(), text_len);
  r.skip(text_len);
  ModelConfig config = ModelConfig::from_text(text);

  // Read tensors and mask first so the model is built with its mask in place.
  const std::uint32_t count = r.read<std::uint32_t>("tensor count");
  std::vector<std::pair<Shape, std::vector<double>>> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    Shape shape(r.read<std::uint32_t>("tensor rank"));
    for (auto& d : shape) d = static_cast<std::size_t>(r.read<std::uint64_t>("tensor dimension"));
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = r.read<double>("tensor value");
    tensors.emplace_back(std::move(shape), std::move(data));
  }
  std::optional<MaskMatrix> mask;
  if (r.read<std::uint8_t>("mask flag")) {
    MaskMatrix m;
    m.n = r.read<std::uint32_t>("mask size");
    m.keep.resize(m.n * m.n);
    for (auto& k : m.keep) k = r.read<std::uint8_t>("mask entry");
    mask = std::move(m);
  }
  if (r.remaining() != 0) {
    throw FormatError("LCTS: " + std::to_string(r.remaining()) +
                      " trailing bytes at byte offset " + std::to_string(r.offset()));
  }

  LightCtsModel model(std::move(config), std::move(mask));
  auto params = model.parameters();
  if (params.size() != tensors.size()) {
    throw FormatError("LCTS: config implies " + std::to_string(params.size()) +
                      " tensors but the file holds " + std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor.shape() != tensors[i].first) {
      throw FormatError("LCTS: tensor " + params[i].name + " has shape " +
                        shape_str(tensors[i].first) + ", expected " +
                        shape_str(params[i].tensor.shape()));
    }
    auto dst = params[i].tensor.mutable_data();
    std::copy(tensors[i].second.begin(), tensors[i].second.end(), dst.begin());
  }
  return model;
}

}  // namespace lightcts
