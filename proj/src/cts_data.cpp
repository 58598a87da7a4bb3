#include "lightcts/cts_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lightcts/csv.hpp"
#include "lightcts/errors.hpp"
#include "binary_io.hpp"

namespace lightcts {

namespace {

using detail::ByteReader;
using detail::put;
using detail::slurp;

constexpr char kMagic[4] = {'C', 'T', 'S', '1'};

CtsDataset load_cts1(const std::filesystem::path& path) {
  ByteReader r(slurp(path), "CTS1");
  if (r.remaining() < 4 || std::memcmp(r.bytes().data(), kMagic, 4) != 0) {
    throw FormatError("CTS1: bad magic at byte offset 0 in " + path.string());
  }
  r.skip(4);
  CtsDataset ds;
  ds.n_series = r.read<std::uint32_t>("N");
  ds.n_steps = r.read<std::uint32_t>("T");
  ds.n_features = r.read<std::uint32_t>("F");
  const std::uint32_t n_adj = r.read<std::uint32_t>("adjacency count");
  if (ds.n_series == 0 || ds.n_steps == 0 || ds.n_features == 0) {
    throw FormatError("CTS1: zero dimension in header (N=" + std::to_string(ds.n_series) +
                      ", T=" + std::to_string(ds.n_steps) +
                      ", F=" + std::to_string(ds.n_features) + ")");
  }
  const std::size_t count = ds.n_series * ds.n_steps * ds.n_features;
  const std::size_t block = ds.n_series * ds.n_series;
  const std::size_t need = (count + n_adj * block) * sizeof(double);
  if (r.remaining() < need) {
    throw FormatError("CTS1: truncated payload; expected " + std::to_string(need) +
                      " bytes after byte offset " + std::to_string(r.offset()) + ", found " +
                      std::to_string(r.remaining()));
  }
  ds.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    ds.values[i] = r.read<double>("value");
    if (std::isnan(ds.values[i])) {
      throw FormatError("CTS1: NaN value at byte offset " + std::to_string(at));
    }
  }
  ds.adjacencies.resize(n_adj);
  for (auto& adj : ds.adjacencies) {
    adj.resize(block);
    for (double& v : adj) {
      const std::size_t at = r.offset();
      v = r.read<double>("adjacency");
      if (std::isnan(v)) {
        throw FormatError("CTS1: NaN adjacency entry at byte offset " + std::to_string(at));
      }
    }
  }
  if (r.remaining() != 0) {
    throw FormatError("CTS1: " + std::to_string(r.remaining()) +
                      " trailing bytes at byte offset " + std::to_string(r.offset()));
  }
  ds.validate();
  return ds;
}

std::vector<double> load_adjacency_csv(const std::filesystem::path& path, std::size_t n) {
  const CsvTable t = read_csv(path, false);
  if (t.rows.size() != n) {
    throw ShapeError("adjacency " + path.string() + " has " + std::to_string(t.rows.size()) +
                     " rows, expected " + std::to_string(n));
  }
  std::vector<double> adj;
  adj.reserve(n * n);
  for (std::size_t r = 0; r < n; ++r) {
    if (t.rows[r].size() != n) {
      throw ShapeError("adjacency " + path.string() + " row " + std::to_string(r + 1) +
                       " has " + std::to_string(t.rows[r].size()) + " columns, expected " +
                       std::to_string(n));
    }
    for (const auto& field : t.rows[r]) {
      double v;
      try {
        v = parse_double(field);
      } catch (const FormatError& e) {
        throw FormatError("adjacency " + path.string() + " row " + std::to_string(r + 1) +
                          ": " + e.what());
      }
      if (std::isnan(v)) {
        throw FormatError("adjacency " + path.string() + " row " + std::to_string(r + 1) +
                          ": NaN entry");
      }
      adj.push_back(v);
    }
  }
  return adj;
}

CtsDataset load_csv(const std::filesystem::path& path,
                    const std::vector<std::filesystem::path>& adjacency_csvs) {
  const CsvTable t = read_csv(path, true);
  if (t.header.size() < 3 || t.header[0] != "series" || t.header[1] != "time") {
    throw FormatError("csv " + path.string() + ": header must be series,time,f0,...");
  }
  const std::size_t f = t.header.size() - 2;
  for (std::size_t j = 0; j < f; ++j) {
    if (t.header[j + 2] != "f" + std::to_string(j)) {
      throw FormatError("csv " + path.string() + ": expected column f" + std::to_string(j) +
                        ", found '" + t.header[j + 2] + "'");
    }
  }
  struct Row {
    std::size_t series, time;
    std::vector<double> feats;
  };
  std::vector<Row> rows;
  rows.reserve(t.rows.size());
  std::size_t n = 0, steps = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = "csv " + path.string() + " row " + std::to_string(r + 2);
    const auto& fields = t.rows[r];
    if (fields.size() != f + 2) {
      throw FormatError(where + ": expected " + std::to_string(f + 2) + " fields, found " +
                        std::to_string(fields.size()));
    }
    Row row;
    try {
      row.series = parse_unsigned(fields[0]);
      row.time = parse_unsigned(fields[1]);
      for (std::size_t j = 0; j < f; ++j) row.feats.push_back(parse_double(fields[j + 2]));
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
    for (double v : row.feats)
      if (std::isnan(v)) throw FormatError(where + ": NaN value");
    n = std::max(n, row.series + 1);
    steps = std::max(steps, row.time + 1);
    rows.push_back(std::move(row));
  }
  if (rows.size() != n * steps) {
    throw FormatError("csv " + path.string() + ": " + std::to_string(rows.size()) +
                      " rows do not cover " + std::to_string(n) + " series x " +
                      std::to_string(steps) + " steps");
  }
  CtsDataset ds;
  ds.n_series = n;
  ds.n_steps = steps;
  ds.n_features = f;
  ds.values.assign(n * steps * f, 0.0);
  std::vector<std::uint8_t> seen(n * steps, 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto& flag = seen[row.series * steps + row.time];
    if (flag) {
      throw FormatError("csv " + path.string() + " row " + std::to_string(r + 2) +
                        ": duplicate (series, time) pair");
    }
    flag = 1;
    std::copy(row.feats.begin(), row.feats.end(),
              ds.values.begin() + static_cast<std::ptrdiff_t>((row.series * steps + row.time) * f));
  }
  for (const auto& adj_path : adjacency_csvs) ds.adjacencies.push_back(load_adjacency_csv(adj_path, n));
  ds.validate();
  return ds;
}

}  // namespace

std::string to_string(ForecastMode mode) { return mode == ForecastMode::Single ? "single" : "multi"; }

ForecastMode parse_forecast_mode(const std::string& text) {
  if (text == "single") return ForecastMode::Single;
  if (text == "multi") return ForecastMode::Multi;
  throw ConfigError("mode must be 'single' or 'multi', got '" + text + "'");
}

CtsDataset CtsDataset::slice_steps(std::size_t begin, std::size_t count) const {
  if (begin + count > n_steps) {
    throw InsufficientLengthError("slice of steps [" + std::to_string(begin) + ", " +
                                  std::to_string(begin + count) + ") exceeds T=" +
                                  std::to_string(n_steps));
  }
  CtsDataset out;
  out.n_series = n_series;
  out.n_steps = count;
  out.n_features = n_features;
  out.adjacencies = adjacencies;
  out.values.reserve(n_series * count * n_features);
  for (std::size_t i = 0; i < n_series; ++i) {
    const auto first = values.begin() + static_cast<std::ptrdiff_t>((i * n_steps + begin) * n_features);
    out.values.insert(out.values.end(), first, first + static_cast<std::ptrdiff_t>(count * n_features));
  }
  return out;
}

void CtsDataset::validate() const {
  if (n_series == 0 || n_steps == 0 || n_features == 0) {
    throw ShapeError("dataset needs N, T, F >= 1");
  }
  if (values.size() != n_series * n_steps * n_features) {
    throw ShapeError("dataset holds " + std::to_string(values.size()) + " values, expected " +
                     std::to_string(n_series * n_steps * n_features));
  }
  for (std::size_t a = 0; a < adjacencies.size(); ++a) {
    if (adjacencies[a].size() != n_series * n_series) {
      throw ShapeError("adjacency " + std::to_string(a) + " is not " + std::to_string(n_series) +
                       "x" + std::to_string(n_series));
    }
    for (double v : adjacencies[a]) {
      if (!(v >= 0.0)) {
        throw FormatError("adjacency " + std::to_string(a) + " has a negative or NaN entry");
      }
    }
  }
}

WindowSet WindowSet::gather(std::span<const std::size_t> rows) const {
  const std::size_t in_stride = inputs.numel() / size();
  const std::size_t out_stride = targets.numel() / size();
  Shape in_shape = inputs.shape();
  Shape out_shape = targets.shape();
  in_shape[0] = out_shape[0] = rows.size();
  std::vector<double> in(rows.size() * in_stride), out(rows.size() * out_stride);
  WindowSet batch;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(inputs.data().data() + rows[r] * in_stride, in_stride, in.data() + r * in_stride);
    std::copy_n(targets.data().data() + rows[r] * out_stride, out_stride,
                out.data() + r * out_stride);
    batch.origins.push_back(origins[rows[r]]);
  }
  batch.inputs = Tensor(std::move(in_shape), std::move(in));
  batch.targets = Tensor(std::move(out_shape), std::move(out));
  return batch;
}

void SplitSpec::validate() const {
  if (!(train > 0 && val > 0 && test > 0)) {
    throw ConfigError("split fractions must all be positive");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
}

MaskMatrix MaskMatrix::all_true(std::size_t n) { return {n, std::vector<std::uint8_t>(n * n, 1)}; }

MaskMatrix MaskMatrix::identity(std::size_t n) {
  MaskMatrix m{n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i) m.keep[i * n + i] = 1;
  return m;
}

CtsDataset load_dataset(const std::filesystem::path& path, DataFormat format,
                        const std::vector<std::filesystem::path>& adjacency_csvs) {
  return format == DataFormat::Cts1 ? load_cts1(path) : load_csv(path, adjacency_csvs);
}

std::vector<std::filesystem::path> adjacency_csv_paths(const std::filesystem::path& data_csv,
                                                       std::size_t count) {
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < count; ++i) {
    paths.push_back(data_csv.parent_path() /
                    (data_csv.stem().string() + "_adj" + std::to_string(i) + ".csv"));
  }
  return paths;
}

void save_dataset(const CtsDataset& ds, const std::filesystem::path& path, DataFormat format) {
  ds.validate();
  if (format == DataFormat::Cts1) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.n_series));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.n_steps));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.n_features));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.adjacencies.size()));
    for (double v : ds.values) put(out, v);
    for (const auto& adj : ds.adjacencies)
      for (double v : adj) put(out, v);
    detail::spill(path, out);
    return;
  }
  CsvTable t;
  t.header = {"series", "time"};
  for (std::size_t j = 0; j < ds.n_features; ++j) t.header.push_back("f" + std::to_string(j));
  for (std::size_t i = 0; i < ds.n_series; ++i)
    for (std::size_t s = 0; s < ds.n_steps; ++s) {
      std::vector<std::string> row{std::to_string(i), std::to_string(s)};
      for (std::size_t j = 0; j < ds.n_features; ++j) row.push_back(format_double(ds.at(i, s, j)));
      t.rows.push_back(std::move(row));
    }
  write_csv(path, t);
  const auto adj_paths = adjacency_csv_paths(path, ds.adjacencies.size());
  for (std::size_t a = 0; a < ds.adjacencies.size(); ++a) {
    CsvTable m;
    for (std::size_t i = 0; i < ds.n_series; ++i) {
      std::vector<std::string> row;
      for (std::size_t j = 0; j < ds.n_series; ++j)
        row.push_back(format_double(ds.adjacencies[a][i * ds.n_series + j]));
      m.rows.push_back(std::move(row));
    }
    write_csv(adj_paths[a], m);
  }
}

std::vector<WindowSample> make_windows(const CtsDataset& ds, std::size_t history,
                                       std::size_t horizon, ForecastMode mode) {
  if (history == 0 || horizon == 0) {
    throw ConfigError("history P and horizon Q must both be >= 1");
  }
  if (ds.n_steps < history + horizon) {
    throw InsufficientLengthError("series of length T=" + std::to_string(ds.n_steps) +
                                  " is shorter than P+Q=" + std::to_string(history + horizon));
  }
  const std::size_t n = ds.n_series, f = ds.n_features;
  const std::size_t target_len = mode == ForecastMode::Multi ? horizon : 1;
  const std::size_t target_start = mode == ForecastMode::Multi ? history : history + horizon - 1;
  std::vector<WindowSample> out;
  out.reserve(ds.n_steps - history - horizon + 1);
  for (std::size_t t = 0; t + history + horizon <= ds.n_steps; ++t) {
    std::vector<double> hist, targ;
    hist.reserve(n * history * f);
    targ.reserve(n * target_len * f);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t s = 0; s < history; ++s)
        for (std::size_t j = 0; j < f; ++j) hist.push_back(ds.at(i, t + s, j));
      for (std::size_t s = 0; s < target_len; ++s)
        for (std::size_t j = 0; j < f; ++j) targ.push_back(ds.at(i, t + target_start + s, j));
    }
    out.push_back({t, Tensor({n, history, f}, std::move(hist)),
                   Tensor({n, target_len, f}, std::move(targ))});
  }
  return out;
}

WindowSet stack_windows(const std::vector<WindowSample>& windows, std::size_t target_feature) {
  if (windows.empty()) throw InsufficientLengthError("no windows to stack");
  const Shape& hs = windows.front().history.shape();
  const Shape& ts = windows.front().target.shape();
  const std::size_t n = hs[0], f = hs[2], len = ts[1];
  if (target_feature >= f) {
    throw ConfigError("target feature " + std::to_string(target_feature) + " out of range");
  }
  std::vector<double> in, out;
  in.reserve(windows.size() * windows.front().history.numel());
  out.reserve(windows.size() * n * len);
  WindowSet set;
  for (const auto& w : windows) {
    in.insert(in.end(), w.history.data().begin(), w.history.data().end());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < len; ++s) out.push_back(w.target.data()[(i * len + s) * f + target_feature]);
    set.origins.push_back(w.origin);
  }
  set.inputs = Tensor({windows.size(), n, hs[1], f}, std::move(in));
  set.targets = Tensor({windows.size(), n, len}, std::move(out));
  return set;
}

DatasetSplit split(const CtsDataset& ds, const SplitSpec& spec, std::size_t min_length) {
  spec.validate();
  const double total = static_cast<double>(ds.n_steps);
  // The small epsilon absorbs products such as 0.29 * 100 = 28.999...
  const auto n_train = static_cast<std::size_t>(std::floor(total * spec.train + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(total * spec.val + 1e-9));
  if (n_train + n_val > ds.n_steps) throw InsufficientLengthError("split exceeds series length");
  const std::size_t n_test = ds.n_steps - n_train - n_val;
  const std::size_t lengths[3] = {n_train, n_val, n_test};
  const char* names[3] = {"train", "validation", "test"};
  for (int k = 0; k < 3; ++k) {
    if (lengths[k] < std::max<std::size_t>(min_length, 1)) {
      throw InsufficientLengthError(std::string(names[k]) + " split has " +
                                    std::to_string(lengths[k]) + " steps, needs at least " +
                                    std::to_string(std::max<std::size_t>(min_length, 1)));
    }
  }
  return {ds.slice_steps(0, n_train), ds.slice_steps(n_train, n_val),
          ds.slice_steps(n_train + n_val, n_test)};
}

Normalizer fit_normalizer(const CtsDataset& train) {
  if (train.values.empty()) throw InsufficientLengthError("cannot fit a normalizer on no data");
  const std::size_t f = train.n_features;
  const double count = static_cast<double>(train.n_series * train.n_steps);
  Normalizer norm;
  norm.mean.assign(f, 0.0);
  norm.stddev.assign(f, 0.0);
  for (std::size_t r = 0; r < train.values.size() / f; ++r)
    for (std::size_t j = 0; j < f; ++j) norm.mean[j] += train.values[r * f + j];
  for (double& m : norm.mean) m /= count;
  for (std::size_t r = 0; r < train.values.size() / f; ++r)
    for (std::size_t j = 0; j < f; ++j) {
      const double d = train.values[r * f + j] - norm.mean[j];
      norm.stddev[j] += d * d;
    }
  for (double& s : norm.stddev) s = std::max(std::sqrt(s / count), Normalizer::kStdFloor);
  return norm;
}

CtsDataset Normalizer::normalize(const CtsDataset& ds) const {
  CtsDataset out = ds;
  const std::size_t f = ds.n_features;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = normalize(out.values[i], i % f);
  return out;
}

CtsDataset Normalizer::denormalize(const CtsDataset& ds) const {
  CtsDataset out = ds;
  const std::size_t f = ds.n_features;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = denormalize(out.values[i], i % f);
  return out;
}

MaskMatrix build_mask(const std::vector<std::vector<double>>& adjacencies, std::size_t n,
                      double threshold) {
  if (adjacencies.empty()) throw ConfigError("build_mask needs at least one adjacency matrix");
  if (!(threshold >= 0.0)) throw ConfigError("mask threshold must be >= 0");
  std::vector<double> total(n * n, 0.0);
  for (std::size_t a = 0; a < adjacencies.size(); ++a) {
    if (adjacencies[a].size() != n * n) {
      throw ShapeError("adjacency " + std::to_string(a) + " has " +
                       std::to_string(adjacencies[a].size()) + " entries, expected " +
                       std::to_string(n) + "x" + std::to_string(n));
    }
    for (std::size_t k = 0; k < n * n; ++k) total[k] += adjacencies[a][k];
  }
  MaskMatrix m{n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m.keep[i * n + j] = (i == j || total[i * n + j] > threshold) ? 1 : 0;
  return m;
}

}  // namespace lightcts
