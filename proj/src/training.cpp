#include "lightcts/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lightcts/errors.hpp"
#include "lightcts/ops.hpp"

namespace lightcts {

void TrainConfig::validate() const {
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw ConfigError("learning rate must be finite and >= 0");
  }
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("gradient clip must be > 0");
  if (patience && *patience == 0) throw ConfigError("patience must be >= 1");
}

AdamState make_adam_state(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " +
                     std::to_string(state.m.size()) + " moment buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel() || state.m[i].size() != params[i].numel()) {
      throw ShapeError("adam_step: size mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

Tensor predict(const LightCtsModel& model, const Tensor& inputs, std::size_t batch_size) {
  if (inputs.rank() != 4) {
    throw ShapeError("predict: expected [S, N, P, F], got " + shape_str(inputs.shape()));
  }
  const std::size_t s = inputs.dim(0);
  const std::size_t n = model.config().n_series, l = model.config().output_len();
  std::vector<double> out;
  out.reserve(s * n * l);
  const std::size_t stride = inputs.numel() / std::max<std::size_t>(s, 1);
  for (std::size_t begin = 0; begin < s; begin += batch_size) {
    const std::size_t count = std::min(batch_size, s - begin);
    Shape shape = inputs.shape();
    shape[0] = count;
    const auto src = inputs.data().subspan(begin * stride, count * stride);
    const Tensor y = model.forward(Tensor(shape, {src.begin(), src.end()}));
    out.insert(out.end(), y.data().begin(), y.data().end());
  }
  return Tensor({s, n, l}, std::move(out));
}

namespace {

double mean_abs_error(const Tensor& pred, const Tensor& truth) {
  double total = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) total += std::abs(pred[i] - truth[i]);
  return total / static_cast<double>(pred.numel());
}

struct Snapshot {
  std::vector<std::vector<double>> values;
};

Snapshot take_snapshot(const std::vector<Tensor>& params) {
  Snapshot s;
  for (const auto& p : params) s.values.emplace_back(p.data().begin(), p.data().end());
  return s;
}

void restore(std::vector<Tensor>& params, const Snapshot& s) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(s.values[i].begin(), s.values[i].end(), params[i].mutable_data().begin());
  }
}

}  // namespace

TrainResult train(LightCtsModel& model, const WindowSet& train_set, const WindowSet& val_set,
                  const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train_set.size() == 0) throw ContractError("train: no training windows");
  if (val_set.size() == 0) throw ContractError("train: no validation windows");

  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  AdamState adam = make_adam_state(params);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  Snapshot best;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_no) {
      const std::size_t count = std::min(config.batch_size, order.size() - begin);
      const WindowSet batch =
          train_set.gather(std::span<const std::size_t>(order).subspan(begin, count));
      for (auto& p : params) p.zero_grad();
      Tape tape;
      double loss_value = 0.0;
      {
        TapeScope scope(tape);
        const Tensor loss = ops::mae_loss(model.forward(batch.inputs), batch.targets);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_no + 1));
        }
        tape.backward(loss);
      }
      weighted += loss_value * static_cast<double>(count);

      std::vector<std::vector<double>> grads;
      grads.reserve(params.size());
      double norm_sq = 0.0;
      for (const auto& p : params) {
        grads.push_back(p.grad());
        for (double g : grads.back()) norm_sq += g * g;
      }
      if (config.grad_clip) {
        const double norm = std::sqrt(norm_sq);
        if (norm > *config.grad_clip) {
          const double factor = *config.grad_clip / norm;
          for (auto& g : grads)
            for (double& x : g) x *= factor;
        }
      }
      adam_step(params, grads, adam, config.learning_rate);
    }
    for (auto& p : params) p.zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mae = weighted / static_cast<double>(train_set.size());
    rec.val_mae = mean_abs_error(predict(model, val_set.inputs, config.batch_size),
                                 val_set.targets);
    if (!std::isfinite(rec.val_mae)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (result.best_epoch == 0 || rec.val_mae < result.best_val_mae) {
      result.best_epoch = epoch;
      result.best_val_mae = rec.val_mae;
      best = take_snapshot(params);
      since_best = 0;
    } else if (config.patience && ++since_best >= *config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  restore(params, best);
  return result;
}

namespace {

struct ErrorSums {
  double abs = 0.0, sq = 0.0, pct = 0.0;
  std::size_t count = 0, pct_count = 0;

  void add(double p, double t, double threshold) {
    const double e = p - t;
    abs += std::abs(e);
    sq += e * e;
    ++count;
    if (std::abs(t) > threshold) {
      pct += std::abs(e / t);
      ++pct_count;
    }
  }
  double mae() const { return abs / static_cast<double>(count); }
  double rmse() const { return std::sqrt(sq / static_cast<double>(count)); }
  std::optional<double> mape() const {
    if (pct_count == 0) return std::nullopt;
    return pct / static_cast<double>(pct_count);
  }
};

}  // namespace

MetricReport evaluate(const Tensor& pred, const Tensor& truth, ForecastMode mode,
                      double mape_threshold) {
  if (pred.shape() != truth.shape() || pred.rank() < 2 || pred.numel() == 0) {
    throw ShapeError("evaluate: prediction " + shape_str(pred.shape()) + " vs truth " +
                     shape_str(truth.shape()));
  }
  const std::size_t l = pred.dim(-1), n = pred.dim(-2);
  const std::size_t samples = pred.numel() / (n * l);

  for (std::size_t i = 0; i < pred.numel(); ++i) {
    if (!std::isfinite(pred[i]) || !std::isfinite(truth[i])) {
      throw NumericError("evaluate: non-finite value at flat index " + std::to_string(i));
    }
  }

  ErrorSums all;
  std::vector<ErrorSums> per_step(l);
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    all.add(pred[i], truth[i], mape_threshold);
    per_step[i % l].add(pred[i], truth[i], mape_threshold);
  }

  MetricReport r;
  r.mae = all.mae();
  r.rmse = all.rmse();
  r.mape = all.mape();
  if (mode == ForecastMode::Multi) {
    for (std::size_t s = 0; s < l; ++s) {
      r.horizons.push_back({s + 1, per_step[s].mae(), per_step[s].rmse(), per_step[s].mape()});
    }
    return r;
  }

  double truth_mean = 0.0;
  for (std::size_t i = 0; i < truth.numel(); ++i) truth_mean += truth[i];
  truth_mean /= static_cast<double>(truth.numel());
  double spread = 0.0;
  for (std::size_t i = 0; i < truth.numel(); ++i) {
    spread += (truth[i] - truth_mean) * (truth[i] - truth_mean);
  }
  bool flat = true;
  for (std::size_t i = 0; i < truth.numel(); ++i) flat = flat && truth[i] == truth[0];
  if (flat) throw MetricUndefinedError("RRSE undefined: truth is constant");
  r.rrse = std::sqrt(all.sq / spread);

  // Pearson correlation per series over every (sample, step) value.
  double corr_sum = 0.0;
  std::size_t corr_count = 0;
  for (std::size_t node = 0; node < n; ++node) {
    auto at = [&](const Tensor& t, std::size_t s, std::size_t k) {
      return t[(s * n + node) * l + k];
    };
    bool flat_pred = true, flat_truth = true;
    for (std::size_t s = 0; s < samples; ++s)
      for (std::size_t k = 0; k < l; ++k) {
        flat_pred = flat_pred && at(pred, s, k) == at(pred, 0, 0);
        flat_truth = flat_truth && at(truth, s, k) == at(truth, 0, 0);
      }
    if (flat_truth) continue;
    ++corr_count;
    if (flat_pred) continue;
    double mp = 0.0, mt = 0.0;
    for (std::size_t s = 0; s < samples; ++s)
      for (std::size_t k = 0; k < l; ++k) {
        mp += at(pred, s, k);
        mt += at(truth, s, k);
      }
    const double len = static_cast<double>(samples * l);
    mp /= len;
    mt /= len;
    double cov = 0.0, vp = 0.0, vt = 0.0;
    for (std::size_t s = 0; s < samples; ++s)
      for (std::size_t k = 0; k < l; ++k) {
        const double dp = at(pred, s, k) - mp, dt = at(truth, s, k) - mt;
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
      }
    corr_sum += cov / std::sqrt(vp * vt);
  }
  if (corr_count == 0) throw MetricUndefinedError("CORR undefined: every truth series is constant");
  r.corr = corr_sum / static_cast<double>(corr_count);
  return r;
}

}  // namespace lightcts
