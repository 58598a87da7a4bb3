#include "lightcts/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lightcts/errors.hpp"

namespace lightcts::ops {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

constexpr double kMasked = std::numeric_limits<double>::lowest();

bool is_masked(double v) { return v <= kMasked; }  // also true for -inf

// Wraps a computed value as a tensor and, when any input needs a gradient,
// records it on the active tape.
Tensor finish(Shape shape, std::vector<double> values, std::vector<ImplPtr> inputs,
              BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = active_tape();
  if (tape == nullptr) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const ImplPtr& p) { return p->requires_grad; });
  if (!any) return out;
  out.set_requires_grad(true);
  tape->record(out, std::move(inputs), std::move(backward));
  return out;
}

std::size_t normalize_axis(int axis, std::size_t rank, const Shape& shape) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape));
  }
  return static_cast<std::size_t>(a);
}

Shape leading(const Shape& s, std::size_t drop) {
  return Shape(s.begin(), s.end() - static_cast<std::ptrdiff_t>(drop));
}

// Output shape and per-element source indices for a numpy-style broadcast.
struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  plan.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      plan.out[i] = pa[i];
    } else if (pa[i] == 1) {
      plan.out[i] = pb[i];
    } else {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                       shape_str(b) + " are not broadcastable");
    }
  }
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t i = r; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : acc_a;
    sb[i] = pb[i] == 1 ? 0 : acc_b;
    acc_a *= pa[i];
    acc_b *= pb[i];
  }
  const std::size_t n = shape_numel(plan.out);
  plan.ia.resize(n);
  plan.ib.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off_a = 0, off_b = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    plan.ia[flat] = off_a;
    plan.ib[flat] = off_b;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < plan.out[d]) {
        off_a += sa[d];
        off_b += sb[d];
        break;
      }
      off_a -= sa[d] * (plan.out[d] - 1);
      off_b -= sb[d] * (plan.out[d] - 1);
      idx[d] = 0;
    }
  }
  return plan;
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), name));
  const std::size_t n = shape_numel(plan->out);
  std::vector<double> out(n);
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = da[plan->same ? i : plan->ia[i]];
    const double y = db[plan->same ? i : plan->ib[i]];
    out[i] = op == BinOp::Add ? x + y : op == BinOp::Sub ? x - y : x * y;
  }
  ImplPtr ia = a.impl(), ib = b.impl();
  return finish(plan->out, std::move(out), {ia, ib},
                [ia, ib, plan, op, n](const TensorImpl& o) {
                  const auto& g = o.grad;
                  if (ia->requires_grad) {
                    auto ga = grad_buffer(*ia);
                    for (std::size_t i = 0; i < n; ++i) {
                      const std::size_t j = plan->same ? i : plan->ia[i];
                      const std::size_t k = plan->same ? i : plan->ib[i];
                      ga[j] += op == BinOp::Mul ? g[i] * ib->data[k] : g[i];
                    }
                  }
                  if (ib->requires_grad) {
                    auto gb = grad_buffer(*ib);
                    for (std::size_t i = 0; i < n; ++i) {
                      const std::size_t j = plan->same ? i : plan->ia[i];
                      const std::size_t k = plan->same ? i : plan->ib[i];
                      gb[k] += op == BinOp::Mul   ? g[i] * ia->data[j]
                               : op == BinOp::Sub ? -g[i]
                                                  : g[i];
                    }
                  }
                });
}

// f maps input to output; df gives d(out)/d(in) from (input, output).
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  const auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(dx[i]);
  ImplPtr ix = x.impl();
  return finish(x.shape(), std::move(out), {ix}, [ix, df](const TensorImpl& o) {
    auto gx = grad_buffer(*ix);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += o.grad[i] * df(ix->data[i], o.data[i]);
    }
  });
}

// out[r, g*nout + j] = sum_p x[r, g*nin + p] * w[g, p, j]
void grouped_product(std::span<const double> x, std::span<const double> w,
                     std::span<double> out, std::size_t rows, std::size_t groups,
                     std::size_t nin, std::size_t nout) {
  const std::size_t xw = groups * nin, ow = groups * nout;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * xw;
    double* orow = out.data() + r * ow;
    for (std::size_t g = 0; g < groups; ++g) {
      double* og = orow + g * nout;
      for (std::size_t p = 0; p < nin; ++p) {
        const double xv = xr[g * nin + p];
        const double* wr = w.data() + (g * nin + p) * nout;
        for (std::size_t j = 0; j < nout; ++j) og[j] += xv * wr[j];
      }
    }
  }
}

void grouped_product_backward(const TensorImpl& o, TensorImpl& x, TensorImpl& w,
                              std::size_t rows, std::size_t groups, std::size_t nin,
                              std::size_t nout) {
  const std::size_t xw = groups * nin, ow = groups * nout;
  const auto& g = o.grad;
  if (x.requires_grad) {
    auto gx = grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g.data() + r * ow;
      for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t p = 0; p < nin; ++p) {
          const double* wr = w.data.data() + (gi * nin + p) * nout;
          double acc = 0.0;
          for (std::size_t j = 0; j < nout; ++j) acc += gr[gi * nout + j] * wr[j];
          gx[r * xw + gi * nin + p] += acc;
        }
      }
    }
  }
  if (w.requires_grad) {
    auto gw = grad_buffer(w);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.data.data() + r * xw;
      const double* gr = g.data() + r * ow;
      for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t p = 0; p < nin; ++p) {
          const double xv = xr[gi * nin + p];
          double* gwr = gw.data() + (gi * nin + p) * nout;
          for (std::size_t j = 0; j < nout; ++j) gwr[j] += xv * gr[gi * nout + j];
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.dim(-1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                     shape_str(b.shape()));
  }
  const std::size_t nin = b.dim(0), nout = b.dim(1);
  const std::size_t rows = a.numel() / nin;
  Shape shape = a.shape();
  shape.back() = nout;
  std::vector<double> out(rows * nout, 0.0);
  grouped_product(a.data(), b.data(), out, rows, 1, nin, nout);
  ImplPtr ia = a.impl(), ib = b.impl();
  return finish(std::move(shape), std::move(out), {ia, ib},
                [ia, ib, rows, nin, nout](const TensorImpl& o) {
                  grouped_product_backward(o, *ia, *ib, rows, 1, nin, nout);
                });
}

Tensor grouped_matmul(const Tensor& x, const Tensor& w) {
  if (x.rank() < 1 || w.rank() != 3 || x.dim(-1) != w.dim(0) * w.dim(1)) {
    throw ShapeError("grouped_matmul: input " + shape_str(x.shape()) +
                     " does not match grouped weights " + shape_str(w.shape()));
  }
  const std::size_t groups = w.dim(0), nin = w.dim(1), nout = w.dim(2);
  const std::size_t rows = x.numel() / x.dim(-1);
  Shape shape = x.shape();
  shape.back() = groups * nout;
  std::vector<double> out(rows * groups * nout, 0.0);
  grouped_product(x.data(), w.data(), out, rows, groups, nin, nout);
  ImplPtr ix = x.impl(), iw = w.impl();
  return finish(std::move(shape), std::move(out), {ix, iw},
                [ix, iw, rows, groups, nin, nout](const TensorImpl& o) {
                  grouped_product_backward(o, *ix, *iw, rows, groups, nin, nout);
                });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || a.rank() != b.rank() || a.dim(-1) != b.dim(-2) ||
      leading(a.shape(), 2) != leading(b.shape(), 2)) {
    throw ShapeError("bmm: cannot multiply " + shape_str(a.shape()) + " by " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  const std::size_t batch = a.numel() / (m * k);
  Shape shape = a.shape();
  shape.back() = n;
  std::vector<double> out(batch * m * n, 0.0);
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t s = 0; s < batch; ++s) {
    grouped_product(da.subspan(s * m * k, m * k), db.subspan(s * k * n, k * n),
                    std::span<double>(out).subspan(s * m * n, m * n), m, 1, k, n);
  }
  ImplPtr ia = a.impl(), ib = b.impl();
  return finish(std::move(shape), std::move(out), {ia, ib},
                [ia, ib, batch, m, k, n](const TensorImpl& o) {
                  const auto& g = o.grad;
                  for (std::size_t s = 0; s < batch; ++s) {
                    const double* gs = g.data() + s * m * n;
                    const double* as = ia->data.data() + s * m * k;
                    const double* bs = ib->data.data() + s * k * n;
                    if (ia->requires_grad) {
                      double* ga = grad_buffer(*ia).data() + s * m * k;
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          double acc = 0.0;
                          for (std::size_t j = 0; j < n; ++j) acc += gs[i * n + j] * bs[p * n + j];
                          ga[i * k + p] += acc;
                        }
                    }
                    if (ib->requires_grad) {
                      double* gb = grad_buffer(*ib).data() + s * k * n;
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          const double av = as[i * k + p];
                          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * gs[i * n + j];
                        }
                    }
                  }
                });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  ImplPtr ix = x.impl();
  std::vector<double> values(x.data().begin(), x.data().end());
  return finish(std::move(shape), std::move(values), {ix}, [ix](const TensorImpl& o) {
    auto gx = grad_buffer(*ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  std::vector<std::size_t> check(order);
  std::sort(check.begin(), check.end());
  std::vector<std::size_t> iota(r);
  std::iota(iota.begin(), iota.end(), 0);
  if (check != iota) {
    throw ShapeError("permute: invalid axis order for shape " + shape_str(x.shape()));
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t d = r; d-- > 1;) in_stride[d - 1] = in_stride[d] * x.shape()[d];
  Shape shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t d = 0; d < r; ++d) {
    shape[d] = x.shape()[order[d]];
    stride[d] = in_stride[order[d]];
  }
  const std::size_t n = x.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*src)[flat] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < shape[d]) {
        off += stride[d];
        break;
      }
      off -= stride[d] * (shape[d] - 1);
      idx[d] = 0;
    }
  }
  std::vector<double> out(n);
  const auto dx = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = dx[(*src)[i]];
  ImplPtr ix = x.impl();
  return finish(std::move(shape), std::move(out), {ix}, [ix, src](const TensorImpl& o) {
    auto gx = grad_buffer(*ix);
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[(*src)[i]] += o.grad[i];
  });
}

Tensor swap_axes(const Tensor& x, int axis_a, int axis_b) {
  const std::size_t a = normalize_axis(axis_a, x.rank(), x.shape());
  const std::size_t b = normalize_axis(axis_b, x.rank(), x.shape());
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[a], order[b]);
  return permute(x, order);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() < 1 || x.dim(-1) == 0) {
    throw ShapeError("softmax_rows: empty last axis in " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(-1);
  const std::size_t rows = x.numel() / n;
  const auto dx = x.data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = dx.data() + r * n;
    double* yr = out.data() + r * n;
    double hi = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (is_masked(xr[j])) continue;
      any = true;
      hi = std::max(hi, xr[j]);
    }
    if (!any) {
      throw DegenerateMaskError("softmax_rows: row " + std::to_string(r) +
                                " has every entry masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (is_masked(xr[j])) continue;
      yr[j] = std::exp(xr[j] - hi);
      total += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= total;
  }
  ImplPtr ix = x.impl();
  return finish(x.shape(), std::move(out), {ix}, [ix, n, rows](const TensorImpl& o) {
    auto gx = grad_buffer(*ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * n;
      const double* g = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor mask_fill(const Tensor& scores, std::span<const std::uint8_t> mask) {
  if (scores.rank() < 2 || scores.dim(-1) != scores.dim(-2) ||
      mask.size() != scores.dim(-1) * scores.dim(-1)) {
    throw ShapeError("mask_fill: scores " + shape_str(scores.shape()) +
                     " incompatible with a mask of " + std::to_string(mask.size()) +
                     " entries");
  }
  const std::size_t block = mask.size();
  auto keep = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  const auto ds = scores.data();
  std::vector<double> out(ds.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (*keep)[i % block] ? ds[i] : kMasked;
  }
  ImplPtr is = scores.impl();
  return finish(scores.shape(), std::move(out), {is}, [is, keep, block](const TensorImpl& o) {
    auto gs = grad_buffer(*is);
    for (std::size_t i = 0; i < gs.size(); ++i) {
      if ((*keep)[i % block]) gs[i] += o.grad[i];
    }
  });
}

Tensor dilated_causal_conv1d(const Tensor& h, const Tensor& w,
                             const std::optional<Tensor>& bias, std::size_t dilation,
                             std::size_t groups) {
  if (dilation == 0) throw ShapeError("dilated_causal_conv1d: dilation must be >= 1");
  if (groups == 0) throw ShapeError("dilated_causal_conv1d: groups must be >= 1");
  if (h.rank() < 2 || w.rank() != 3 || w.dim(2) == 0) {
    throw ShapeError("dilated_causal_conv1d: input " + shape_str(h.shape()) +
                     " / weights " + shape_str(w.shape()) + " have the wrong rank");
  }
  const std::size_t steps = h.dim(-2), din = h.dim(-1);
  const std::size_t dout = w.dim(0), cin = w.dim(1), taps = w.dim(2);
  if (din % groups != 0 || dout % groups != 0 || din / groups != cin) {
    throw ShapeError("dilated_causal_conv1d: input " + shape_str(h.shape()) +
                     " does not match weights " + shape_str(w.shape()) + " with " +
                     std::to_string(groups) + " group(s)");
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != dout)) {
    throw ShapeError("dilated_causal_conv1d: bias " + shape_str(bias->shape()) +
                     " does not match " + std::to_string(dout) + " output channels");
  }
  const std::size_t cout = dout / groups;
  const std::size_t seqs = h.numel() / (steps * din);

  // Weights rearranged to [K][G][cin][cout] so the inner loop is contiguous.
  auto wt = std::make_shared<std::vector<double>>(w.numel());
  const auto dw = w.data();
  for (std::size_t o = 0; o < dout; ++o)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t k = 0; k < taps; ++k) {
        const std::size_t g = o / cout, ol = o % cout;
        (*wt)[((k * groups + g) * cin + c) * cout + ol] = dw[(o * cin + c) * taps + k];
      }

  Shape shape = h.shape();
  shape.back() = dout;
  std::vector<double> out(seqs * steps * dout, 0.0);
  const auto dh = h.data();
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t t = 0; t < steps; ++t) {
      double* orow = out.data() + (s * steps + t) * dout;
      if (bias) std::copy(bias->data().begin(), bias->data().end(), orow);
      for (std::size_t k = 0; k < taps && dilation * k <= t; ++k) {
        const double* hrow = dh.data() + (s * steps + t - dilation * k) * din;
        for (std::size_t g = 0; g < groups; ++g) {
          double* og = orow + g * cout;
          for (std::size_t c = 0; c < cin; ++c) {
            const double xv = hrow[g * cin + c];
            const double* wr = wt->data() + ((k * groups + g) * cin + c) * cout;
            for (std::size_t ol = 0; ol < cout; ++ol) og[ol] += xv * wr[ol];
          }
        }
      }
    }
  }

  ImplPtr ih = h.impl(), iw = w.impl();
  ImplPtr ib = bias ? bias->impl() : nullptr;
  std::vector<ImplPtr> inputs{ih, iw};
  if (ib) inputs.push_back(ib);
  return finish(std::move(shape), std::move(out), std::move(inputs),
                [=](const TensorImpl& o) {
                  const auto& g = o.grad;
                  std::vector<double> gwt(iw->requires_grad ? wt->size() : 0, 0.0);
                  std::span<double> gh;
                  if (ih->requires_grad) gh = grad_buffer(*ih);
                  for (std::size_t s = 0; s < seqs; ++s) {
                    for (std::size_t t = 0; t < steps; ++t) {
                      const double* grow = g.data() + (s * steps + t) * dout;
                      for (std::size_t k = 0; k < taps && dilation * k <= t; ++k) {
                        const std::size_t src = (s * steps + t - dilation * k) * din;
                        const double* hrow = ih->data.data() + src;
                        for (std::size_t gi = 0; gi < groups; ++gi) {
                          const double* gg = grow + gi * cout;
                          for (std::size_t c = 0; c < cin; ++c) {
                            const std::size_t woff = ((k * groups + gi) * cin + c) * cout;
                            if (!gh.empty()) {
                              const double* wr = wt->data() + woff;
                              double acc = 0.0;
                              for (std::size_t ol = 0; ol < cout; ++ol) acc += gg[ol] * wr[ol];
                              gh[src + gi * cin + c] += acc;
                            }
                            if (!gwt.empty()) {
                              const double xv = hrow[gi * cin + c];
                              double* gw = gwt.data() + woff;
                              for (std::size_t ol = 0; ol < cout; ++ol) gw[ol] += xv * gg[ol];
                            }
                          }
                        }
                      }
                    }
                  }
                  if (!gwt.empty()) {
                    auto gw = grad_buffer(*iw);
                    for (std::size_t oc = 0; oc < dout; ++oc)
                      for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t k = 0; k < taps; ++k) {
                          const std::size_t gi = oc / cout, ol = oc % cout;
                          gw[(oc * cin + c) * taps + k] +=
                              gwt[((k * groups + gi) * cin + c) * cout + ol];
                        }
                  }
                  if (ib && ib->requires_grad) {
                    auto gb = grad_buffer(*ib);
                    for (std::size_t r = 0; r < seqs * steps; ++r)
                      for (std::size_t oc = 0; oc < dout; ++oc) gb[oc] += g[r * dout + oc];
                  }
                });
}

Tensor permute_channels(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t c = x.rank() ? x.dim(-1) : 0;
  if (perm.size() != c) {
    throw ShapeError("permute_channels: permutation of length " +
                     std::to_string(perm.size()) + " for shape " + shape_str(x.shape()));
  }
  std::vector<std::uint8_t> seen(c, 0);
  for (std::size_t p : perm) {
    if (p >= c || seen[p]) throw ShapeError("permute_channels: not a permutation");
    seen[p] = 1;
  }
  const std::size_t rows = x.numel() / c;
  const auto dx = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = dx[r * c + perm[j]];
  ImplPtr ix = x.impl();
  return finish(x.shape(), std::move(out), {ix}, [ix, perm, rows, c](const TensorImpl& o) {
    auto gx = grad_buffer(*ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) gx[r * c + perm[j]] += o.grad[r * c + j];
  });
}

Tensor select(const Tensor& x, int axis, std::size_t index) {
  const std::size_t a = normalize_axis(axis, x.rank(), x.shape());
  const std::size_t extent = x.shape()[a];
  if (index >= extent) {
    throw ShapeError("select: index " + std::to_string(index) + " out of range for axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < a; ++d) outer *= x.shape()[d];
  for (std::size_t d = a + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(a));
  std::vector<double> out(outer * inner);
  const auto dx = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(dx.data() + (o * extent + index) * inner, inner, out.data() + o * inner);
  ImplPtr ix = x.impl();
  return finish(std::move(shape), std::move(out), {ix},
                [ix, outer, inner, extent, index](const TensorImpl& o) {
                  auto gx = grad_buffer(*ix);
                  for (std::size_t r = 0; r < outer; ++r)
                    for (std::size_t i = 0; i < inner; ++i)
                      gx[(r * extent + index) * inner + i] += o.grad[r * inner + i];
                });
}

Tensor mean(const Tensor& x, int axis) {
  const std::size_t a = normalize_axis(axis, x.rank(), x.shape());
  const std::size_t extent = x.shape()[a];
  if (extent == 0) throw ShapeError("mean: empty axis in " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < a; ++d) outer *= x.shape()[d];
  for (std::size_t d = a + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(a));
  std::vector<double> out(outer * inner, 0.0);
  const auto dx = x.data();
  const double inv = 1.0 / static_cast<double>(extent);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t e = 0; e < extent; ++e)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += dx[(o * extent + e) * inner + i];
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] *= inv;
  }
  ImplPtr ix = x.impl();
  return finish(std::move(shape), std::move(out), {ix},
                [ix, outer, inner, extent, inv](const TensorImpl& o) {
                  auto gx = grad_buffer(*ix);
                  for (std::size_t r = 0; r < outer; ++r)
                    for (std::size_t e = 0; e < extent; ++e)
                      for (std::size_t i = 0; i < inner; ++i)
                        gx[(r * extent + e) * inner + i] += o.grad[r * inner + i] * inv;
                });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  ImplPtr ix = x.impl();
  return finish({}, {total}, {ix}, [ix](const TensorImpl& o) {
    auto gx = grad_buffer(*ix);
    for (double& g : gx) g += o.grad[0];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.rank() ? x.dim(-1) : 0;
  if (d == 0 || gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " with gamma " +
                     shape_str(gamma.shape()) + " and beta " + shape_str(beta.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto dx = x.data();
  const auto dg = gamma.data();
  const auto db = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = dx.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (xr[j] - mu) * is;
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = xh * dg[j] + db[j];
    }
  }
  ImplPtr ix = x.impl(), ig = gamma.impl(), ibeta = beta.impl();
  return finish(x.shape(), std::move(out), {ix, ig, ibeta},
                [ix, ig, ibeta, xhat, inv_std, rows, d](const TensorImpl& o) {
                  const auto& g = o.grad;
                  if (ig->requires_grad) {
                    auto gg = grad_buffer(*ig);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < d; ++j)
                        gg[j] += g[r * d + j] * (*xhat)[r * d + j];
                  }
                  if (ibeta->requires_grad) {
                    auto gb = grad_buffer(*ibeta);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                  }
                  if (ix->requires_grad) {
                    auto gx = grad_buffer(*ix);
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_g = 0.0, mean_gx = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gh = g[r * d + j] * ig->data[j];
                        mean_g += gh;
                        mean_gx += gh * (*xhat)[r * d + j];
                      }
                      mean_g *= inv_d;
                      mean_gx *= inv_d;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gh = g[r * d + j] * ig->data[j];
                        gx[r * d + j] +=
                            (*inv_std)[r] * (gh - mean_g - (*xhat)[r * d + j] * mean_gx);
                      }
                    }
                  }
                });
}

Tensor mae_loss(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("mae_loss: prediction " + shape_str(pred.shape()) +
                     " vs truth " + shape_str(truth.shape()));
  }
  if (pred.numel() == 0) throw ShapeError("mae_loss: empty input");
  const auto dp = pred.data();
  const auto dt = truth.data();
  double total = 0.0;
  for (std::size_t i = 0; i < dp.size(); ++i) total += std::abs(dp[i] - dt[i]);
  const double inv = 1.0 / static_cast<double>(dp.size());
  ImplPtr ip = pred.impl(), it = truth.impl();
  return finish({}, {total * inv}, {ip, it}, [ip, it, inv](const TensorImpl& o) {
    const double g = o.grad[0] * inv;
    for (int side = 0; side < 2; ++side) {
      TensorImpl& t = side == 0 ? *ip : *it;
      if (!t.requires_grad) continue;
      auto gt = grad_buffer(t);
      const double sgn = side == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < gt.size(); ++i) {
        const double e = ip->data[i] - it->data[i];
        if (e > 0) gt[i] += sgn * g;
        else if (e < 0) gt[i] -= sgn * g;
      }
    }
  });
}

}  // namespace lightcts::ops
