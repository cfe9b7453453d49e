#include "diffi2i/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "diffi2i/errors.hpp"

namespace diffi2i::ops {
namespace {

[[noreturn]] void dim_error(const char* op, const std::string& detail) {
  throw DimensionError(std::string(op) + ": " + detail);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    dim_error(op, "shapes differ " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank,
                  const char* name) {
  if (x.rank() != rank) {
    dim_error(op, std::string(name) + " must have rank " +
                      std::to_string(rank) + ", got " + shape_string(x.shape()));
  }
}

void require_axis(const char* op, const char* what, std::size_t got,
                  std::size_t want) {
  if (got != want) {
    dim_error(op, std::string(what) + " is " + std::to_string(got) +
                      ", expected " + std::to_string(want));
  }
}

// Elementwise unary op with a derivative expressed in terms of (x, y).
template <class F, class D>
Tensor unary(const Tensor& x, F f, D dfdx) {
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return Tensor::from_op(x.shape(), std::move(out), {x},
                         [x, dfdx](std::span<const double> g) {
                           auto gx = Tensor::grad_sink(x);
                           if (gx.empty()) return;
                           auto xs = x.data();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             gx[i] += g[i] * dfdx(xs[i]);
                           }
                         });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] + bs[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [a, b](std::span<const double> g) {
                           for (const auto& t : {a, b}) {
                             auto gt = Tensor::grad_sink(t);
                             for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
                           }
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] - bs[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [a, b](std::span<const double> g) {
                           auto ga = Tensor::grad_sink(a);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                           auto gb = Tensor::grad_sink(b);
                           for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] * bs[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [a, b](std::span<const double> g) {
                           auto as = a.data();
                           auto bs = b.data();
                           auto ga = Tensor::grad_sink(a);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bs[i];
                           auto gb = Tensor::grad_sink(b);
                           for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * as[i];
                         });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; },
      [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, [value](double v) { return v + value; }, [](double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); },
      [](double v) { return std::exp(v); });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::from_op(Shape{1}, {total}, {x},
                         [x](std::span<const double> g) {
                           auto gx = Tensor::grad_sink(x);
                           for (auto& v : gx) v += g[0];
                         });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) dim_error("mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    dim_error("reshape", "cannot view " + shape_string(x.shape()) + " as " +
                             shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::from_op(std::move(shape), std::move(out), {x},
                         [x](std::span<const double> g) {
                           auto gx = Tensor::grad_sink(x);
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                         });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) dim_error("concat", "no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) {
    dim_error("concat", "axis " + std::to_string(axis) + " out of range for " +
                            shape_string(ref));
  }
  std::size_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) dim_error("concat", "rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d) {
      if (d != axis && p.dim(d) != ref[d]) {
        dim_error("concat", "axis " + std::to_string(d) + " differs: " +
                                shape_string(p.shape()) + " vs " +
                                shape_string(ref));
      }
    }
    axis_total += p.dim(axis);
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];

  Shape out_shape = ref;
  out_shape[axis] = axis_total;
  std::vector<double> out(shape_numel(out_shape));
  const std::size_t out_stride = axis_total * inner;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.dim(axis) * inner;
    auto ps = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(ps.begin() + o * chunk, chunk,
                  out.begin() + o * out_stride + offset);
    }
    offset += chunk;
  }
  return Tensor::from_op(
      std::move(out_shape), std::move(out), parts,
      [parts, axis, outer, inner, out_stride](std::span<const double> g) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
          const std::size_t chunk = p.dim(axis) * inner;
          auto gp = Tensor::grad_sink(p);
          if (!gp.empty()) {
            for (std::size_t o = 0; o < outer; ++o) {
              for (std::size_t k = 0; k < chunk; ++k) {
                gp[o * chunk + k] += g[o * out_stride + offset + k];
              }
            }
          }
          offset += chunk;
        }
      });
}

Tensor conv2d_pointwise(const Tensor& x, const Tensor& w, const Tensor& b) {
  constexpr const char* op = "conv2d_pointwise";
  require_rank(op, x, 4, "x");
  require_rank(op, w, 2, "w");
  require_rank(op, b, 1, "b");
  const std::size_t n_batch = x.dim(0), c_in = x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  const std::size_t c_out = w.dim(0);
  require_axis(op, "w axis 1 (C_in)", w.dim(1), c_in);
  require_axis(op, "b axis 0 (C_out)", b.dim(0), c_out);

  auto xs = x.data();
  auto ws = w.data();
  auto bs = b.data();
  std::vector<double> out(n_batch * c_out * hw);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t o = 0; o < c_out; ++o) {
      double* dst = out.data() + (n * c_out + o) * hw;
      std::fill_n(dst, hw, bs[o]);
      for (std::size_t i = 0; i < c_in; ++i) {
        const double wv = ws[o * c_in + i];
        const double* src = xs.data() + (n * c_in + i) * hw;
        for (std::size_t p = 0; p < hw; ++p) dst[p] += wv * src[p];
      }
    }
  }
  add_macs(n_batch * c_out * c_in * hw);

  return Tensor::from_op(
      Shape{n_batch, c_out, x.dim(2), x.dim(3)}, std::move(out), {x, w, b},
      [x, w, b, n_batch, c_in, c_out, hw](std::span<const double> g) {
        auto xs = x.data();
        auto ws = w.data();
        auto gx = Tensor::grad_sink(x);
        auto gw = Tensor::grad_sink(w);
        auto gb = Tensor::grad_sink(b);
        for (std::size_t n = 0; n < n_batch; ++n) {
          for (std::size_t o = 0; o < c_out; ++o) {
            const double* go = g.data() + (n * c_out + o) * hw;
            if (!gb.empty()) {
              double acc = 0.0;
              for (std::size_t p = 0; p < hw; ++p) acc += go[p];
              gb[o] += acc;
            }
            for (std::size_t i = 0; i < c_in; ++i) {
              const double* src = xs.data() + (n * c_in + i) * hw;
              if (!gw.empty()) {
                double acc = 0.0;
                for (std::size_t p = 0; p < hw; ++p) acc += go[p] * src[p];
                gw[o * c_in + i] += acc;
              }
              if (!gx.empty()) {
                const double wv = ws[o * c_in + i];
                double* dst = gx.data() + (n * c_in + i) * hw;
                for (std::size_t p = 0; p < hw; ++p) dst[p] += wv * go[p];
              }
            }
          }
        }
      });
}

Tensor conv2d_depthwise(const Tensor& x, const Tensor& w, const Tensor& b) {
  constexpr const char* op = "conv2d_depthwise";
  require_rank(op, x, 4, "x");
  require_rank(op, w, 3, "w");
  require_rank(op, b, 1, "b");
  const std::size_t n_batch = x.dim(0), channels = x.dim(1);
  const std::size_t height = x.dim(2), width = x.dim(3);
  require_axis(op, "w axis 0 (C)", w.dim(0), channels);
  if (w.dim(1) != 3 || w.dim(2) != 3) {
    dim_error(op, "kernel must be 3x3, got " + shape_string(w.shape()));
  }
  require_axis(op, "b axis 0 (C)", b.dim(0), channels);

  const std::size_t hw = height * width;
  auto xs = x.data();
  auto ws = w.data();
  auto bs = b.data();
  std::vector<double> out(xs.size());
  const auto h_int = static_cast<std::ptrdiff_t>(height);
  const auto w_int = static_cast<std::ptrdiff_t>(width);

  // Calls fn(out_offset_row, in_offset_row, w_begin, w_end, tap) for every
  // valid (row, tap) pair of a single plane.
  auto for_each_tap = [h_int, w_int](auto&& fn) {
    for (std::ptrdiff_t ki = 0; ki < 3; ++ki) {
      const std::ptrdiff_t dy = ki - 1;
      const std::ptrdiff_t h0 = std::max<std::ptrdiff_t>(0, -dy);
      const std::ptrdiff_t h1 = std::min(h_int, h_int - dy);
      for (std::ptrdiff_t kj = 0; kj < 3; ++kj) {
        const std::ptrdiff_t dx = kj - 1;
        const std::ptrdiff_t w0 = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t w1 = std::min(w_int, w_int - dx);
        for (std::ptrdiff_t h = h0; h < h1; ++h) {
          fn(h * w_int, (h + dy) * w_int + dx, w0, w1,
             static_cast<std::size_t>(ki * 3 + kj));
        }
      }
    }
  };

  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src = xs.data() + (n * channels + c) * hw;
      double* dst = out.data() + (n * channels + c) * hw;
      const double* kernel = ws.data() + c * 9;
      std::fill_n(dst, hw, bs[c]);
      for_each_tap([&](std::ptrdiff_t orow, std::ptrdiff_t irow, std::ptrdiff_t w0,
                       std::ptrdiff_t w1, std::size_t tap) {
        const double k = kernel[tap];
        for (std::ptrdiff_t j = w0; j < w1; ++j) dst[orow + j] += k * src[irow + j];
      });
    }
  }
  add_macs(n_batch * channels * 9 * hw);

  return Tensor::from_op(
      x.shape(), std::move(out), {x, w, b},
      [x, w, b, n_batch, channels, hw, for_each_tap](std::span<const double> g) {
        auto xs = x.data();
        auto ws = w.data();
        auto gx = Tensor::grad_sink(x);
        auto gw = Tensor::grad_sink(w);
        auto gb = Tensor::grad_sink(b);
        for (std::size_t n = 0; n < n_batch; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const double* go = g.data() + (n * channels + c) * hw;
            const double* src = xs.data() + (n * channels + c) * hw;
            const double* kernel = ws.data() + c * 9;
            if (!gb.empty()) {
              double acc = 0.0;
              for (std::size_t p = 0; p < hw; ++p) acc += go[p];
              gb[c] += acc;
            }
            double* gsrc = gx.empty() ? nullptr : gx.data() + (n * channels + c) * hw;
            for_each_tap([&](std::ptrdiff_t orow, std::ptrdiff_t irow,
                             std::ptrdiff_t w0, std::ptrdiff_t w1, std::size_t tap) {
              if (!gw.empty()) {
                double acc = 0.0;
                for (std::ptrdiff_t j = w0; j < w1; ++j) acc += go[orow + j] * src[irow + j];
                gw[c * 9 + tap] += acc;
              }
              if (gsrc) {
                const double k = kernel[tap];
                for (std::ptrdiff_t j = w0; j < w1; ++j) gsrc[irow + j] += k * go[orow + j];
              }
            });
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  constexpr const char* op = "linear";
  require_rank(op, w, 2, "w");
  require_rank(op, b, 1, "b");
  if (x.rank() == 0) dim_error(op, "x has no trailing axis");
  const std::size_t d_in = x.dim(x.rank() - 1);
  const std::size_t d_out = w.dim(0);
  require_axis(op, "x trailing axis vs w axis 1", d_in, w.dim(1));
  require_axis(op, "b axis 0 (D_out)", b.dim(0), d_out);
  const std::size_t rows = x.size() / d_in;

  auto xs = x.data();
  auto ws = w.data();
  auto bs = b.data();
  std::vector<double> out(rows * d_out);
  for (std::size_t m = 0; m < rows; ++m) {
    const double* xr = xs.data() + m * d_in;
    for (std::size_t o = 0; o < d_out; ++o) {
      const double* wr = ws.data() + o * d_in;
      double acc = bs[o];
      for (std::size_t i = 0; i < d_in; ++i) acc += wr[i] * xr[i];
      out[m * d_out + o] = acc;
    }
  }
  add_macs(rows * d_out * d_in);

  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  return Tensor::from_op(
      std::move(out_shape), std::move(out), {x, w, b},
      [x, w, b, rows, d_in, d_out](std::span<const double> g) {
        auto xs = x.data();
        auto ws = w.data();
        auto gx = Tensor::grad_sink(x);
        auto gw = Tensor::grad_sink(w);
        auto gb = Tensor::grad_sink(b);
        for (std::size_t m = 0; m < rows; ++m) {
          const double* xr = xs.data() + m * d_in;
          for (std::size_t o = 0; o < d_out; ++o) {
            const double go = g[m * d_out + o];
            if (!gb.empty()) gb[o] += go;
            const double* wr = ws.data() + o * d_in;
            if (!gw.empty()) {
              double* gwr = gw.data() + o * d_in;
              for (std::size_t i = 0; i < d_in; ++i) gwr[i] += go * xr[i];
            }
            if (!gx.empty()) {
              double* gxr = gx.data() + m * d_in;
              for (std::size_t i = 0; i < d_in; ++i) gxr[i] += go * wr[i];
            }
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  constexpr const char* op = "layer_norm";
  require_rank(op, x, 4, "x");
  require_rank(op, gamma, 1, "gamma");
  require_rank(op, beta, 1, "beta");
  const std::size_t n_batch = x.dim(0), channels = x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  require_axis(op, "gamma axis 0 (C)", gamma.dim(0), channels);
  require_axis(op, "beta axis 0 (C)", beta.dim(0), channels);

  auto xs = x.data();
  auto gs = gamma.data();
  auto bs = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(xs.size());
  auto inv_std = std::make_shared<std::vector<double>>(n_batch * hw);
  std::vector<double> out(xs.size());
  const double inv_c = 1.0 / static_cast<double>(channels);
  for (std::size_t n = 0; n < n_batch; ++n) {
    const std::size_t base = n * channels * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      double mu = 0.0;
      for (std::size_t c = 0; c < channels; ++c) mu += xs[base + c * hw + p];
      mu *= inv_c;
      double var = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = xs[base + c * hw + p] - mu;
        var += d * d;
      }
      var *= inv_c;
      const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
      (*inv_std)[n * hw + p] = inv;
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t k = base + c * hw + p;
        const double xh = (xs[k] - mu) * inv;
        (*xhat)[k] = xh;
        out[k] = gs[c] * xh + bs[c];
      }
    }
  }

  return Tensor::from_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, n_batch, channels, hw,
       inv_c](std::span<const double> g) {
        auto gs = gamma.data();
        auto gx = Tensor::grad_sink(x);
        auto ggamma = Tensor::grad_sink(gamma);
        auto gbeta = Tensor::grad_sink(beta);
        const auto& xh = *xhat;
        for (std::size_t n = 0; n < n_batch; ++n) {
          const std::size_t base = n * channels * hw;
          for (std::size_t p = 0; p < hw; ++p) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t k = base + c * hw + p;
              if (!ggamma.empty()) ggamma[c] += g[k] * xh[k];
              if (!gbeta.empty()) gbeta[c] += g[k];
              const double d = g[k] * gs[c];
              mean_d += d;
              mean_dx += d * xh[k];
            }
            if (gx.empty()) continue;
            mean_d *= inv_c;
            mean_dx *= inv_c;
            const double inv = (*inv_std)[n * hw + p];
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t k = base + c * hw + p;
              gx[k] += inv * (g[k] * gs[c] - mean_d - xh[k] * mean_dx);
            }
          }
        }
      });
}

Tensor simple_gate(const Tensor& x) {
  constexpr const char* op = "simple_gate";
  require_rank(op, x, 4, "x");
  const std::size_t n_batch = x.dim(0), channels2 = x.dim(1);
  if (channels2 % 2 != 0) {
    dim_error(op, "channel axis must be even, got " + std::to_string(channels2));
  }
  const std::size_t half = channels2 / 2;
  const std::size_t hw = x.dim(2) * x.dim(3);
  const std::size_t plane = half * hw;
  auto xs = x.data();
  std::vector<double> out(n_batch * plane);
  for (std::size_t n = 0; n < n_batch; ++n) {
    const double* first = xs.data() + n * 2 * plane;
    const double* second = first + plane;
    double* dst = out.data() + n * plane;
    for (std::size_t k = 0; k < plane; ++k) dst[k] = first[k] * second[k];
  }
  return Tensor::from_op(Shape{n_batch, half, x.dim(2), x.dim(3)}, std::move(out),
                         {x}, [x, n_batch, plane](std::span<const double> g) {
                           auto gx = Tensor::grad_sink(x);
                           if (gx.empty()) return;
                           auto xs = x.data();
                           for (std::size_t n = 0; n < n_batch; ++n) {
                             const std::size_t a = n * 2 * plane;
                             const std::size_t b = a + plane;
                             const double* go = g.data() + n * plane;
                             for (std::size_t k = 0; k < plane; ++k) {
                               gx[a + k] += go[k] * xs[b + k];
                               gx[b + k] += go[k] * xs[a + k];
                             }
                           }
                         });
}

Tensor global_avg_pool(const Tensor& x) {
  constexpr const char* op = "global_avg_pool";
  require_rank(op, x, 4, "x");
  const std::size_t n_batch = x.dim(0), channels = x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  if (hw == 0) dim_error(op, "empty spatial extent");
  auto xs = x.data();
  std::vector<double> out(n_batch * channels);
  const double inv = 1.0 / static_cast<double>(hw);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double acc = 0.0;
    for (std::size_t p = 0; p < hw; ++p) acc += xs[k * hw + p];
    out[k] = acc * inv;
  }
  return Tensor::from_op(Shape{n_batch, channels}, std::move(out), {x},
                         [x, hw, inv](std::span<const double> g) {
                           auto gx = Tensor::grad_sink(x);
                           if (gx.empty()) return;
                           for (std::size_t k = 0; k < g.size(); ++k) {
                             const double v = g[k] * inv;
                             for (std::size_t p = 0; p < hw; ++p) gx[k * hw + p] += v;
                           }
                         });
}

namespace {

void require_channel_vector(const char* op, const Tensor& x, const Tensor& v) {
  require_rank(op, x, 4, "x");
  require_rank(op, v, 2, "channel vector");
  require_axis(op, "vector axis 0 (N)", v.dim(0), x.dim(0));
  require_axis(op, "vector axis 1 (C)", v.dim(1), x.dim(1));
}

}  // namespace

Tensor mul_channel(const Tensor& x, const Tensor& s) {
  require_channel_vector("mul_channel", x, s);
  const std::size_t hw = x.dim(2) * x.dim(3);
  auto xs = x.data();
  auto ss = s.data();
  std::vector<double> out(xs.size());
  for (std::size_t k = 0; k < ss.size(); ++k) {
    for (std::size_t p = 0; p < hw; ++p) out[k * hw + p] = xs[k * hw + p] * ss[k];
  }
  return Tensor::from_op(x.shape(), std::move(out), {x, s},
                         [x, s, hw](std::span<const double> g) {
                           auto xs = x.data();
                           auto ss = s.data();
                           auto gx = Tensor::grad_sink(x);
                           auto gs = Tensor::grad_sink(s);
                           for (std::size_t k = 0; k < ss.size(); ++k) {
                             double acc = 0.0;
                             for (std::size_t p = 0; p < hw; ++p) {
                               const std::size_t i = k * hw + p;
                               acc += g[i] * xs[i];
                               if (!gx.empty()) gx[i] += g[i] * ss[k];
                             }
                             if (!gs.empty()) gs[k] += acc;
                           }
                         });
}

Tensor add_channel(const Tensor& x, const Tensor& v) {
  require_channel_vector("add_channel", x, v);
  const std::size_t hw = x.dim(2) * x.dim(3);
  auto xs = x.data();
  auto vs = v.data();
  std::vector<double> out(xs.size());
  for (std::size_t k = 0; k < vs.size(); ++k) {
    for (std::size_t p = 0; p < hw; ++p) out[k * hw + p] = xs[k * hw + p] + vs[k];
  }
  return Tensor::from_op(x.shape(), std::move(out), {x, v},
                         [x, v, hw](std::span<const double> g) {
                           auto gx = Tensor::grad_sink(x);
                           auto gv = Tensor::grad_sink(v);
                           const std::size_t planes = v.size();
                           for (std::size_t k = 0; k < planes; ++k) {
                             double acc = 0.0;
                             for (std::size_t p = 0; p < hw; ++p) {
                               acc += g[k * hw + p];
                               if (!gx.empty()) gx[k * hw + p] += g[k * hw + p];
                             }
                             if (!gv.empty()) gv[k] += acc;
                           }
                         });
}

namespace {

// out[k] = x[source[k]]; gradient scatters back through the same map.
Tensor gather(const Tensor& x, Shape shape, std::vector<std::size_t> source) {
  auto xs = x.data();
  std::vector<double> out(source.size());
  for (std::size_t k = 0; k < source.size(); ++k) out[k] = xs[source[k]];
  auto map = std::make_shared<std::vector<std::size_t>>(std::move(source));
  return Tensor::from_op(std::move(shape), std::move(out), {x},
                         [x, map](std::span<const double> g) {
                           auto gx = Tensor::grad_sink(x);
                           if (gx.empty()) return;
                           const auto& m = *map;
                           for (std::size_t k = 0; k < m.size(); ++k) gx[m[k]] += g[k];
                         });
}

}  // namespace

Tensor pixel_unshuffle(const Tensor& x, std::size_t r) {
  constexpr const char* op = "pixel_unshuffle";
  require_rank(op, x, 4, "x");
  if (r == 0) dim_error(op, "factor must be positive");
  const std::size_t n_batch = x.dim(0), channels = x.dim(1);
  const std::size_t height = x.dim(2), width = x.dim(3);
  if (height % r != 0 || width % r != 0) {
    dim_error(op, "spatial dims " + std::to_string(height) + "x" +
                      std::to_string(width) + " not divisible by " +
                      std::to_string(r));
  }
  const std::size_t oh = height / r, ow = width / r, oc = channels * r * r;
  std::vector<std::size_t> source(x.size());
  std::size_t k = 0;
  for (std::size_t n = 0; n < n_batch; ++n)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
          for (std::size_t h = 0; h < oh; ++h)
            for (std::size_t w = 0; w < ow; ++w)
              source[k++] = ((n * channels + c) * height + h * r + i) * width + w * r + j;
  return gather(x, Shape{n_batch, oc, oh, ow}, std::move(source));
}

Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
  constexpr const char* op = "pixel_shuffle";
  require_rank(op, x, 4, "x");
  if (r == 0) dim_error(op, "factor must be positive");
  const std::size_t n_batch = x.dim(0), in_c = x.dim(1);
  const std::size_t height = x.dim(2), width = x.dim(3);
  if (in_c % (r * r) != 0) {
    dim_error(op, "channel axis " + std::to_string(in_c) +
                      " not divisible by r^2 = " + std::to_string(r * r));
  }
  const std::size_t channels = in_c / (r * r);
  const std::size_t oh = height * r, ow = width * r;
  std::vector<std::size_t> source(x.size());
  std::size_t k = 0;
  for (std::size_t n = 0; n < n_batch; ++n)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xw = 0; xw < ow; ++xw) {
          const std::size_t i = y % r, j = xw % r;
          const std::size_t src_c = c * r * r + i * r + j;
          source[k++] = ((n * in_c + src_c) * height + y / r) * width + xw / r;
        }
  return gather(x, Shape{n_batch, channels, oh, ow}, std::move(source));
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0) dim_error("log_softmax", "x has no trailing axis");
  const std::size_t d = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / d;
  auto xs = x.data();
  std::vector<double> out(xs.size());
  auto probs = std::make_shared<std::vector<double>>(xs.size());
  for (std::size_t m = 0; m < rows; ++m) {
    const double* row = xs.data() + m * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t i = 0; i < d; ++i) z += std::exp(row[i] - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t i = 0; i < d; ++i) {
      out[m * d + i] = row[i] - log_z;
      (*probs)[m * d + i] = std::exp(out[m * d + i]);
    }
  }
  return Tensor::from_op(x.shape(), std::move(out), {x},
                         [x, probs, rows, d](std::span<const double> g) {
                           auto gx = Tensor::grad_sink(x);
                           if (gx.empty()) return;
                           for (std::size_t m = 0; m < rows; ++m) {
                             double gsum = 0.0;
                             for (std::size_t i = 0; i < d; ++i) gsum += g[m * d + i];
                             for (std::size_t i = 0; i < d; ++i) {
                               gx[m * d + i] += g[m * d + i] - (*probs)[m * d + i] * gsum;
                             }
                           }
                         });
}

Tensor softmax(const Tensor& x) { return exp(log_softmax(x)); }

}  // namespace diffi2i::ops
