#include "conceptmem/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "conceptmem/error.hpp"

namespace cmem::ops {

namespace {

[[noreturn]] void dim_error(const std::string& op, const Shape& a, const Shape& b) {
  throw DimensionError(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

void same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) dim_error(op, a.shape(), b.shape());
}

// C[m x n] += A[m x k] . B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] . B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T . B[k x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class F, class D>
Var unary(Var x, F&& f, D&& dfdx_from_xy) {
  const Array& xv = x.value();
  Array y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  Array saved = y;
  return x.tape->push(std::move(y), {x}, [x, saved = std::move(saved), dfdx_from_xy](Tape& t, const Array& g) {
    const Array& xv = t.value(x);
    Array& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx_from_xy(xv[i], saved[i]);
  });
}

struct ImageDims {
  std::size_t batch;
  std::size_t channels;
  std::size_t height;
  std::size_t width;
  bool batched;
};

ImageDims image_dims(const char* op, const Shape& s) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw DimensionError(std::string(op) + ": expected [C x H x W] or [B x C x H x W], got " + to_string(s));
}

// cols[(ci*9 + ky*3 + kx) x (y*W + x)] for one sample.
void im2col_3x3(const double* img, std::size_t c, std::size_t h, std::size_t w, double* cols) {
  const std::size_t hw = h * w;
  for (std::size_t ci = 0; ci < c; ++ci) {
    const double* plane = img + ci * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* out = cols + ((ci * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - 1;
            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
            out[y * w + x] = inside ? plane[sy * static_cast<long>(w) + sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_3x3(const double* cols, std::size_t c, std::size_t h, std::size_t w, double* img) {
  const std::size_t hw = h * w;
  for (std::size_t ci = 0; ci < c; ++ci) {
    double* plane = img + ci * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* in = cols + ((ci * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - 1;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            plane[sy * static_cast<long>(w) + sx] += in[y * w + x];
          }
        }
      }
    }
  }
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) dim_error("matmul", as, bs);
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Array c({m, n});
  gemm_nn(a.value().data().data(), b.value().data().data(), c.data().data(), m, k, n);
  return a.tape->push(std::move(c), {a, b}, [a, b, m, k, n](Tape& t, const Array& g) {
    if (t.needs_grad(a)) {
      gemm_nt(g.data().data(), t.value(b).data().data(), t.grad_buffer(a).data().data(), m, n, k);
    }
    if (t.needs_grad(b)) {
      gemm_tn(t.value(a).data().data(), g.data().data(), t.grad_buffer(b).data().data(), k, m, n);
    }
  });
}

Var add(Var a, Var b) {
  same_shape("add", a, b);
  Array c = a.value();
  c.add_inplace(b.value());
  return a.tape->push(std::move(c), {a, b}, [a, b](Tape& t, const Array& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  same_shape("sub", a, b);
  Array c = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= bv[i];
  return a.tape->push(std::move(c), {a, b}, [a, b](Tape& t, const Array& g) {
    t.accumulate(a, g);
    if (t.needs_grad(b)) {
      Array& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_shape("mul", a, b);
  Array c = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= bv[i];
  return a.tape->push(std::move(c), {a, b}, [a, b](Tape& t, const Array& g) {
    const Array& av = t.value(a);
    const Array& bv = t.value(b);
    if (t.needs_grad(a)) {
      Array& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      Array& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Array c = a.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= factor;
  return a.tape->push(std::move(c), {a}, [a, factor](Tape& t, const Array& g) {
    Array& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var add_row_bias(Var x, Var bias) {
  const Shape& xs = x.shape();
  const Shape& bs = bias.shape();
  if (xs.size() != 2 || bs.size() != 1 || xs[1] != bs[0]) dim_error("add_row_bias", xs, bs);
  const std::size_t rows = xs[0], cols = xs[1];
  Array y = x.value();
  const Array& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += bv[c];
  }
  return x.tape->push(std::move(y), {x, bias}, [x, bias, rows, cols](Tape& t, const Array& g) {
    t.accumulate(x, g);
    if (t.needs_grad(bias)) {
      Array& gb = t.grad_buffer(bias);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      }
    }
  });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->push(Array::scalar(s), {x}, [x](Tape& t, const Array& g) {
    Array& gx = t.grad_buffer(x);
    const double gv = g[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv;
  });
}

Var reshape(Var x, Shape shape) {
  Array y = x.value().reshaped(std::move(shape));
  return x.tape->push(std::move(y), {x}, [x](Tape& t, const Array& g) {
    Array& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var row(Var x, std::size_t index) {
  const Shape& xs = x.shape();
  if (index >= xs[0]) {
    throw DimensionError("row: index " + std::to_string(index) + " out of range for " + to_string(xs));
  }
  Shape rest = xs.size() == 1 ? Shape{1} : Shape(xs.begin() + 1, xs.end());
  const std::size_t stride = element_count(rest);
  const auto& xv = x.value().values();
  std::vector<double> vals(xv.begin() + static_cast<long>(index * stride),
                           xv.begin() + static_cast<long>((index + 1) * stride));
  return x.tape->push(Array(std::move(rest), std::move(vals)), {x}, [x, index, stride](Tape& t, const Array& g) {
    Array& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < stride; ++i) gx[index * stride + i] += g[i];
  });
}

Var select(Var x, std::size_t index) {
  if (index >= x.value().size()) {
    throw DimensionError("select: index " + std::to_string(index) + " out of range for " + to_string(x.shape()));
  }
  return x.tape->push(Array::scalar(x.value()[index]), {x}, [x, index](Tape& t, const Array& g) {
    t.grad_buffer(x)[index] += g[0];
  });
}

Var stack(std::span<const Var> scalars) {
  if (scalars.empty()) throw DimensionError("stack: needs at least one element");
  Tape* tape = scalars.front().tape;
  std::vector<double> vals;
  vals.reserve(scalars.size());
  std::vector<Var> parents(scalars.begin(), scalars.end());
  for (const Var& s : scalars) {
    if (s.value().size() != 1) throw DimensionError("stack: element of shape " + to_string(s.shape()));
    vals.push_back(s.value()[0]);
  }
  return tape->push(Array::vector(std::move(vals)), parents, [parents](Tape& t, const Array& g) {
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (t.needs_grad(parents[i])) t.grad_buffer(parents[i])[0] += g[i];
    }
  });
}

Var conv2d_3x3(Var input, Var kernels, Var bias) {
  const ImageDims d = image_dims("conv2d_3x3", input.shape());
  const Shape& ks = kernels.shape();
  if (ks.size() != 4 || ks[2] != 3 || ks[3] != 3 || ks[1] != d.channels) dim_error("conv2d_3x3", input.shape(), ks);
  if (bias.shape() != Shape{ks[0]}) dim_error("conv2d_3x3 bias", ks, bias.shape());
  if (d.height < 3 || d.width < 3) throw DimensionError("conv2d_3x3: spatial size must be at least 3x3");
  const std::size_t c_out = ks[0];
  const std::size_t hw = d.height * d.width;
  const std::size_t patch = d.channels * 9;
  const std::size_t in_stride = d.channels * hw;
  const std::size_t out_stride = c_out * hw;

  Shape out_shape = d.batched ? Shape{d.batch, c_out, d.height, d.width} : Shape{c_out, d.height, d.width};
  Array out(out_shape);
  std::vector<double> cols(patch * hw);
  const double* in = input.value().data().data();
  const double* k = kernels.value().data().data();
  const Array& bv = bias.value();
  for (std::size_t b = 0; b < d.batch; ++b) {
    im2col_3x3(in + b * in_stride, d.channels, d.height, d.width, cols.data());
    double* o = out.data().data() + b * out_stride;
    for (std::size_t co = 0; co < c_out; ++co) std::fill(o + co * hw, o + (co + 1) * hw, bv[co]);
    gemm_nn(k, cols.data(), o, c_out, patch, hw);
  }

  return input.tape->push(
      std::move(out), {input, kernels, bias}, [input, kernels, bias, d, c_out, hw, patch, in_stride, out_stride](
                                                  Tape& t, const Array& g) {
        std::vector<double> cols(patch * hw);
        std::vector<double> dcols(patch * hw);
        const double* in = t.value(input).data().data();
        const double* k = t.value(kernels).data().data();
        for (std::size_t b = 0; b < d.batch; ++b) {
          const double* gb = g.data().data() + b * out_stride;
          if (t.needs_grad(bias)) {
            Array& db = t.grad_buffer(bias);
            for (std::size_t co = 0; co < c_out; ++co) {
              double s = 0.0;
              for (std::size_t i = 0; i < hw; ++i) s += gb[co * hw + i];
              db[co] += s;
            }
          }
          if (t.needs_grad(kernels)) {
            im2col_3x3(in + b * in_stride, d.channels, d.height, d.width, cols.data());
            gemm_nt(gb, cols.data(), t.grad_buffer(kernels).data().data(), c_out, hw, patch);
          }
          if (t.needs_grad(input)) {
            std::fill(dcols.begin(), dcols.end(), 0.0);
            gemm_tn(k, gb, dcols.data(), patch, c_out, hw);
            col2im_3x3(dcols.data(), d.channels, d.height, d.width,
                       t.grad_buffer(input).data().data() + b * in_stride);
          }
        }
      });
}

Var maxpool2(Var input) {
  const ImageDims d = image_dims("maxpool2", input.shape());
  if (d.height % 2 != 0 || d.width % 2 != 0) {
    throw DimensionError("maxpool2: spatial size must be even, got " + to_string(input.shape()));
  }
  const std::size_t oh = d.height / 2, ow = d.width / 2;
  const std::size_t planes = d.batch * d.channels;
  Shape out_shape = d.batched ? Shape{d.batch, d.channels, oh, ow} : Shape{d.channels, oh, ow};
  Array out(out_shape);
  std::vector<std::size_t> argmax(out.size());
  const Array& xv = input.value();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t base = p * d.height * d.width;
        const std::size_t cand[4] = {base + (2 * y) * d.width + 2 * x, base + (2 * y) * d.width + 2 * x + 1,
                                     base + (2 * y + 1) * d.width + 2 * x, base + (2 * y + 1) * d.width + 2 * x + 1};
        std::size_t best = cand[0];
        for (std::size_t c = 1; c < 4; ++c) {
          if (xv[cand[c]] > xv[best]) best = cand[c];
        }
        const std::size_t o = (p * oh + y) * ow + x;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  return input.tape->push(std::move(out), {input}, [input, argmax = std::move(argmax)](Tape& t, const Array& g) {
    Array& gx = t.grad_buffer(input);
    for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
  });
}

Var batchnorm(Var x, Var gamma, Var beta, NormMode mode, const Array& running_mean, const Array& running_var,
              BatchStats* stats) {
  const Shape& xs = x.shape();
  std::size_t batch = 0, channels = 0, spatial = 1;
  if (xs.size() == 2) {
    batch = xs[0];
    channels = xs[1];
  } else if (xs.size() == 4) {
    batch = xs[0];
    channels = xs[1];
    spatial = xs[2] * xs[3];
  } else {
    throw DimensionError("batchnorm: expected [B x F] or [B x C x H x W], got " + to_string(xs));
  }
  if (batch == 0) throw DimensionError("batchnorm: empty batch");
  const Shape cshape{channels};
  if (gamma.shape() != cshape) dim_error("batchnorm gamma", xs, gamma.shape());
  if (beta.shape() != cshape) dim_error("batchnorm beta", xs, beta.shape());
  if (running_mean.shape() != cshape || running_var.shape() != cshape) {
    dim_error("batchnorm running stats", xs, running_mean.shape());
  }

  const Array& xv = x.value();
  const Array& gv = gamma.value();
  const Array& bv = beta.value();
  const double count = static_cast<double>(batch * spatial);
  auto index = [&](std::size_t b, std::size_t c, std::size_t s) { return (b * channels + c) * spatial + s; };

  Array mean(cshape), var(cshape);
  if (mode == NormMode::Train) {
    for (std::size_t c = 0; c < channels; ++c) {
      double m = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < spatial; ++s) m += xv[index(b, c, s)];
      m /= count;
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < spatial; ++s) {
          const double dlt = xv[index(b, c, s)] - m;
          v += dlt * dlt;
        }
      mean[c] = m;
      var[c] = v / count;
    }
    if (stats != nullptr) *stats = BatchStats{mean, var};
  } else {
    mean = running_mean;
    var = running_var;
  }

  Array inv_std(cshape);
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEpsilon);
  Array xhat(xs), y(xs);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = index(b, c, s);
        xhat[i] = (xv[i] - mean[c]) * inv_std[c];
        y[i] = gv[c] * xhat[i] + bv[c];
      }

  return x.tape->push(std::move(y), {x, gamma, beta},
                      [x, gamma, beta, mode, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels,
                       spatial, count](Tape& t, const Array& g) {
                        auto index = [&](std::size_t b, std::size_t c, std::size_t s) {
                          return (b * channels + c) * spatial + s;
                        };
                        const Array& gv = t.value(gamma);
                        for (std::size_t c = 0; c < channels; ++c) {
                          double sum_g = 0.0, sum_gx = 0.0;
                          for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t s = 0; s < spatial; ++s) {
                              const std::size_t i = index(b, c, s);
                              sum_g += g[i];
                              sum_gx += g[i] * xhat[i];
                            }
                          if (t.needs_grad(beta)) t.grad_buffer(beta)[c] += sum_g;
                          if (t.needs_grad(gamma)) t.grad_buffer(gamma)[c] += sum_gx;
                          if (!t.needs_grad(x)) continue;
                          Array& gx = t.grad_buffer(x);
                          const double k = gv[c] * inv_std[c];
                          for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t s = 0; s < spatial; ++s) {
                              const std::size_t i = index(b, c, s);
                              if (mode == NormMode::Train) {
                                gx[i] += k * (g[i] - sum_g / count - xhat[i] * sum_gx / count);
                              } else {
                                gx[i] += k * g[i];
                              }
                            }
                        }
                      });
}

void update_running_stats(Array& running_mean, Array& running_var, const BatchStats& stats) {
  require_same_shape(running_mean, stats.mean, "update_running_stats");
  require_same_shape(running_var, stats.var, "update_running_stats");
  for (std::size_t c = 0; c < running_mean.size(); ++c) {
    running_mean[c] = kBatchNormMomentum * running_mean[c] + (1.0 - kBatchNormMomentum) * stats.mean[c];
    running_var[c] = kBatchNormMomentum * running_var[c] + (1.0 - kBatchNormMomentum) * stats.var[c];
  }
}

Var gru_cell(Var x, Var h, const GruWeights& w) {
  const Shape& xs = x.shape();
  const Shape& hs = h.shape();
  if (xs.size() != 1 || hs.size() != 1) dim_error("gru_cell", xs, hs);
  const std::size_t din = xs[0], dh = hs[0];
  const Shape wshape{dh, din}, ushape{dh, dh}, bshape{dh};
  for (Var v : {w.w_z, w.w_r, w.w_h})
    if (v.shape() != wshape) dim_error("gru_cell input weights", wshape, v.shape());
  for (Var v : {w.u_z, w.u_r, w.u_h})
    if (v.shape() != ushape) dim_error("gru_cell recurrent weights", ushape, v.shape());
  for (Var v : {w.b_z, w.b_r, w.b_h})
    if (v.shape() != bshape) dim_error("gru_cell bias", bshape, v.shape());

  const Array& xv = x.value();
  const Array& hv = h.value();
  auto affine = [&](Var wm, Var um, Var bm, const double* hin) {
    std::vector<double> a(dh);
    const Array& W = wm.value();
    const Array& U = um.value();
    const Array& B = bm.value();
    for (std::size_t i = 0; i < dh; ++i) {
      double s = B[i];
      for (std::size_t j = 0; j < din; ++j) s += W[i * din + j] * xv[j];
      for (std::size_t j = 0; j < dh; ++j) s += U[i * dh + j] * hin[j];
      a[i] = s;
    }
    return a;
  };
  std::vector<double> z = affine(w.w_z, w.u_z, w.b_z, hv.data().data());
  std::vector<double> r = affine(w.w_r, w.u_r, w.b_r, hv.data().data());
  for (std::size_t i = 0; i < dh; ++i) {
    z[i] = sigmoid_scalar(z[i]);
    r[i] = sigmoid_scalar(r[i]);
  }
  std::vector<double> rh(dh);
  for (std::size_t i = 0; i < dh; ++i) rh[i] = r[i] * hv[i];
  std::vector<double> c = affine(w.w_h, w.u_h, w.b_h, rh.data());
  Array out({dh});
  for (std::size_t i = 0; i < dh; ++i) {
    c[i] = std::tanh(c[i]);
    out[i] = (1.0 - z[i]) * c[i] + z[i] * hv[i];
  }

  std::vector<Var> parents{x, h, w.w_z, w.u_z, w.b_z, w.w_r, w.u_r, w.b_r, w.w_h, w.u_h, w.b_h};
  return x.tape->push(
      std::move(out), parents,
      [x, h, w, din, dh, z = std::move(z), r = std::move(r), c = std::move(c), rh = std::move(rh)](Tape& t,
                                                                                                  const Array& g) {
        const Array& xv = t.value(x);
        const Array& hv = t.value(h);
        std::vector<double> dh_total(dh, 0.0), dx(din, 0.0);
        std::vector<double> da_z(dh), da_r(dh), da_c(dh);
        for (std::size_t i = 0; i < dh; ++i) {
          da_z[i] = g[i] * (hv[i] - c[i]) * z[i] * (1.0 - z[i]);
          da_c[i] = g[i] * (1.0 - z[i]) * (1.0 - c[i] * c[i]);
          dh_total[i] += g[i] * z[i];
        }
        // Candidate branch; its recurrent input is r * h.
        const Array& Uh = t.value(w.u_h);
        std::vector<double> d_rh(dh, 0.0);
        for (std::size_t i = 0; i < dh; ++i)
          for (std::size_t j = 0; j < dh; ++j) d_rh[j] += Uh[i * dh + j] * da_c[i];
        for (std::size_t j = 0; j < dh; ++j) {
          da_r[j] = d_rh[j] * hv[j] * r[j] * (1.0 - r[j]);
          dh_total[j] += d_rh[j] * r[j];
        }

        auto backprop_gate = [&](Var wm, Var um, Var bm, const std::vector<double>& da, const double* hin,
                                 bool to_h) {
          const Array& W = t.value(wm);
          const Array& U = t.value(um);
          if (t.needs_grad(wm)) {
            Array& gw = t.grad_buffer(wm);
            for (std::size_t i = 0; i < dh; ++i)
              for (std::size_t j = 0; j < din; ++j) gw[i * din + j] += da[i] * xv[j];
          }
          if (t.needs_grad(um)) {
            Array& gu = t.grad_buffer(um);
            for (std::size_t i = 0; i < dh; ++i)
              for (std::size_t j = 0; j < dh; ++j) gu[i * dh + j] += da[i] * hin[j];
          }
          if (t.needs_grad(bm)) {
            Array& gb = t.grad_buffer(bm);
            for (std::size_t i = 0; i < dh; ++i) gb[i] += da[i];
          }
          for (std::size_t i = 0; i < dh; ++i)
            for (std::size_t j = 0; j < din; ++j) dx[j] += W[i * din + j] * da[i];
          if (to_h) {
            for (std::size_t i = 0; i < dh; ++i)
              for (std::size_t j = 0; j < dh; ++j) dh_total[j] += U[i * dh + j] * da[i];
          }
        };
        backprop_gate(w.w_h, w.u_h, w.b_h, da_c, rh.data(), false);
        backprop_gate(w.w_z, w.u_z, w.b_z, da_z, hv.data().data(), true);
        backprop_gate(w.w_r, w.u_r, w.b_r, da_r, hv.data().data(), true);

        if (t.needs_grad(x)) {
          Array& gx = t.grad_buffer(x);
          for (std::size_t j = 0; j < din; ++j) gx[j] += dx[j];
        }
        if (t.needs_grad(h)) {
          Array& gh = t.grad_buffer(h);
          for (std::size_t j = 0; j < dh; ++j) gh[j] += dh_total[j];
        }
      });
}

Var softmax(Var logits) {
  const Array& lv = logits.value();
  if (lv.rank() != 1) throw DimensionError("softmax: expected a vector, got " + to_string(lv.shape()));
  const double mx = *std::max_element(lv.data().begin(), lv.data().end());
  Array p(lv.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) {
    p[i] = std::exp(lv[i] - mx);
    z += p[i];
  }
  for (std::size_t i = 0; i < p.size(); ++i) p[i] /= z;
  Array saved = p;
  return logits.tape->push(std::move(p), {logits}, [logits, saved = std::move(saved)](Tape& t, const Array& g) {
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * saved[i];
    Array& gl = t.grad_buffer(logits);
    for (std::size_t i = 0; i < g.size(); ++i) gl[i] += saved[i] * (g[i] - dot);
  });
}

Var log_softmax(Var logits) {
  const Array& lv = logits.value();
  if (lv.rank() != 1) throw DimensionError("log_softmax: expected a vector, got " + to_string(lv.shape()));
  const double mx = *std::max_element(lv.data().begin(), lv.data().end());
  double z = 0.0;
  for (double v : lv.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  Array out(lv.shape());
  Array probs(lv.shape());
  for (std::size_t i = 0; i < lv.size(); ++i) {
    out[i] = lv[i] - lse;
    probs[i] = std::exp(out[i]);
  }
  return logits.tape->push(std::move(out), {logits}, [logits, probs = std::move(probs)](Tape& t, const Array& g) {
    double total = 0.0;
    for (double v : g.data()) total += v;
    Array& gl = t.grad_buffer(logits);
    for (std::size_t i = 0; i < g.size(); ++i) gl[i] += g[i] - probs[i] * total;
  });
}

Var euclidean_distance(Var a, Var b) {
  same_shape("euclidean_distance", a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  const double dist = std::sqrt(s);
  return a.tape->push(Array::scalar(dist), {a, b}, [a, b, dist](Tape& t, const Array& g) {
    if (dist == 0.0) return;
    const Array& av = t.value(a);
    const Array& bv = t.value(b);
    const double k = g[0] / dist;
    if (t.needs_grad(a)) {
      Array& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += k * (av[i] - bv[i]);
    }
    if (t.needs_grad(b)) {
      Array& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= k * (av[i] - bv[i]);
    }
  });
}

Var running_mean(Var mean, Var x, std::size_t count) {
  same_shape("running_mean", mean, x);
  const double c = static_cast<double>(count);
  Array out = mean.value();
  const Array& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] * c + xv[i]) / (c + 1.0);
  return mean.tape->push(std::move(out), {mean, x}, [mean, x, c](Tape& t, const Array& g) {
    if (t.needs_grad(mean)) {
      Array& gm = t.grad_buffer(mean);
      for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i] * c / (c + 1.0);
    }
    if (t.needs_grad(x)) {
      Array& gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / (c + 1.0);
    }
  });
}

}  // namespace cmem::ops
