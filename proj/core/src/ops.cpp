#include "milnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace milnet::ops {
namespace {

void require_rank(const Var& v, std::size_t rank, const char* op, const char* what) {
  if (v.value().rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                                ", got " + shape_str(v.shape()));
  }
}

void require_same_graph(const Var& a, const Var& b) {
  if (a.graph != b.graph) throw std::logic_error("operands belong to different graphs");
}

// Output index range [lo, hi) for which out*stride + k - pad lands inside [0, in).
struct Span {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

Span valid_outputs(long k, long pad, long stride, long in, long out) {
  long lo = 0;
  if (pad - k > 0) lo = (pad - k + stride - 1) / stride;
  const long last = in - 1 + pad - k;
  if (last < 0) return {};
  long hi = std::min(out, last / stride + 1);
  if (hi <= lo) return {};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename F>
Var unary(Var input, Tensor out, F&& local_grad) {
  Graph& g = *input.graph;
  const auto in_id = input.id;
  return g.record(std::move(out), {in_id}, [in_id, local_grad](Graph& gr, std::size_t self) {
    const Tensor& up = gr.grad(self);
    const Tensor& x = gr.value(in_id);
    const Tensor& y = gr.value(self);
    Tensor& gx = gr.grad_buffer(in_id);
    for (std::size_t i = 0; i < up.numel(); ++i) gx[i] += up[i] * local_grad(x[i], y[i]);
  });
}

}  // namespace

Var conv2d(Var input, Var kernel, Conv2dParams params) {
  require_same_graph(input, kernel);
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  const std::size_t n_batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c_in) {
    throw std::invalid_argument("conv2d: input " + shape_str(x.shape()) + " has " + std::to_string(c_in) +
                                " channels but kernel " + shape_str(w.shape()) + " expects " +
                                std::to_string(w.dim(1)));
  }
  const std::size_t s = params.stride, p = params.padding;
  if (s == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (h + 2 * p < kh || wd + 2 * p < kw) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                                shape_str(x.shape()));
  }
  const std::size_t oh = (h + 2 * p - kh) / s + 1, ow = (wd + 2 * p - kw) / s + 1;

  std::vector<Span> ys(kh), xs(kw);
  for (std::size_t k = 0; k < kh; ++k) ys[k] = valid_outputs(long(k), long(p), long(s), long(h), long(oh));
  for (std::size_t k = 0; k < kw; ++k) xs[k] = valid_outputs(long(k), long(p), long(s), long(wd), long(ow));

  Tensor out(Shape{n_batch, c_out, oh, ow}, 0.0);
  const double* xin = x.raw();
  const double* wk = w.raw();
  double* yo = out.raw();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t o = 0; o < c_out; ++o) {
      double* plane_out = yo + (n * c_out + o) * oh * ow;
      for (std::size_t c = 0; c < c_in; ++c) {
        const double* plane_in = xin + (n * c_in + c) * h * wd;
        const double* wrow = wk + ((o * c_in + c) * kh) * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv = wrow[ky * kw + kx];
            const Span sx = xs[kx];
            for (std::size_t oy = ys[ky].lo; oy < ys[ky].hi; ++oy) {
              const double* row_in = plane_in + (oy * s + ky - p) * wd;
              double* row_out = plane_out + oy * ow;
              for (std::size_t ox = sx.lo; ox < sx.hi; ++ox) row_out[ox] += wv * row_in[ox * s + kx - p];
            }
          }
        }
      }
    }
  }

  const auto in_id = input.id, k_id = kernel.id;
  return input.graph->record(std::move(out), {in_id, k_id},
                             [=](Graph& g, std::size_t self) {
                               const double* up = g.grad(self).raw();
                               const double* xv = g.value(in_id).raw();
                               const double* wv_all = g.value(k_id).raw();
                               double* gx = g.requires_grad(in_id) ? g.grad_buffer(in_id).raw() : nullptr;
                               double* gw = g.requires_grad(k_id) ? g.grad_buffer(k_id).raw() : nullptr;
                               for (std::size_t n = 0; n < n_batch; ++n) {
                                 for (std::size_t o = 0; o < c_out; ++o) {
                                   const double* plane_up = up + (n * c_out + o) * oh * ow;
                                   for (std::size_t c = 0; c < c_in; ++c) {
                                     const std::size_t in_off = (n * c_in + c) * h * wd;
                                     const std::size_t w_off = ((o * c_in + c) * kh) * kw;
                                     for (std::size_t ky = 0; ky < kh; ++ky) {
                                       for (std::size_t kx = 0; kx < kw; ++kx) {
                                         const Span sx = xs[kx];
                                         const double wv = wv_all[w_off + ky * kw + kx];
                                         double acc = 0.0;
                                         for (std::size_t oy = ys[ky].lo; oy < ys[ky].hi; ++oy) {
                                           const std::size_t row = in_off + (oy * s + ky - p) * wd;
                                           const double* row_up = plane_up + oy * ow;
                                           if (gx) {
                                             double* row_gx = gx + row;
                                             for (std::size_t ox = sx.lo; ox < sx.hi; ++ox) row_gx[ox * s + kx - p] += wv * row_up[ox];
                                           }
                                           const double* row_in = xv + row;
                                           for (std::size_t ox = sx.lo; ox < sx.hi; ++ox) acc += row_up[ox] * row_in[ox * s + kx - p];
                                         }
                                         if (gw) gw[w_off + ky * kw + kx] += acc;
                                       }
                                     }
                                   }
                                 }
                               }
                             });
}

Var add_channel_bias(Var input, Var bias) {
  require_same_graph(input, bias);
  require_rank(input, 4, "add_channel_bias", "input");
  const Tensor& x = input.value();
  const std::size_t channels = x.dim(1);
  if (bias.value().numel() != channels) {
    throw std::invalid_argument("add_channel_bias: bias " + shape_str(bias.shape()) + " does not match channels of " +
                                shape_str(x.shape()));
  }
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor out = x;
  const Tensor& b = bias.value();
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      double* dst = out.raw() + (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += b[c];
    }
  const auto in_id = input.id, b_id = bias.id;
  const std::size_t n_batch = x.dim(0);
  return input.graph->record(std::move(out), {in_id, b_id}, [=](Graph& g, std::size_t self) {
    const Tensor& up = g.grad(self);
    if (g.requires_grad(in_id)) {
      Tensor& gx = g.grad_buffer(in_id);
      for (std::size_t i = 0; i < up.numel(); ++i) gx[i] += up[i];
    }
    if (g.requires_grad(b_id)) {
      Tensor& gb = g.grad_buffer(b_id);
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t c = 0; c < channels; ++c) {
          const double* src = up.raw() + (n * channels + c) * plane;
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += src[i];
          gb[c] += acc;
        }
    }
  });
}

Var maxpool2d(Var input, std::size_t window, std::size_t stride) {
  require_rank(input, 4, "maxpool2d", "input");
  const Tensor& x = input.value();
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (window == 0 || stride == 0) throw std::invalid_argument("maxpool2d: window and stride must be positive");
  if (window > h || window > w) {
    throw std::invalid_argument("maxpool2d: window " + std::to_string(window) + " larger than input " +
                                shape_str(x.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  const std::size_t planes = x.dim(0) * x.dim(1);
  Tensor out(Shape{x.dim(0), x.dim(1), oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = x.raw() + pl * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = (oy * stride + dy) * w + ox * stride + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = (pl * oh + oy) * ow + ox;
        out[o] = src[best];
        argmax[o] = pl * h * w + best;
        input.graph->note_branch(best);
      }
  }
  const auto in_id = input.id;
  return input.graph->record(std::move(out), {in_id}, [in_id, argmax = std::move(argmax)](Graph& g, std::size_t self) {
    const Tensor& up = g.grad(self);
    Tensor& gx = g.grad_buffer(in_id);
    for (std::size_t i = 0; i < up.numel(); ++i) gx[argmax[i]] += up[i];
  });
}

Var relu(Var input) {
  Tensor out = input.value();
  for (auto& v : out.data()) {
    input.graph->note_branch(v > 0.0);
    v = v > 0.0 ? v : 0.0;
  }
  return unary(input, std::move(out), [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var input) {
  Tensor out = input.value();
  for (auto& v : out.data()) v = stable_sigmoid(v);
  return unary(input, std::move(out), [](double, double y) { return y * (1.0 - y); });
}

Var affine_channel(Var input, Var weight, Var bias) {
  require_same_graph(input, weight);
  require_same_graph(input, bias);
  require_rank(input, 4, "affine_channel", "input");
  const Tensor& x = input.value();
  const std::size_t n_batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (weight.value().rank() != 1 || weight.value().numel() != channels) {
    throw std::invalid_argument("affine_channel: weight " + shape_str(weight.shape()) + " does not match channels of " +
                                shape_str(x.shape()));
  }
  if (bias.value().numel() != 1) {
    throw std::invalid_argument("affine_channel: bias must hold one value, got " + shape_str(bias.shape()));
  }
  const Tensor& a = weight.value();
  const double b = bias.value()[0];
  Tensor out(Shape{n_batch, x.dim(2), x.dim(3)}, b);
  for (std::size_t n = 0; n < n_batch; ++n) {
    double* dst = out.raw() + n * plane;
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src = x.raw() + (n * channels + c) * plane;
      const double ac = a[c];
      for (std::size_t i = 0; i < plane; ++i) dst[i] += ac * src[i];
    }
  }
  const auto in_id = input.id, w_id = weight.id, b_id = bias.id;
  return input.graph->record(std::move(out), {in_id, w_id, b_id}, [=](Graph& g, std::size_t self) {
    const Tensor& up = g.grad(self);
    const Tensor& xv = g.value(in_id);
    const Tensor& av = g.value(w_id);
    if (g.requires_grad(in_id)) {
      Tensor& gx = g.grad_buffer(in_id);
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t c = 0; c < channels; ++c) {
          double* dst = gx.raw() + (n * channels + c) * plane;
          const double* u = up.raw() + n * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[i] += av[c] * u[i];
        }
    }
    if (g.requires_grad(w_id)) {
      Tensor& ga = g.grad_buffer(w_id);
      for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t c = 0; c < channels; ++c) {
          const double* src = xv.raw() + (n * channels + c) * plane;
          const double* u = up.raw() + n * plane;
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += u[i] * src[i];
          ga[c] += acc;
        }
    }
    if (g.requires_grad(b_id)) {
      double acc = 0.0;
      for (double u : up.data()) acc += u;
      g.grad_buffer(b_id)[0] += acc;
    }
  });
}

Var reshape(Var input, Shape shape) {
  Tensor out = input.value().reshaped(std::move(shape));
  return unary(input, std::move(out), [](double, double) { return 1.0; });
}

Var clamp(Var input, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
  Tensor out = input.value();
  for (auto& v : out.data()) {
    input.graph->note_branch(v < lo ? 0 : v > hi ? 2 : 1);
    v = std::clamp(v, lo, hi);
  }
  return unary(input, std::move(out), [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var one_minus(Var input) {
  Tensor out = input.value();
  for (auto& v : out.data()) v = 1.0 - v;
  return unary(input, std::move(out), [](double, double) { return -1.0; });
}

Var log(Var input) {
  Tensor out = input.value();
  for (auto& v : out.data()) {
    if (!(v > 0.0)) throw std::domain_error("log of nonpositive value " + std::to_string(v));
    v = std::log(v);
  }
  return unary(input, std::move(out), [](double x, double) { return 1.0 / x; });
}

Var scale(Var input, double factor) {
  Tensor out = input.value();
  for (auto& v : out.data()) v *= factor;
  return unary(input, std::move(out), [factor](double, double) { return factor; });
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const auto a_id = a.id, b_id = b.id;
  return a.graph->record(std::move(out), {a_id, b_id}, [a_id, b_id](Graph& g, std::size_t self) {
    const Tensor& up = g.grad(self);
    for (auto id : {a_id, b_id}) {
      if (!g.requires_grad(id)) continue;
      Tensor& gx = g.grad_buffer(id);
      for (std::size_t i = 0; i < up.numel(); ++i) gx[i] += up[i];
    }
  });
}

Var weighted_sum(Var input, const Tensor& weights) {
  if (weights.shape() != input.shape()) {
    throw std::invalid_argument("weighted_sum: weights " + shape_str(weights.shape()) + " do not match input " +
                                shape_str(input.shape()));
  }
  const Tensor& x = input.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += weights[i] * x[i];
  const auto in_id = input.id;
  return input.graph->record(Tensor::scalar(acc), {in_id}, [in_id, weights](Graph& g, std::size_t self) {
    const double up = g.grad(self)[0];
    Tensor& gx = g.grad_buffer(in_id);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += up * weights[i];
  });
}

Var reduce_sum(Var input) {
  const Tensor& x = input.value();
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const auto in_id = input.id;
  return input.graph->record(Tensor::scalar(acc), {in_id}, [in_id](Graph& g, std::size_t self) {
    const double up = g.grad(self)[0];
    Tensor& gx = g.grad_buffer(in_id);
    for (auto& v : gx.data()) v += up;
  });
}

Var l1_norm(Var input) {
  const Tensor& x = input.value();
  double acc = 0.0;
  for (double v : x.data()) acc += std::abs(v);
  const auto in_id = input.id;
  return input.graph->record(Tensor::scalar(acc), {in_id}, [in_id](Graph& g, std::size_t self) {
    const double up = g.grad(self)[0];
    const Tensor& xv = g.value(in_id);
    Tensor& gx = g.grad_buffer(in_id);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += up * ((xv[i] > 0.0) - (xv[i] < 0.0));
  });
}

Var l2_norm_sq(Var input) {
  const Tensor& x = input.value();
  double acc = 0.0;
  for (double v : x.data()) acc += v * v;
  const auto in_id = input.id;
  return input.graph->record(Tensor::scalar(acc), {in_id}, [in_id](Graph& g, std::size_t self) {
    const double up = g.grad(self)[0];
    const Tensor& xv = g.value(in_id);
    Tensor& gx = g.grad_buffer(in_id);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += 2.0 * up * xv[i];
  });
}

SortResult sort_descending(Var input) {
  const Tensor& x = input.value();
  if (x.numel() == 0) throw std::invalid_argument("sort_descending: empty input");
  if (x.rank() != 1 && x.rank() != 2) {
    throw std::invalid_argument("sort_descending: expected a vector or [bags, instances], got " + shape_str(x.shape()));
  }
  const std::size_t m = x.shape().back();
  const std::size_t rows = x.numel() / m;
  Tensor out(x.shape());
  std::vector<std::size_t> perm(x.numel());
  std::vector<std::size_t> order(m);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.raw() + r * m;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    for (std::size_t j = 0; j < m; ++j) {
      out[r * m + j] = row[order[j]];
      perm[r * m + j] = order[j];
      input.graph->note_branch(order[j]);
    }
  }
  const auto in_id = input.id;
  Var sorted = input.graph->record(std::move(out), {in_id}, [in_id, perm, m](Graph& g, std::size_t self) {
    const Tensor& up = g.grad(self);
    Tensor& gx = g.grad_buffer(in_id);
    for (std::size_t i = 0; i < up.numel(); ++i) gx[(i / m) * m + perm[i]] += up[i];
  });
  return SortResult{sorted, std::move(perm)};
}

}  // namespace milnet::ops
