#include "ufe/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace ufe::ops {

namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <class T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

struct ConvGeometry {
  int channels, height, width, kernel, stride, padding, out_h, out_w;
};

// cols: [C*k*k, out_h*out_w]
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const int out_hw = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * out_hw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = x + (c * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const int out_hw = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * out_hw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = dx + (c * g.height + iy) * g.width;
          const T* src = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Per-axis bilinear taps for align-corners = false.
struct AxisTaps {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

AxisTaps bilinear_taps(int in, int out, int factor) {
  AxisTaps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.frac.resize(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    taps.lo[o] = lo;
    taps.hi[o] = std::min(lo + 1, in - 1);
    taps.frac[o] = src - lo;
  }
  return taps;
}

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

template <class T>
Broadcast broadcast_rule(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.numel() == 1) return Broadcast::kLeftScalar;
  if (b.numel() == 1) return Broadcast::kRightScalar;
  throw ShapeError(std::string(what) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

}  // namespace

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const int c_out = weight.dim(0), c_in = weight.dim(1), k = weight.dim(2);
  if (weight.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square and odd, got " + shape_str(weight.shape()));
  }
  if (input.dim(0) != c_in) {
    throw ShapeError("conv2d: input " + shape_str(input.shape()) + " has " +
                     std::to_string(input.dim(0)) + " channels, weight " +
                     shape_str(weight.shape()) + " expects " + std::to_string(c_in));
  }
  if (bias.shape() != Shape{c_out}) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(c_out) + " output channels");
  }
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1, padding >= 0");
  const int h = input.dim(1), w = input.dim(2);
  const int span_h = h + 2 * padding - k, span_w = w + 2 * padding - k;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: input " + shape_str(input.shape()) + " is smaller than kernel " +
                     std::to_string(k) + " with padding " + std::to_string(padding));
  }
  ConvGeometry g{c_in, h, w, k, stride, padding, span_h / stride + 1, span_w / stride + 1};
  const int out_hw = g.out_h * g.out_w;
  const int patch = c_in * k * k;
  const bool direct = (k == 1 && stride == 1 && padding == 0);

  std::vector<T> cols;
  if (!direct) {
    cols.resize(static_cast<std::size_t>(patch) * out_hw);
    im2col(input.values().data(), g, cols.data());
  }
  const T* col_ptr = direct ? input.values().data() : cols.data();

  std::vector<T> out(static_cast<std::size_t>(c_out) * out_hw);
  MatMap<T> out_m(out.data(), c_out, out_hw);
  ConstMatMap<T> w_m(weight.values().data(), c_out, patch);
  ConstMatMap<T> col_m(col_ptr, patch, out_hw);
  out_m.noalias() = w_m * col_m;
  const T* b = bias.values().data();
  for (int co = 0; co < c_out; ++co) out_m.row(co).array() += b[co];

  auto backward_fn = [g, c_out, patch, out_hw, direct, cols = std::move(cols)](Node<T>& self) {
    auto& x = *self.parents[0];
    auto& wt = *self.parents[1];
    auto& bs = *self.parents[2];
    ConstMatMap<T> dout(self.grad.data(), c_out, out_hw);
    const T* col_ptr = direct ? x.data.data() : cols.data();
    if (wt.requires_grad) {
      wt.ensure_grad();
      MatMap<T> dw(wt.grad.data(), c_out, patch);
      dw.noalias() += dout * ConstMatMap<T>(col_ptr, patch, out_hw).transpose();
    }
    if (bs.requires_grad) {
      bs.ensure_grad();
      // Plain loop: Eigen's vectorised sum peels by address, so its rounding would vary.
      for (int co = 0; co < c_out; ++co) {
        const T* row = self.grad.data() + static_cast<std::size_t>(co) * out_hw;
        T acc = 0;
        for (int i = 0; i < out_hw; ++i) acc += row[i];
        bs.grad[co] += acc;
      }
    }
    if (x.requires_grad) {
      x.ensure_grad();
      ConstMatMap<T> w_m(wt.data.data(), c_out, patch);
      if (direct) {
        MatMap<T> dx(x.grad.data(), patch, out_hw);
        dx.noalias() += w_m.transpose() * dout;
      } else {
        RowMatrix<T> dcols = w_m.transpose() * dout;
        col2im(dcols.data(), g, x.grad.data());
      }
    }
  };
  return make_op_result<T>({c_out, g.out_h, g.out_w}, std::move(out), {input, weight, bias},
                           std::move(backward_fn), "conv2d");
}

template <class T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& input, int factor) {
  if (factor < 1) throw std::invalid_argument("upsample_bilinear: factor must be >= 1");
  require_rank(input, 3, "upsample_bilinear");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int oh = h * factor, ow = w * factor;
  AxisTaps ty = bilinear_taps(h, oh, factor);
  AxisTaps tx = bilinear_taps(w, ow, factor);
  std::vector<T> out(static_cast<std::size_t>(c) * oh * ow);
  const T* x = input.values().data();
  for (int ch = 0; ch < c; ++ch) {
    const T* plane = x + static_cast<std::size_t>(ch) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      const T* r0 = plane + ty.lo[oy] * w;
      const T* r1 = plane + ty.hi[oy] * w;
      for (int ox = 0; ox < ow; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const int x0 = tx.lo[ox], x1 = tx.hi[ox];
        const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
        dst[oy * ow + ox] = top + fy * (bot - top);
      }
    }
  }
  auto backward_fn = [c, h, w, oh, ow, ty, tx](Node<T>& self) {
    auto& in = *self.parents[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      T* g = in.grad.data() + static_cast<std::size_t>(ch) * h * w;
      const T* go = self.grad.data() + static_cast<std::size_t>(ch) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        const T fy = static_cast<T>(ty.frac[oy]);
        T* r0 = g + ty.lo[oy] * w;
        T* r1 = g + ty.hi[oy] * w;
        for (int ox = 0; ox < ow; ++ox) {
          const T fx = static_cast<T>(tx.frac[ox]);
          const T v = go[oy * ow + ox];
          const int x0 = tx.lo[ox], x1 = tx.hi[ox];
          r0[x0] += v * (1 - fy) * (1 - fx);
          r0[x1] += v * (1 - fy) * fx;
          r1[x0] += v * fy * (1 - fx);
          r1[x1] += v * fy * fx;
        }
      }
    }
  };
  return make_op_result<T>({c, oh, ow}, std::move(out), {input}, std::move(backward_fn),
                           "upsample_bilinear");
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Broadcast rule = broadcast_rule(a, b, "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  Shape shape = rule == Broadcast::kLeftScalar ? b.shape() : a.shape();
  std::vector<T> out(shape_numel(shape));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[rule == Broadcast::kLeftScalar ? 0 : i] + bv[rule == Broadcast::kRightScalar ? 0 : i];
  }
  auto backward_fn = [rule](Node<T>& self) {
    for (int side = 0; side < 2; ++side) {
      auto& p = *self.parents[side];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      const bool reduced = (side == 0 && rule == Broadcast::kLeftScalar) ||
                           (side == 1 && rule == Broadcast::kRightScalar);
      if (reduced) {
        T s = 0;
        for (T g : self.grad) s += g;
        p.grad[0] += s;
      } else {
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
      }
    }
  };
  return make_op_result<T>(std::move(shape), std::move(out), {a, b}, std::move(backward_fn), "add");
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return add(a, scale(b, T(-1)));
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Broadcast rule = broadcast_rule(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  Shape shape = rule == Broadcast::kLeftScalar ? b.shape() : a.shape();
  std::vector<T> out(shape_numel(shape));
  auto ai = [rule](std::size_t i) { return rule == Broadcast::kLeftScalar ? 0 : i; };
  auto bi = [rule](std::size_t i) { return rule == Broadcast::kRightScalar ? 0 : i; };
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[ai(i)] * bv[bi(i)];
  auto backward_fn = [ai, bi](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[ai(i)] += self.grad[i] * pb.data[bi(i)];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[bi(i)] += self.grad[i] * pa.data[ai(i)];
    }
  };
  return make_op_result<T>(std::move(shape), std::move(out), {a, b}, std::move(backward_fn), "mul");
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.values());
  for (T& v : out) v *= factor;
  auto backward_fn = [factor](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * factor;
  };
  return make_op_result<T>(a.shape(), std::move(out), {a}, std::move(backward_fn), "scale");
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.values());
  for (T& v : out) v = v > T(0) ? v : T(0);
  auto backward_fn = [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (p.data[i] > T(0)) p.grad[i] += self.grad[i];
    }
  };
  return make_op_result<T>(x.shape(), std::move(out), {x}, std::move(backward_fn), "relu");
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Split on sign so exp never overflows.
    if (xv[i] >= 0) {
      out[i] = T(1) / (T(1) + std::exp(-xv[i]));
    } else {
      const T e = std::exp(xv[i]);
      out[i] = e / (T(1) + e);
    }
  }
  auto backward_fn = [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T s = self.data[i];
      p.grad[i] += self.grad[i] * s * (T(1) - s);
    }
  };
  return make_op_result<T>(x.shape(), std::move(out), {x}, std::move(backward_fn), "sigmoid");
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  auto backward_fn = [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (T& g : p.grad) g += self.grad[0];
  };
  return make_op_result<T>({1}, {s}, {x}, std::move(backward_fn), "sum");
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  const T n = static_cast<T>(x.numel());
  T s = 0;
  for (T v : x.values()) s += v;
  auto backward_fn = [n](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const T g = self.grad[0] / n;
    for (T& v : p.grad) v += g;
  };
  return make_op_result<T>({1}, {s / n}, {x}, std::move(backward_fn), "mean");
}

template <class T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  int channels = 0;
  for (const auto& p : parts) {
    require_rank(p, 3, "concat_channels");
    if (p.dim(1) != parts[0].dim(1) || p.dim(2) != parts[0].dim(2)) {
      throw ShapeError("concat_channels: spatial mismatch " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    }
    channels += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(channels) * parts[0].dim(1) * parts[0].dim(2));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  auto backward_fn = [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& pp : self.parents) {
      auto& p = *pp;
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t i = 0; i < p.data.size(); ++i) p.grad[i] += self.grad[offset + i];
      }
      offset += p.data.size();
    }
  };
  return make_op_result<T>({channels, parts[0].dim(1), parts[0].dim(2)}, std::move(out), parts,
                           std::move(backward_fn), "concat_channels");
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto backward_fn = [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  };
  return make_op_result<T>(shape, x.values(), {x}, std::move(backward_fn), "reshape");
}

template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  require_rank(x, 1, "linear input");
  require_rank(weight, 2, "linear weight");
  const int m = weight.dim(0), n = weight.dim(1);
  if (x.dim(0) != n || bias.shape() != Shape{m}) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + ", weight " +
                     shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()) +
                     " are inconsistent");
  }
  std::vector<T> out(m);
  for (int i = 0; i < m; ++i) {
    T acc = bias[i];
    const T* row = weight.values().data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
  auto backward_fn = [m, n](Node<T>& self) {
    auto& xv = *self.parents[0];
    auto& wv = *self.parents[1];
    auto& bv = *self.parents[2];
    if (xv.requires_grad) {
      xv.ensure_grad();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) xv.grad[j] += self.grad[i] * wv.data[i * n + j];
      }
    }
    if (wv.requires_grad) {
      wv.ensure_grad();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) wv.grad[i * n + j] += self.grad[i] * xv.data[j];
      }
    }
    if (bv.requires_grad) {
      bv.ensure_grad();
      for (int i = 0; i < m; ++i) bv.grad[i] += self.grad[i];
    }
  };
  return make_op_result<T>({m}, std::move(out), {x, weight, bias}, std::move(backward_fn), "linear");
}

template <class T>
BasicTensor<T> modulate(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                        const BasicTensor<T>& beta) {
  require_rank(x, 3, "modulate");
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("modulate: gamma " + shape_str(gamma.shape()) + " / beta " +
                     shape_str(beta.shape()) + " must have " + std::to_string(c) + " entries");
  }
  std::vector<T> out(x.numel());
  for (int ch = 0; ch < c; ++ch) {
    const T s = T(1) + gamma[ch], b = beta[ch];
    for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] = s * x[ch * hw + i] + b;
  }
  auto backward_fn = [c, hw](Node<T>& self) {
    auto& xv = *self.parents[0];
    auto& gv = *self.parents[1];
    auto& bv = *self.parents[2];
    if (xv.requires_grad) xv.ensure_grad();
    if (gv.requires_grad) gv.ensure_grad();
    if (bv.requires_grad) bv.ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      const T s = T(1) + gv.data[ch];
      T dg = 0, db = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        const T g = self.grad[ch * hw + i];
        if (xv.requires_grad) xv.grad[ch * hw + i] += g * s;
        dg += g * xv.data[ch * hw + i];
        db += g;
      }
      if (gv.requires_grad) gv.grad[ch] += dg;
      if (bv.requires_grad) bv.grad[ch] += db;
    }
  };
  return make_op_result<T>(x.shape(), std::move(out), {x, gamma, beta}, std::move(backward_fn),
                           "modulate");
}

#define UFE_INSTANTIATE(T)                                                                         \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                 const BasicTensor<T>&, int, int);                                \
  template BasicTensor<T> upsample_bilinear(const BasicTensor<T>&, int);                          \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                        \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                            \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                         \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                             \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                            \
  template BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>&);                    \
  template BasicTensor<T> reshape(const BasicTensor<T>&, const Shape&);                           \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                 const BasicTensor<T>&);                                          \
  template BasicTensor<T> modulate(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                   const BasicTensor<T>&);

UFE_INSTANTIATE(float)
UFE_INSTANTIATE(double)

#undef UFE_INSTANTIATE

}  // namespace ufe::ops
