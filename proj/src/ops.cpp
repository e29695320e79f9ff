#include "hssdct/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "hssdct/error.hpp"

namespace hssdct {

namespace {

using Index = Eigen::Index;

template <typename MA, typename MB, typename MC>
void gemm_acc(const MA& a, bool ta, const MB& b, bool tb, MC& c) {
  if (!ta && !tb) {
    c.noalias() += a * b;
  } else if (ta && !tb) {
    c.noalias() += a.transpose() * b;
  } else if (!ta && tb) {
    c.noalias() += a * b.transpose();
  } else {
    c.noalias() += a.transpose() * b.transpose();
  }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

/// table[i * k + t] = reflect(i + t - pad)
std::vector<std::size_t> reflect_table(std::size_t n, std::size_t k, std::size_t pad) {
  std::vector<std::size_t> table(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      table[i * k + t] = reflect_index(static_cast<long>(i + t) - static_cast<long>(pad),
                                       static_cast<long>(n));
    }
  }
  return table;
}

}  // namespace

std::size_t reflect_index(long x, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  x %= period;
  if (x < 0) x += period;
  if (x >= n) x = period - x;
  return static_cast<std::size_t>(x);
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul(a, b, false, false); }

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool batched = sa.size() == 3;
  if (!((sa.size() == 2 && sb.size() == 2) || (sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0]))) {
    throw DimensionError("matmul: incompatible ranks " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t batch = batched ? sa[0] : 1;
  const std::size_t ra = sa[sa.size() - 2], ca = sa[sa.size() - 1];
  const std::size_t rb = sb[sb.size() - 2], cb = sb[sb.size() - 1];
  const std::size_t m = transpose_a ? ca : ra;
  const std::size_t k = transpose_a ? ra : ca;
  const std::size_t kb = transpose_b ? cb : rb;
  const std::size_t n = transpose_b ? rb : cb;
  if (k != kb) {
    throw DimensionError("matmul: inner extents disagree for " + shape_str(sa) + " and " +
                         shape_str(sb));
  }
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  std::vector<double> out(batch * m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatrixMap am(av.data() + i * ra * ca, Index(ra), Index(ca));
    ConstMatrixMap bm(bv.data() + i * rb * cb, Index(rb), Index(cb));
    MatrixMap cm(out.data() + i * m * n, Index(m), Index(n));
    gemm_acc(am, transpose_a, bm, transpose_b, cm);
  }
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [a, b, transpose_a, transpose_b, batch, ra, ca, rb, cb, m, n](
                         std::span<const double> g) mutable {
                       const auto av = a.values();
                       const auto bv = b.values();
                       for (std::size_t i = 0; i < batch; ++i) {
                         ConstMatrixMap gm(g.data() + i * m * n, Index(m), Index(n));
                         ConstMatrixMap am(av.data() + i * ra * ca, Index(ra), Index(ca));
                         ConstMatrixMap bm(bv.data() + i * rb * cb, Index(rb), Index(cb));
                         if (a.requires_grad()) {
                           MatrixMap da(a.grad_sink().data() + i * ra * ca, Index(ra), Index(ca));
                           if (!transpose_a) {
                             gemm_acc(gm, false, bm, !transpose_b, da);
                           } else {
                             gemm_acc(bm, transpose_b, gm, true, da);
                           }
                         }
                         if (b.requires_grad()) {
                           MatrixMap db(b.grad_sink().data() + i * rb * cb, Index(rb), Index(cb));
                           if (!transpose_b) {
                             gemm_acc(am, !transpose_a, gm, false, db);
                           } else {
                             gemm_acc(gm, true, am, transpose_a, db);
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, cin_g, cout_g, k, pad, groups;
  std::size_t hw() const { return h * w; }
};

/// cols[(ci * k + dy) * k + dx][y * W + x] = in[ci, reflect(y+dy-pad), reflect(x+dx-pad)]
void im2col(const double* in, const ConvGeometry& g, const std::vector<std::size_t>& ry,
            const std::vector<std::size_t>& rx, double* cols) {
  const std::size_t k = g.k;
  for (std::size_t ci = 0; ci < g.cin_g; ++ci) {
    const double* plane = in + ci * g.hw();
    for (std::size_t dy = 0; dy < k; ++dy) {
      for (std::size_t dx = 0; dx < k; ++dx) {
        double* row = cols + ((ci * k + dy) * k + dx) * g.hw();
        for (std::size_t y = 0; y < g.h; ++y) {
          const double* src = plane + ry[y * k + dy] * g.w;
          double* dst = row + y * g.w;
          for (std::size_t x = 0; x < g.w; ++x) dst[x] = src[rx[x * k + dx]];
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, const std::vector<std::size_t>& ry,
                const std::vector<std::size_t>& rx, double* in_grad) {
  const std::size_t k = g.k;
  for (std::size_t ci = 0; ci < g.cin_g; ++ci) {
    double* plane = in_grad + ci * g.hw();
    for (std::size_t dy = 0; dy < k; ++dy) {
      for (std::size_t dx = 0; dx < k; ++dx) {
        const double* row = cols + ((ci * k + dy) * k + dx) * g.hw();
        for (std::size_t y = 0; y < g.h; ++y) {
          double* dst = plane + ry[y * k + dy] * g.w;
          const double* src = row + y * g.w;
          for (std::size_t x = 0; x < g.w; ++x) dst[rx[x * k + dx]] += src[x];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t pad,
              std::size_t groups) {
  const auto& si = input.shape();
  const auto& sk = kernel.shape();
  if (si.size() != 3 && si.size() != 4) {
    throw DimensionError("conv2d: input must be [C,H,W] or [B,C,H,W], got " + shape_str(si));
  }
  if (sk.size() != 4 || sk[2] != sk[3]) {
    throw DimensionError("conv2d: kernel must be [C_out,C_in/groups,k,k], got " + shape_str(sk));
  }
  ConvGeometry g{};
  const bool batched = si.size() == 4;
  g.batch = batched ? si[0] : 1;
  g.cin = si[si.size() - 3];
  g.h = si[si.size() - 2];
  g.w = si[si.size() - 1];
  g.cout = sk[0];
  g.k = sk[2];
  g.pad = pad;
  g.groups = groups;
  if (g.k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(g.k));
  if (pad != (g.k - 1) / 2) {
    throw ConfigError("conv2d: pad must be (k-1)/2 = " + std::to_string((g.k - 1) / 2));
  }
  if (groups == 0 || g.cin % groups != 0 || g.cout % groups != 0) {
    throw ConfigError("conv2d: groups " + std::to_string(groups) + " must divide C_in " +
                      std::to_string(g.cin) + " and C_out " + std::to_string(g.cout));
  }
  g.cin_g = g.cin / groups;
  g.cout_g = g.cout / groups;
  if (sk[1] != g.cin_g) {
    throw DimensionError("conv2d: kernel " + shape_str(sk) + " does not match input " +
                         shape_str(si) + " with groups " + std::to_string(groups));
  }
  if (bias.defined() && bias.numel() != g.cout) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " needs " +
                         std::to_string(g.cout) + " entries");
  }

  const std::size_t hw = g.hw();
  const std::size_t kk = g.k * g.k;
  const bool depthwise = g.cin_g == 1 && g.cout_g == 1 && g.k > 1;
  auto ry = std::make_shared<std::vector<std::size_t>>(reflect_table(g.h, g.k, pad));
  auto rx = std::make_shared<std::vector<std::size_t>>(reflect_table(g.w, g.k, pad));

  Shape out_shape = batched ? Shape{g.batch, g.cout, g.h, g.w} : Shape{g.cout, g.h, g.w};
  std::vector<double> out(g.batch * g.cout * hw, 0.0);
  const auto iv = input.values();
  const auto kv = kernel.values();

  if (bias.defined()) {
    const auto bv = bias.values();
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t c = 0; c < g.cout; ++c) {
        std::fill_n(out.data() + (b * g.cout + c) * hw, hw, bv[c]);
      }
    }
  }

  std::vector<double> cols;
  if (!depthwise && g.k > 1) cols.resize(g.cin_g * kk * hw);

  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* in_b = iv.data() + b * g.cin * hw;
    double* out_b = out.data() + b * g.cout * hw;
    if (depthwise) {
      for (std::size_t c = 0; c < g.cout; ++c) {
        const double* plane = in_b + c * hw;
        const double* kc = kv.data() + c * kk;
        double* dst = out_b + c * hw;
        for (std::size_t y = 0; y < g.h; ++y) {
          for (std::size_t x = 0; x < g.w; ++x) {
            double acc = 0.0;
            for (std::size_t dy = 0; dy < g.k; ++dy) {
              const double* src = plane + (*ry)[y * g.k + dy] * g.w;
              for (std::size_t dx = 0; dx < g.k; ++dx) acc += kc[dy * g.k + dx] * src[(*rx)[x * g.k + dx]];
            }
            dst[y * g.w + x] += acc;
          }
        }
      }
      continue;
    }
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const double* in_g = in_b + gi * g.cin_g * hw;
      ConstMatrixMap wm(kv.data() + gi * g.cout_g * g.cin_g * kk, Index(g.cout_g), Index(g.cin_g * kk));
      MatrixMap om(out_b + gi * g.cout_g * hw, Index(g.cout_g), Index(hw));
      if (g.k == 1) {
        om.noalias() += wm * ConstMatrixMap(in_g, Index(g.cin_g), Index(hw));
      } else {
        im2col(in_g, g, *ry, *rx, cols.data());
        om.noalias() += wm * ConstMatrixMap(cols.data(), Index(g.cin_g * kk), Index(hw));
      }
    }
  }

  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      std::move(out_shape), std::move(out), inputs,
      [input, kernel, bias, g, ry, rx, depthwise, kk, hw](std::span<const double> grad) mutable {
        const auto iv = input.values();
        const auto kv = kernel.values();
        if (bias.defined() && bias.requires_grad()) {
          auto db = bias.grad_sink();
          for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t c = 0; c < g.cout; ++c) {
              const double* gp = grad.data() + (b * g.cout + c) * hw;
              db[c] += std::accumulate(gp, gp + hw, 0.0);
            }
          }
        }
        const bool need_in = input.requires_grad();
        const bool need_k = kernel.requires_grad();
        if (!need_in && !need_k) return;
        double* din = need_in ? input.grad_sink().data() : nullptr;
        double* dk = need_k ? kernel.grad_sink().data() : nullptr;
        std::vector<double> cols;
        std::vector<double> dcols;
        if (!depthwise && g.k > 1) {
          cols.resize(g.cin_g * kk * hw);
          dcols.resize(g.cin_g * kk * hw);
        }
        for (std::size_t b = 0; b < g.batch; ++b) {
          const double* in_b = iv.data() + b * g.cin * hw;
          const double* g_b = grad.data() + b * g.cout * hw;
          if (depthwise) {
            for (std::size_t c = 0; c < g.cout; ++c) {
              const double* plane = in_b + c * hw;
              const double* kc = kv.data() + c * kk;
              const double* gp = g_b + c * hw;
              for (std::size_t y = 0; y < g.h; ++y) {
                for (std::size_t x = 0; x < g.w; ++x) {
                  const double gv = gp[y * g.w + x];
                  for (std::size_t dy = 0; dy < g.k; ++dy) {
                    const std::size_t row = (*ry)[y * g.k + dy] * g.w;
                    for (std::size_t dx = 0; dx < g.k; ++dx) {
                      const std::size_t src = row + (*rx)[x * g.k + dx];
                      if (dk) dk[c * kk + dy * g.k + dx] += gv * plane[src];
                      if (din) din[b * g.cin * hw + c * hw + src] += gv * kc[dy * g.k + dx];
                    }
                  }
                }
              }
            }
            continue;
          }
          for (std::size_t gi = 0; gi < g.groups; ++gi) {
            const double* in_g = in_b + gi * g.cin_g * hw;
            ConstMatrixMap gm(g_b + gi * g.cout_g * hw, Index(g.cout_g), Index(hw));
            ConstMatrixMap wm(kv.data() + gi * g.cout_g * g.cin_g * kk, Index(g.cout_g),
                              Index(g.cin_g * kk));
            if (g.k == 1) {
              ConstMatrixMap xm(in_g, Index(g.cin_g), Index(hw));
              if (dk) {
                MatrixMap dkm(dk + gi * g.cout_g * g.cin_g, Index(g.cout_g), Index(g.cin_g));
                dkm.noalias() += gm * xm.transpose();
              }
              if (din) {
                MatrixMap dxm(din + b * g.cin * hw + gi * g.cin_g * hw, Index(g.cin_g), Index(hw));
                dxm.noalias() += wm.transpose() * gm;
              }
              continue;
            }
            if (dk) {
              im2col(in_g, g, *ry, *rx, cols.data());
              MatrixMap dkm(dk + gi * g.cout_g * g.cin_g * kk, Index(g.cout_g), Index(g.cin_g * kk));
              dkm.noalias() += gm * ConstMatrixMap(cols.data(), Index(g.cin_g * kk), Index(hw)).transpose();
            }
            if (din) {
              MatrixMap dcm(dcols.data(), Index(g.cin_g * kk), Index(hw));
              dcm.noalias() = wm.transpose() * gm;
              col2im_add(dcols.data(), g, *ry, *rx, din + b * g.cin * hw + gi * g.cin_g * hw);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// elementwise

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const bool broadcast = a.shape() != b.shape();
  if (broadcast && b.numel() != 1) {
    throw DimensionError("elementwise: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t n = av.size();
  std::vector<double> out(n);
  auto bat = [&](std::size_t i) { return broadcast ? bv[0] : bv[i]; };
  switch (op) {
    case BinaryOp::Add: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bat(i); break;
    case BinaryOp::Sub: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bat(i); break;
    case BinaryOp::Mul: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bat(i); break;
    case BinaryOp::Div: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] / bat(i); break;
  }
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b, op, broadcast](std::span<const double> g) mutable {
                       const auto av = a.values();
                       const auto bv = b.values();
                       const std::size_t n = g.size();
                       auto bat = [&](std::size_t i) { return broadcast ? bv[0] : bv[i]; };
                       if (a.requires_grad()) {
                         auto da = a.grad_sink();
                         for (std::size_t i = 0; i < n; ++i) {
                           switch (op) {
                             case BinaryOp::Add:
                             case BinaryOp::Sub: da[i] += g[i]; break;
                             case BinaryOp::Mul: da[i] += g[i] * bat(i); break;
                             case BinaryOp::Div: da[i] += g[i] / bat(i); break;
                           }
                         }
                       }
                       if (b.requires_grad()) {
                         auto db = b.grad_sink();
                         for (std::size_t i = 0; i < n; ++i) {
                           double d = 0.0;
                           switch (op) {
                             case BinaryOp::Add: d = g[i]; break;
                             case BinaryOp::Sub: d = -g[i]; break;
                             case BinaryOp::Mul: d = g[i] * av[i]; break;
                             case BinaryOp::Div: d = -g[i] * av[i] / (bat(i) * bat(i)); break;
                           }
                           db[broadcast ? 0 : i] += d;
                         }
                       }
                     });
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double unary_forward(UnaryOp op, double x) {
  switch (op) {
    case UnaryOp::Neg: return -x;
    case UnaryOp::Abs: return std::abs(x);
    case UnaryOp::Square: return x * x;
    case UnaryOp::Sqrt: return std::sqrt(x);
    case UnaryOp::Gelu: return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    case UnaryOp::Acos: return std::acos(std::clamp(x, -1.0 + kAcosClamp, 1.0 - kAcosClamp));
  }
  return 0.0;
}

double unary_derivative(UnaryOp op, double x) {
  switch (op) {
    case UnaryOp::Neg: return -1.0;
    case UnaryOp::Abs: return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    case UnaryOp::Square: return 2.0 * x;
    case UnaryOp::Sqrt: return 0.5 / std::sqrt(x);
    case UnaryOp::Gelu:
      return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    case UnaryOp::Acos: {
      if (x < -1.0 + kAcosClamp || x > 1.0 - kAcosClamp) return 0.0;
      return -1.0 / std::sqrt(1.0 - x * x);
    }
  }
  return 0.0;
}

template <typename Fwd, typename Deriv>
Tensor pointwise(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  std::transform(av.begin(), av.end(), out.begin(), fwd);
  return make_result(a.shape(), std::move(out), {a}, [a, deriv](std::span<const double> g) mutable {
    const auto av = a.values();
    auto da = a.grad_sink();
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * deriv(av[i]);
  });
}

}  // namespace

Tensor elementwise(UnaryOp op, const Tensor& a) {
  return pointwise(
      a, [op](double x) { return unary_forward(op, x); },
      [op](double x) { return unary_derivative(op, x); });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Div, a, b); }
Tensor neg(const Tensor& a) { return elementwise(UnaryOp::Neg, a); }
Tensor abs(const Tensor& a) { return elementwise(UnaryOp::Abs, a); }
Tensor square(const Tensor& a) { return elementwise(UnaryOp::Square, a); }
Tensor sqrt(const Tensor& a) { return elementwise(UnaryOp::Sqrt, a); }
Tensor gelu(const Tensor& a) { return elementwise(UnaryOp::Gelu, a); }
Tensor acos(const Tensor& a) { return elementwise(UnaryOp::Acos, a); }

Tensor scale(const Tensor& a, double factor) {
  return pointwise(
      a, [factor](double x) { return x * factor; }, [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return pointwise(
      a, [offset](double x) { return x + offset; }, [](double) { return 1.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw ConfigError("clamp: lo > hi");
  return pointwise(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& a, const std::vector<std::size_t>& axes) {
  const auto& s = a.shape();
  std::vector<bool> reduced(s.size(), false);
  for (auto ax : axes) {
    if (ax >= s.size()) {
      throw ConfigError("reduce: axis " + std::to_string(ax) + " invalid for " + shape_str(s));
    }
    if (reduced[ax]) throw ConfigError("reduce: axis " + std::to_string(ax) + " repeated");
    reduced[ax] = true;
  }
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!reduced[i]) out_shape.push_back(s[i]);
  }
  // out stride contributed by each input axis (0 for reduced axes)
  const auto out_strides = strides_of(out_shape);
  std::vector<std::size_t> axis_stride(s.size(), 0);
  for (std::size_t i = 0, j = 0; i < s.size(); ++i) {
    if (!reduced[i]) axis_stride[i] = out_strides[j++];
  }
  const std::size_t n = a.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<std::size_t> idx(s.size(), 0);
    std::size_t out_flat = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
      (*map)[flat] = out_flat;
      for (std::size_t ax = s.size(); ax-- > 0;) {
        ++idx[ax];
        out_flat += axis_stride[ax];
        if (idx[ax] < s[ax]) break;
        out_flat -= axis_stride[ax] * idx[ax];
        idx[ax] = 0;
      }
    }
  }
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[(*map)[i]] += av[i];
  return make_result(std::move(out_shape), std::move(out), {a},
                     [a, map](std::span<const double> g) mutable {
                       auto da = a.grad_sink();
                       for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[(*map)[i]];
                     });
}

Tensor mean(const Tensor& a, const std::vector<std::size_t>& axes) {
  std::size_t count = 1;
  for (auto ax : axes) count *= a.extent(ax);
  return scale(sum(a, axes), 1.0 / static_cast<double>(count));
}

Tensor sum_all(const Tensor& a) {
  const auto av = a.values();
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  return make_result(Shape{}, {total}, {a}, [a](std::span<const double> g) mutable {
    for (auto& d : a.grad_sink()) d += g[0];
  });
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// layout

Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
  }
  const auto av = a.values();
  return make_result(std::move(new_shape), std::vector<double>(av.begin(), av.end()), {a},
                     [a](std::span<const double> g) mutable {
                       auto da = a.grad_sink();
                       for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                     });
}

Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<std::size_t>> indices,
              Shape out_shape) {
  if (shape_numel(out_shape) != indices->size()) {
    throw DimensionError("gather: " + std::to_string(indices->size()) + " indices for shape " +
                         shape_str(out_shape));
  }
  const auto av = a.values();
  std::vector<double> out(indices->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto src = (*indices)[i];
    if (src >= av.size()) throw DimensionError("gather: index out of range");
    out[i] = av[src];
  }
  return make_result(std::move(out_shape), std::move(out), {a},
                     [a, indices](std::span<const double> g) mutable {
                       auto da = a.grad_sink();
                       for (std::size_t i = 0; i < g.size(); ++i) da[(*indices)[i]] += g[i];
                     });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axis_order) {
  const auto& s = a.shape();
  if (axis_order.size() != s.size()) {
    throw ConfigError("permute: order has " + std::to_string(axis_order.size()) +
                      " axes for " + shape_str(s));
  }
  std::vector<bool> seen(s.size(), false);
  for (auto ax : axis_order) {
    if (ax >= s.size() || seen[ax]) throw ConfigError("permute: order is not a permutation");
    seen[ax] = true;
  }
  const auto in_strides = strides_of(s);
  Shape out_shape(s.size());
  std::vector<std::size_t> step(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) {
    out_shape[j] = s[axis_order[j]];
    step[j] = in_strides[axis_order[j]];
  }
  const std::size_t n = a.numel();
  auto indices = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(s.size(), 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*indices)[flat] = src;
    for (std::size_t ax = s.size(); ax-- > 0;) {
      ++idx[ax];
      src += step[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= step[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return gather(a, std::move(indices), std::move(out_shape));
}

Tensor transpose(const Tensor& a) {
  const auto r = a.ndim();
  if (r < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> order(r);
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[r - 1], order[r - 2]);
  return permute(a, order);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  const auto& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ConfigError("concat: axis out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
    }
    total += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto pv = p.values();
    const std::size_t block = p.extent(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + o * total * inner + off * inner);
    }
    off += p.extent(axis);
  }
  return make_result(std::move(out_shape), std::move(out), parts,
                     [parts, offsets, outer, inner, total, axis](std::span<const double> g) mutable {
                       for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                         auto& p = parts[pi];
                         if (!p.requires_grad()) continue;
                         auto dp = p.grad_sink();
                         const std::size_t block = p.extent(axis) * inner;
                         for (std::size_t o = 0; o < outer; ++o) {
                           const double* src = g.data() + o * total * inner + offsets[pi] * inner;
                           double* dst = dp.data() + o * block;
                           for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& s = a.shape();
  if (axis >= s.size()) throw ConfigError("slice: axis out of range for " + shape_str(s));
  if (begin > end || end > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for extent " + std::to_string(s[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * inner;
  const std::size_t stride = s[axis] * inner;
  const auto av = a.values();
  std::vector<double> out(outer * block);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(av.data() + o * stride + begin * inner, block, out.data() + o * block);
  }
  return make_result(std::move(out_shape), std::move(out), {a},
                     [a, outer, block, stride, begin, inner](std::span<const double> g) mutable {
                       auto da = a.grad_sink();
                       for (std::size_t o = 0; o < outer; ++o) {
                         double* dst = da.data() + o * stride + begin * inner;
                         const double* src = g.data() + o * block;
                         for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                       }
                     });
}

// ---------------------------------------------------------------------------
// normalization

Tensor normalize_channels(const Tensor& a, double epsilon) {
  if (a.ndim() < 1 || a.extent(0) == 0) {
    throw DimensionError("normalize_channels: empty channel axis in " + shape_str(a.shape()));
  }
  const std::size_t c = a.extent(0);
  const std::size_t p = a.numel() / c;
  const auto av = a.values();
  auto xhat = std::make_shared<std::vector<double>>(a.numel());
  auto inv_std = std::make_shared<std::vector<double>>(p);
  std::vector<double> mu(p, 0.0), var(p, 0.0);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t j = 0; j < p; ++j) mu[j] += av[ci * p + j];
  }
  for (auto& m : mu) m /= static_cast<double>(c);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t j = 0; j < p; ++j) {
      const double d = av[ci * p + j] - mu[j];
      var[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < p; ++j) {
    (*inv_std)[j] = 1.0 / std::sqrt(var[j] / static_cast<double>(c) + epsilon);
  }
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t j = 0; j < p; ++j) {
      (*xhat)[ci * p + j] = (av[ci * p + j] - mu[j]) * (*inv_std)[j];
    }
  }
  std::vector<double> out(*xhat);
  return make_result(a.shape(), std::move(out), {a},
                     [a, xhat, inv_std, c, p](std::span<const double> g) mutable {
                       auto da = a.grad_sink();
                       std::vector<double> mg(p, 0.0), mgx(p, 0.0);
                       for (std::size_t ci = 0; ci < c; ++ci) {
                         for (std::size_t j = 0; j < p; ++j) {
                           mg[j] += g[ci * p + j];
                           mgx[j] += g[ci * p + j] * (*xhat)[ci * p + j];
                         }
                       }
                       const double inv_c = 1.0 / static_cast<double>(c);
                       for (std::size_t ci = 0; ci < c; ++ci) {
                         for (std::size_t j = 0; j < p; ++j) {
                           const std::size_t i = ci * p + j;
                           da[i] += (*inv_std)[j] *
                                    (g[i] - mg[j] * inv_c - (*xhat)[i] * mgx[j] * inv_c);
                         }
                       }
                     });
}

Tensor channel_affine(const Tensor& x, const Tensor& gain, const Tensor& shift) {
  if (x.ndim() < 1) throw DimensionError("channel_affine: scalar input");
  const std::size_t c = x.extent(0);
  if (gain.numel() != c || shift.numel() != c) {
    throw DimensionError("channel_affine: gain " + shape_str(gain.shape()) + " / shift " +
                         shape_str(shift.shape()) + " need " + std::to_string(c) + " entries");
  }
  const std::size_t p = x.numel() / c;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto sv = shift.values();
  std::vector<double> out(x.numel());
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t j = 0; j < p; ++j) out[ci * p + j] = xv[ci * p + j] * gv[ci] + sv[ci];
  }
  return make_result(x.shape(), std::move(out), {x, gain, shift},
                     [x, gain, shift, c, p](std::span<const double> g) mutable {
                       const auto xv = x.values();
                       const auto gv = gain.values();
                       if (x.requires_grad()) {
                         auto dx = x.grad_sink();
                         for (std::size_t ci = 0; ci < c; ++ci) {
                           for (std::size_t j = 0; j < p; ++j) dx[ci * p + j] += g[ci * p + j] * gv[ci];
                         }
                       }
                       if (gain.requires_grad()) {
                         auto dg = gain.grad_sink();
                         for (std::size_t ci = 0; ci < c; ++ci) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < p; ++j) acc += g[ci * p + j] * xv[ci * p + j];
                           dg[ci] += acc;
                         }
                       }
                       if (shift.requires_grad()) {
                         auto ds = shift.grad_sink();
                         for (std::size_t ci = 0; ci < c; ++ci) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < p; ++j) acc += g[ci * p + j];
                           ds[ci] += acc;
                         }
                       }
                     });
}

}  // namespace hssdct
