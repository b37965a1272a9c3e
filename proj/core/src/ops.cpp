#include "exposura/ops.hpp"

#include <Eigen/Core>
#include <array>
#include <cmath>

#include "exposura/error.hpp"

namespace exposura {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

struct ConvGeom {
  std::int64_t n, in_c, out_c, h, w, k, oh, ow;
  int stride, pad;
};

// col has rows (c, ki, kj) and columns (oy, ox) of the strided output grid.
template <typename T>
void im2col(const T* x, std::int64_t c_count, std::int64_t h, std::int64_t w, std::int64_t k, int stride, int pad,
            std::int64_t oh, std::int64_t ow, T* col) {
  for (std::int64_t c = 0; c < c_count; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride - pad + ki;
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = x + (c * h + iy) * w;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates into x.
template <typename T>
void col2im(const T* col, std::int64_t c_count, std::int64_t h, std::int64_t w, std::int64_t k, int stride, int pad,
            std::int64_t oh, std::int64_t ow, T* x) {
  for (std::int64_t c = 0; c < c_count; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + oy * ow;
          T* dst = x + (c * h + iy) * w;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_args(const char* op, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                     std::int64_t weight_out_axis_extent, int stride, int pad) {
  if (!input.defined() || input.rank() != 4) {
    throw ShapeError(std::string(op) + ": input must be rank 4 (NCHW), got " + shape_str(input.shape()));
  }
  if (!weight.defined() || weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw ShapeError(std::string(op) + ": weight must be (a, b, k, k), got " + shape_str(weight.shape()));
  }
  if (stride < 1 || pad < 0) {
    throw ShapeError(std::string(op) + ": need stride >= 1 and pad >= 0");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight_out_axis_extent)) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
}

template <typename T>
void add_bias(T* out, const Tensor<T>& bias, std::int64_t channels, std::int64_t plane) {
  if (!bias.defined()) return;
  const T* b = bias.raw();
  for (std::int64_t c = 0; c < channels; ++c) {
    T* p = out + c * plane;
    for (std::int64_t i = 0; i < plane; ++i) p[i] += b[c];
  }
}

template <typename T>
Tensor<T> bias_grad(const Tensor<T>& g, std::int64_t channels) {
  Tensor<T> gb(Shape{channels});
  auto out = gb.mutable_data();
  const auto plane = g.dim(2) * g.dim(3);
  const T* src = g.raw();
  for (std::int64_t n = 0; n < g.dim(0); ++n) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const T* p = src + (n * channels + c) * plane;
      T acc = 0;
      for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      out[static_cast<std::size_t>(c)] += acc;
    }
  }
  return gb;
}

template <typename T>
void conv_forward_direct(const ConvGeom& g, const T* x, const T* wt, T* out) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t o = 0; o < g.out_c; ++o) {
      for (std::int64_t oy = 0; oy < g.oh; ++oy) {
        for (std::int64_t ox = 0; ox < g.ow; ++ox) {
          T acc = 0;
          for (std::int64_t c = 0; c < g.in_c; ++c) {
            for (std::int64_t ki = 0; ki < g.k; ++ki) {
              const std::int64_t iy = oy * g.stride - g.pad + ki;
              if (iy < 0 || iy >= g.h) continue;
              for (std::int64_t kj = 0; kj < g.k; ++kj) {
                const std::int64_t ix = ox * g.stride - g.pad + kj;
                if (ix < 0 || ix >= g.w) continue;
                acc += x[((n * g.in_c + c) * g.h + iy) * g.w + ix] * wt[((o * g.in_c + c) * g.k + ki) * g.k + kj];
              }
            }
          }
          out[((n * g.out_c + o) * g.oh + oy) * g.ow + ox] += acc;
        }
      }
    }
  }
}

}  // namespace

int conv_output_extent(std::int64_t in, int kernel, int stride, int pad) {
  const std::int64_t span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  return static_cast<int>(span / stride + 1);
}

int conv_transposed_output_extent(std::int64_t in, int kernel, int stride, int pad) {
  return static_cast<int>((in - 1) * stride - 2 * pad + kernel);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int pad,
                 ConvPath path) {
  check_conv_args("conv2d", input, weight, bias, weight.defined() ? weight.dim(0) : 0, stride, pad);
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(1)) +
                     " input channels but input " + shape_str(input.shape()) + " has " +
                     std::to_string(input.dim(1)));
  }
  ConvGeom g{input.dim(0), input.dim(1), weight.dim(0), input.dim(2), input.dim(3), weight.dim(2), 0, 0, stride, pad};
  g.oh = conv_output_extent(g.h, static_cast<int>(g.k), stride, pad);
  g.ow = conv_output_extent(g.w, static_cast<int>(g.k), stride, pad);
  if (g.oh < 1 || g.ow < 1) {
    throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) + " does not fit input " +
                     shape_str(input.shape()) + " with pad " + std::to_string(pad));
  }

  const std::int64_t ckk = g.in_c * g.k * g.k;
  const std::int64_t hw = g.oh * g.ow;
  Tensor<T> out(Shape{g.n, g.out_c, g.oh, g.ow});
  T* dst = out.mutable_data().data();
  if (path == ConvPath::kDirect) {
    conv_forward_direct(g, input.raw(), weight.raw(), dst);
    for (std::int64_t n = 0; n < g.n; ++n) add_bias(dst + n * g.out_c * hw, bias, g.out_c, hw);
  } else {
    std::vector<T> col(static_cast<std::size_t>(ckk * hw));
    CMapR<T> wm(weight.raw(), g.out_c, ckk);
    for (std::int64_t n = 0; n < g.n; ++n) {
      im2col(input.raw() + n * g.in_c * g.h * g.w, g.in_c, g.h, g.w, g.k, stride, pad, g.oh, g.ow, col.data());
      MapR<T> om(dst + n * g.out_c * hw, g.out_c, hw);
      om.noalias() = wm * CMapR<T>(col.data(), ckk, hw);
      add_bias(dst + n * g.out_c * hw, bias, g.out_c, hw);
    }
  }

  return record_op<T>(
      "conv2d", std::move(out), {&input, &weight, &bias},
      [x = input.detach(), w = weight.detach(), g](const Tensor<T>& grad, std::span<const bool> needs,
                                                   std::span<Tensor<T>> gin) {
        const std::int64_t ckk = g.in_c * g.k * g.k;
        const std::int64_t hw = g.oh * g.ow;
        std::vector<T> col(static_cast<std::size_t>(ckk * hw));
        CMapR<T> wm(w.raw(), g.out_c, ckk);
        if (needs[1]) {
          Tensor<T> gw(w.shape());
          MapR<T> gwm(gw.mutable_data().data(), g.out_c, ckk);
          for (std::int64_t n = 0; n < g.n; ++n) {
            im2col(x.raw() + n * g.in_c * g.h * g.w, g.in_c, g.h, g.w, g.k, g.stride, g.pad, g.oh, g.ow, col.data());
            gwm.noalias() += CMapR<T>(grad.raw() + n * g.out_c * hw, g.out_c, hw) *
                             CMapR<T>(col.data(), ckk, hw).transpose();
          }
          gin[1] = std::move(gw);
        }
        if (needs[0]) {
          Tensor<T> gx(x.shape());
          T* gxd = gx.mutable_data().data();
          for (std::int64_t n = 0; n < g.n; ++n) {
            MapR<T>(col.data(), ckk, hw).noalias() =
                wm.transpose() * CMapR<T>(grad.raw() + n * g.out_c * hw, g.out_c, hw);
            col2im(col.data(), g.in_c, g.h, g.w, g.k, g.stride, g.pad, g.oh, g.ow, gxd + n * g.in_c * g.h * g.w);
          }
          gin[0] = std::move(gx);
        }
        if (needs[2]) gin[2] = bias_grad(grad, g.out_c);
      });
}

template <typename T>
Tensor<T> conv2d_transposed(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                            int pad, ConvPath path) {
  check_conv_args("conv2d_transposed", input, weight, bias, weight.defined() ? weight.dim(1) : 0, stride, pad);
  if (weight.dim(0) != input.dim(1)) {
    throw ShapeError("conv2d_transposed: weight " + shape_str(weight.shape()) + " expects " +
                     std::to_string(weight.dim(0)) + " input channels but input " + shape_str(input.shape()) +
                     " has " + std::to_string(input.dim(1)));
  }
  // Geometry named from the equivalent forward conv: its input is our output.
  ConvGeom g{input.dim(0), weight.dim(1), weight.dim(0), 0, 0, weight.dim(2), input.dim(2), input.dim(3), stride, pad};
  g.h = conv_transposed_output_extent(g.oh, static_cast<int>(g.k), stride, pad);
  g.w = conv_transposed_output_extent(g.ow, static_cast<int>(g.k), stride, pad);
  if (g.h < 1 || g.w < 1) {
    throw ShapeError("conv2d_transposed: input " + shape_str(input.shape()) + " with kernel " +
                     shape_str(weight.shape()) + " gives an empty output");
  }
  // conv_output_extent(g.h) == g.oh is guaranteed for this extent.

  const std::int64_t out_kk = g.in_c * g.k * g.k;  // rows of the column matrix
  const std::int64_t hw_small = g.oh * g.ow;
  const std::int64_t plane = g.h * g.w;
  Tensor<T> out(Shape{g.n, g.in_c, g.h, g.w});
  T* dst = out.mutable_data().data();
  if (path == ConvPath::kDirect) {
    const T* x = input.raw();
    const T* wt = weight.raw();
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t ci = 0; ci < g.out_c; ++ci) {
        for (std::int64_t iy = 0; iy < g.oh; ++iy) {
          for (std::int64_t ix = 0; ix < g.ow; ++ix) {
            const T v = x[((n * g.out_c + ci) * g.oh + iy) * g.ow + ix];
            for (std::int64_t co = 0; co < g.in_c; ++co) {
              for (std::int64_t ki = 0; ki < g.k; ++ki) {
                const std::int64_t oy = iy * stride - pad + ki;
                if (oy < 0 || oy >= g.h) continue;
                for (std::int64_t kj = 0; kj < g.k; ++kj) {
                  const std::int64_t ox = ix * stride - pad + kj;
                  if (ox < 0 || ox >= g.w) continue;
                  dst[((n * g.in_c + co) * g.h + oy) * g.w + ox] += v * wt[((ci * g.in_c + co) * g.k + ki) * g.k + kj];
                }
              }
            }
          }
        }
      }
      add_bias(dst + n * g.in_c * plane, bias, g.in_c, plane);
    }
  } else {
    std::vector<T> col(static_cast<std::size_t>(out_kk * hw_small));
    CMapR<T> wm(weight.raw(), g.out_c, out_kk);
    for (std::int64_t n = 0; n < g.n; ++n) {
      MapR<T>(col.data(), out_kk, hw_small).noalias() =
          wm.transpose() * CMapR<T>(input.raw() + n * g.out_c * hw_small, g.out_c, hw_small);
      col2im(col.data(), g.in_c, g.h, g.w, g.k, stride, pad, g.oh, g.ow, dst + n * g.in_c * plane);
      add_bias(dst + n * g.in_c * plane, bias, g.in_c, plane);
    }
  }

  return record_op<T>(
      "conv2d_transposed", std::move(out), {&input, &weight, &bias},
      [x = input.detach(), w = weight.detach(), g](const Tensor<T>& grad, std::span<const bool> needs,
                                                   std::span<Tensor<T>> gin) {
        const std::int64_t out_kk = g.in_c * g.k * g.k;
        const std::int64_t hw_small = g.oh * g.ow;
        const std::int64_t plane = g.h * g.w;
        std::vector<T> col(static_cast<std::size_t>(out_kk * hw_small));
        CMapR<T> wm(w.raw(), g.out_c, out_kk);
        Tensor<T> gx;
        Tensor<T> gw;
        if (needs[0]) gx = Tensor<T>(x.shape());
        if (needs[1]) gw = Tensor<T>(w.shape());
        if (needs[0] || needs[1]) {
          for (std::int64_t n = 0; n < g.n; ++n) {
            im2col(grad.raw() + n * g.in_c * plane, g.in_c, g.h, g.w, g.k, g.stride, g.pad, g.oh, g.ow, col.data());
            CMapR<T> cm(col.data(), out_kk, hw_small);
            if (needs[0]) {
              MapR<T>(gx.mutable_data().data() + n * g.out_c * hw_small, g.out_c, hw_small).noalias() = wm * cm;
            }
            if (needs[1]) {
              MapR<T>(gw.mutable_data().data(), g.out_c, out_kk).noalias() +=
                  CMapR<T>(x.raw() + n * g.out_c * hw_small, g.out_c, hw_small) * cm.transpose();
            }
          }
        }
        if (needs[0]) gin[0] = std::move(gx);
        if (needs[1]) gin[1] = std::move(gw);
        if (needs[2]) gin[2] = bias_grad(grad, g.in_c);
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] >= T(0) ? in[i] : alpha * in[i];
  const char* name = alpha == T(0) ? "relu" : "leaky_relu";
  return record_op<T>(name, std::move(out), {&x},
                      [xv = x.detach(), alpha](const Tensor<T>& g, std::span<const bool>, std::span<Tensor<T>> gin) {
                        Tensor<T> gx(xv.shape());
                        auto d = gx.mutable_data();
                        auto in = xv.data();
                        auto gd = g.data();
                        for (std::size_t i = 0; i < d.size(); ++i) d[i] = in[i] >= T(0) ? gd[i] : alpha * gd[i];
                        gin[0] = std::move(gx);
                      });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(in[i]);
  return record_op<T>("tanh", out, {&x},
                      [y = out.detach()](const Tensor<T>& g, std::span<const bool>, std::span<Tensor<T>> gin) {
                        Tensor<T> gx(y.shape());
                        auto d = gx.mutable_data();
                        auto yv = y.data();
                        auto gd = g.data();
                        for (std::size_t i = 0; i < d.size(); ++i) d[i] = gd[i] * (T(1) - yv[i] * yv[i]);
                        gin[0] = std::move(gx);
                      });
}

namespace {

// Right-aligned broadcasting of up to four axes.
struct Broadcast {
  Shape out;
  std::array<std::int64_t, 4> ext{1, 1, 1, 1};
  std::array<std::int64_t, 4> sa{0, 0, 0, 0};
  std::array<std::int64_t, 4> sb{0, 0, 0, 0};
  bool identical = false;
};

std::array<std::int64_t, 4> pad4(const Shape& s) {
  std::array<std::int64_t, 4> r{1, 1, 1, 1};
  const std::size_t off = 4 - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) r[off + i] = s[i];
  return r;
}

std::array<std::int64_t, 4> strides4(const std::array<std::int64_t, 4>& e, const std::array<std::int64_t, 4>& out) {
  std::array<std::int64_t, 4> s{};
  std::int64_t acc = 1;
  for (int i = 3; i >= 0; --i) {
    s[i] = (e[i] == 1 && out[i] != 1) ? 0 : acc;
    acc *= e[i];
  }
  return s;
}

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.identical = true;
    return bc;
  }
  const auto ea = pad4(a);
  const auto eb = pad4(b);
  for (int i = 0; i < 4; ++i) {
    if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
    bc.ext[i] = std::max(ea[i], eb[i]);
  }
  const std::size_t rank = std::max(a.size(), b.size());
  bc.out.assign(bc.ext.begin() + static_cast<std::ptrdiff_t>(4 - rank), bc.ext.end());
  bc.sa = strides4(ea, bc.ext);
  bc.sb = strides4(eb, bc.ext);
  return bc;
}

template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  std::int64_t o = 0;
  for (std::int64_t i0 = 0; i0 < bc.ext[0]; ++i0)
    for (std::int64_t i1 = 0; i1 < bc.ext[1]; ++i1)
      for (std::int64_t i2 = 0; i2 < bc.ext[2]; ++i2)
        for (std::int64_t i3 = 0; i3 < bc.ext[3]; ++i3, ++o) {
          const std::int64_t ia = i0 * bc.sa[0] + i1 * bc.sa[1] + i2 * bc.sa[2] + i3 * bc.sa[3];
          const std::int64_t ib = i0 * bc.sb[0] + i1 * bc.sb[1] + i2 * bc.sb[2] + i3 * bc.sb[3];
          f(o, ia, ib);
        }
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  static constexpr const char* kNames[] = {"add", "sub", "mul"};
  const char* name = kNames[static_cast<int>(kind)];
  if (!a.defined() || !b.defined()) throw ShapeError(std::string(name) + ": undefined operand");
  Broadcast bc = broadcast(name, a.shape(), b.shape());
  Tensor<T> out(bc.out);
  auto o = out.mutable_data();
  auto av = a.data();
  auto bv = b.data();
  auto apply = [kind](T x, T y) {
    switch (kind) {
      case BinaryKind::kAdd: return x + y;
      case BinaryKind::kSub: return x - y;
      default: return x * y;
    }
  };
  if (bc.identical) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(av[i], bv[i]);
  } else {
    for_each_broadcast(bc, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
      o[static_cast<std::size_t>(i)] = apply(av[static_cast<std::size_t>(ia)], bv[static_cast<std::size_t>(ib)]);
    });
  }
  return record_op<T>(
      name, std::move(out), {&a, &b},
      [kind, bc, x = a.detach(), y = b.detach()](const Tensor<T>& g, std::span<const bool> needs,
                                                 std::span<Tensor<T>> gin) {
        auto gd = g.data();
        auto xv = x.data();
        auto yv = y.data();
        const T sign_b = kind == BinaryKind::kSub ? T(-1) : T(1);
        Tensor<T> ga, gb;
        if (needs[0]) ga = Tensor<T>(x.shape());
        if (needs[1]) gb = Tensor<T>(y.shape());
        auto gav = ga.mutable_data();
        auto gbv = gb.mutable_data();
        auto step = [&](std::size_t i, std::size_t ia, std::size_t ib) {
          if (kind == BinaryKind::kMul) {
            if (needs[0]) gav[ia] += gd[i] * yv[ib];
            if (needs[1]) gbv[ib] += gd[i] * xv[ia];
          } else {
            if (needs[0]) gav[ia] += gd[i];
            if (needs[1]) gbv[ib] += sign_b * gd[i];
          }
        };
        if (bc.identical) {
          for (std::size_t i = 0; i < gd.size(); ++i) step(i, i, i);
        } else {
          for_each_broadcast(bc, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
            step(static_cast<std::size_t>(i), static_cast<std::size_t>(ia), static_cast<std::size_t>(ib));
          });
        }
        if (needs[0]) gin[0] = std::move(ga);
        if (needs[1]) gin[1] = std::move(gb);
      });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinaryKind::kAdd, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinaryKind::kSub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(BinaryKind::kMul, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * factor;
  return record_op<T>("scale", std::move(out), {&x},
                      [factor](const Tensor<T>& g, std::span<const bool>, std::span<Tensor<T>> gin) {
                        Tensor<T> gx(g.shape());
                        auto d = gx.mutable_data();
                        auto gd = g.data();
                        for (std::size_t i = 0; i < d.size(); ++i) d[i] = gd[i] * factor;
                        gin[0] = std::move(gx);
                      });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] + value;
  return record_op<T>("add_scalar", std::move(out), {&x},
                      [](const Tensor<T>& g, std::span<const bool>, std::span<Tensor<T>> gin) { gin[0] = g.detach(); });
}

namespace {

enum class ReduceKind { kSum, kMean, kAbsMean, kSqMean };

template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& x) {
  static constexpr const char* kNames[] = {"sum", "mean", "abs_mean", "sq_mean"};
  const char* name = kNames[static_cast<int>(kind)];
  if (x.numel() == 0) throw ShapeError(std::string(name) + ": empty input");
  auto in = x.data();
  const T n = static_cast<T>(in.size());
  T acc = 0;
  switch (kind) {
    case ReduceKind::kSum:
    case ReduceKind::kMean:
      for (T v : in) acc += v;
      break;
    case ReduceKind::kAbsMean:
      for (T v : in) acc += std::abs(v);
      break;
    case ReduceKind::kSqMean:
      for (T v : in) acc += v * v;
      break;
  }
  if (kind != ReduceKind::kSum) acc /= n;
  return record_op<T>(name, Tensor<T>::scalar(acc), {&x},
                      [kind, xv = x.detach()](const Tensor<T>& g, std::span<const bool>, std::span<Tensor<T>> gin) {
                        const T gs = g.item();
                        auto in = xv.data();
                        const T n = static_cast<T>(in.size());
                        Tensor<T> gx(xv.shape());
                        auto d = gx.mutable_data();
                        for (std::size_t i = 0; i < d.size(); ++i) {
                          switch (kind) {
                            case ReduceKind::kSum: d[i] = gs; break;
                            case ReduceKind::kMean: d[i] = gs / n; break;
                            case ReduceKind::kAbsMean:
                              d[i] = in[i] > T(0) ? gs / n : (in[i] < T(0) ? -gs / n : T(0));
                              break;
                            case ReduceKind::kSqMean: d[i] = T(2) * in[i] * gs / n; break;
                          }
                        }
                        gin[0] = std::move(gx);
                      });
}

}  // namespace

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  return reduce(ReduceKind::kSum, x);
}
template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return reduce(ReduceKind::kMean, x);
}
template <typename T>
Tensor<T> abs_mean(const Tensor<T>& x) {
  return reduce(ReduceKind::kAbsMean, x);
}
template <typename T>
Tensor<T> sq_mean(const Tensor<T>& x) {
  return reduce(ReduceKind::kSqMean, x);
}

template <typename T>
Tensor<T> downsample_avg(const Tensor<T>& x, int factor) {
  if (x.rank() != 4) throw ShapeError("downsample_avg: input must be rank 4, got " + shape_str(x.shape()));
  if (factor < 1) throw ShapeError("downsample_avg: factor must be >= 1");
  if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
    throw ShapeError("downsample_avg: extents of " + shape_str(x.shape()) + " are not divisible by " +
                     std::to_string(factor));
  }
  if (factor == 1) {
    return record_op<T>("downsample_avg", x.detach(), {&x},
                        [](const Tensor<T>& g, std::span<const bool>, std::span<Tensor<T>> gin) { gin[0] = g.detach(); });
  }
  const std::int64_t nc = x.dim(0) * x.dim(1);
  const std::int64_t h = x.dim(2), w = x.dim(3), oh = h / factor, ow = w / factor;
  const T inv = T(1) / static_cast<T>(factor * factor);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), oh, ow});
  auto o = out.mutable_data();
  const T* in = x.raw();
  for (std::int64_t p = 0; p < nc; ++p) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xx = 0; xx < w; ++xx) {
        o[static_cast<std::size_t>((p * oh + y / factor) * ow + xx / factor)] += in[(p * h + y) * w + xx];
      }
    }
  }
  for (auto& v : o) v *= inv;
  return record_op<T>("downsample_avg", std::move(out), {&x},
                      [shape = x.shape(), factor, inv](const Tensor<T>& g, std::span<const bool>,
                                                       std::span<Tensor<T>> gin) {
                        const std::int64_t nc = shape[0] * shape[1];
                        const std::int64_t h = shape[2], w = shape[3], oh = h / factor, ow = w / factor;
                        Tensor<T> gx(shape);
                        auto d = gx.mutable_data();
                        const T* gd = g.raw();
                        for (std::int64_t p = 0; p < nc; ++p)
                          for (std::int64_t y = 0; y < h; ++y)
                            for (std::int64_t xx = 0; xx < w; ++xx)
                              d[static_cast<std::size_t>((p * h + y) * w + xx)] =
                                  gd[(p * oh + y / factor) * ow + xx / factor] * inv;
                        gin[0] = std::move(gx);
                      });
}

namespace {

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

}  // namespace

template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, int pad) {
  if (x.rank() != 4) throw ShapeError("reflect_pad: input must be rank 4, got " + shape_str(x.shape()));
  const std::int64_t h = x.dim(2), w = x.dim(3);
  if (pad < 0 || (h > 1 && pad >= h) || (w > 1 && pad >= w)) {
    throw ShapeError("reflect_pad: pad " + std::to_string(pad) + " too large for " + shape_str(x.shape()));
  }
  const std::int64_t nc = x.dim(0) * x.dim(1);
  const std::int64_t oh = h + 2 * pad, ow = w + 2 * pad;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), oh, ow});
  auto o = out.mutable_data();
  const T* in = x.raw();
  for (std::int64_t p = 0; p < nc; ++p)
    for (std::int64_t y = 0; y < oh; ++y) {
      const std::int64_t sy = reflect_index(y - pad, h);
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        o[static_cast<std::size_t>((p * oh + y) * ow + xx)] = in[(p * h + sy) * w + reflect_index(xx - pad, w)];
      }
    }
  return record_op<T>("reflect_pad", std::move(out), {&x},
                      [shape = x.shape(), pad](const Tensor<T>& g, std::span<const bool>, std::span<Tensor<T>> gin) {
                        const std::int64_t nc = shape[0] * shape[1];
                        const std::int64_t h = shape[2], w = shape[3];
                        const std::int64_t oh = h + 2 * pad, ow = w + 2 * pad;
                        Tensor<T> gx(shape);
                        auto d = gx.mutable_data();
                        const T* gd = g.raw();
                        for (std::int64_t p = 0; p < nc; ++p)
                          for (std::int64_t y = 0; y < oh; ++y) {
                            const std::int64_t sy = reflect_index(y - pad, h);
                            for (std::int64_t xx = 0; xx < ow; ++xx) {
                              d[static_cast<std::size_t>((p * h + sy) * w + reflect_index(xx - pad, w))] +=
                                  gd[(p * oh + y) * ow + xx];
                            }
                          }
                        gin[0] = std::move(gx);
                      });
}

template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no inputs");
  if (parts.size() > 8) throw ShapeError("concat_batch: at most 8 inputs");
  Shape shape = parts[0].shape();
  std::int64_t batch = 0;
  for (const auto& p : parts) {
    Shape rest_a(p.shape().begin() + 1, p.shape().end());
    Shape rest_b(shape.begin() + 1, shape.end());
    if (p.rank() != static_cast<int>(shape.size()) || rest_a != rest_b) {
      throw ShapeError("concat_batch: " + shape_str(p.shape()) + " does not match " + shape_str(shape));
    }
    batch += p.dim(0);
  }
  shape[0] = batch;
  std::vector<T> values;
  values.reserve(static_cast<std::size_t>(shape_numel(shape)));
  std::vector<std::int64_t> sizes;
  for (const auto& p : parts) {
    values.insert(values.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  Tensor<T> out(shape, std::move(values));
  Tape<T>* tape = nullptr;
  for (const auto& p : parts) {
    if (p.tape()) tape = p.tape();
  }
  if (tape == nullptr) return out;
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  return tape->record("concat_batch", std::move(out), std::span<const Tensor<T>* const>(ptrs),
                      [sizes, shapes = [&] {
                         std::vector<Shape> s;
                         for (const auto& p : parts) s.push_back(p.shape());
                         return s;
                       }()](const Tensor<T>& g, std::span<const bool> needs, std::span<Tensor<T>> gin) {
                        std::int64_t off = 0;
                        for (std::size_t i = 0; i < sizes.size(); ++i) {
                          if (needs[i]) {
                            std::vector<T> v(g.data().begin() + off, g.data().begin() + off + sizes[i]);
                            gin[i] = Tensor<T>(shapes[i], std::move(v));
                          }
                          off += sizes[i];
                        }
                      });
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::int64_t begin, std::int64_t count) {
  if (begin < 0 || count < 1 || begin + count > x.dim(0)) {
    throw ShapeError("slice_batch: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of range for " +
                     shape_str(x.shape()));
  }
  const std::int64_t item = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = count;
  std::vector<T> v(x.data().begin() + begin * item, x.data().begin() + (begin + count) * item);
  return record_op<T>("slice_batch", Tensor<T>(shape, std::move(v)), {&x},
                      [full = x.shape(), begin, item](const Tensor<T>& g, std::span<const bool>,
                                                      std::span<Tensor<T>> gin) {
                        Tensor<T> gx(full);
                        auto d = gx.mutable_data();
                        std::copy(g.data().begin(), g.data().end(), d.begin() + begin * item);
                        gin[0] = std::move(gx);
                      });
}

#define EXPOSURA_INSTANTIATE_OPS(T)                                                                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int, ConvPath);       \
  template Tensor<T> conv2d_transposed(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int,       \
                                       ConvPath);                                                            \
  template Tensor<T> relu(const Tensor<T>&);                                                                 \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                        \
  template Tensor<T> tanh(const Tensor<T>&);                                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                        \
  template Tensor<T> sum(const Tensor<T>&);                                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                                 \
  template Tensor<T> abs_mean(const Tensor<T>&);                                                             \
  template Tensor<T> sq_mean(const Tensor<T>&);                                                              \
  template Tensor<T> downsample_avg(const Tensor<T>&, int);                                                  \
  template Tensor<T> reflect_pad(const Tensor<T>&, int);                                                     \
  template Tensor<T> concat_batch(std::span<const Tensor<T>>);                                               \
  template Tensor<T> slice_batch(const Tensor<T>&, std::int64_t, std::int64_t);

EXPOSURA_INSTANTIATE_OPS(float)
EXPOSURA_INSTANTIATE_OPS(double)

}  // namespace exposura
