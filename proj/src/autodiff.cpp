#include "airway/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace airway::ad {

namespace {

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatCM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <class S>
using MapRM = Eigen::Map<MatRM<S>>;
template <class S>
using CMapRM = Eigen::Map<const MatRM<S>>;

template <class S>
void check_same_shape(const char* op, const Value<S>& a, const Value<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

template <class S>
void check_same_tape(const char* op, const Value<S>& a, const Value<S>& b) {
  if (a.tape() != b.tape()) throw ShapeError(std::string(op) + ": values from different tapes");
}

struct ConvGeometry {
  int batch, cin, cout;
  int iz, iy, ix;
  int kz, ky, kx;
  int oz, oy, ox;
  int stride, pad;
  std::int64_t in_spatial() const { return std::int64_t(iz) * iy * ix; }
  std::int64_t out_spatial() const { return std::int64_t(oz) * oy * ox; }
  std::int64_t kvol() const { return std::int64_t(kz) * ky * kx; }
};

template <class S>
ConvGeometry conv_geometry(const Value<S>& x, const Value<S>& w, const Value<S>& bias,
                           Conv3dOpts opts) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.rank() != 5) throw ShapeError("conv3d: input must be (B,C,Z,Y,X), got " + xs.str());
  if (ws.rank() != 5) throw ShapeError("conv3d: weight must be (O,C,kz,ky,kx), got " + ws.str());
  if (bias.shape().rank() != 1 || bias.shape()[0] != ws[0]) {
    throw ShapeError("conv3d: bias must be (O)");
  }
  if (xs[1] != ws[1]) {
    throw ShapeError("conv3d: channel mismatch on axis 1: input " + xs.str() + " weight " +
                     ws.str());
  }
  if (opts.stride < 1 || opts.pad < 0) throw ShapeError("conv3d: bad stride/pad");
  ConvGeometry g;
  g.batch = xs[0];
  g.cin = xs[1];
  g.iz = xs[2];
  g.iy = xs[3];
  g.ix = xs[4];
  g.cout = ws[0];
  g.kz = ws[2];
  g.ky = ws[3];
  g.kx = ws[4];
  g.stride = opts.stride;
  g.pad = opts.pad;
  g.oz = (g.iz + 2 * opts.pad - g.kz) / opts.stride + 1;
  g.oy = (g.iy + 2 * opts.pad - g.ky) / opts.stride + 1;
  g.ox = (g.ix + 2 * opts.pad - g.kx) / opts.stride + 1;
  if (g.oz <= 0 || g.oy <= 0 || g.ox <= 0) {
    throw ShapeError("conv3d: input " + xs.str() + " smaller than kernel footprint");
  }
  return g;
}

// Gather the receptive fields of every output voxel of one batch item into a
// (K x N) row-major matrix, K = cin*kz*ky*kx in canonical (c,kz,ky,kx) order,
// N = out voxels in row-major (oz,oy,ox) order. Each row is a shifted copy of
// the input, so stride-1 rows reduce to zero-padded memcpy runs.
template <class S>
void im2col(const S* x, const ConvGeometry& g, MatRM<S>& col) {
  const std::int64_t plane = std::int64_t(g.iy) * g.ix;
  std::int64_t row = 0;
  for (int c = 0; c < g.cin; ++c) {
    const S* src_c = x + c * g.iz * plane;
    for (int az = 0; az < g.kz; ++az)
      for (int ay = 0; ay < g.ky; ++ay)
        for (int ax = 0; ax < g.kx; ++ax, ++row) {
          S* dst = col.data() + row * std::int64_t(g.oz) * g.oy * g.ox;
          for (int oz = 0; oz < g.oz; ++oz) {
            const int z = oz * g.stride - g.pad + az;
            if (z < 0 || z >= g.iz) {
              std::fill(dst, dst + std::int64_t(g.oy) * g.ox, S(0));
              dst += std::int64_t(g.oy) * g.ox;
              continue;
            }
            for (int oy = 0; oy < g.oy; ++oy) {
              const int y = oy * g.stride - g.pad + ay;
              if (y < 0 || y >= g.iy) {
                std::fill(dst, dst + g.ox, S(0));
                dst += g.ox;
                continue;
              }
              const S* src = src_c + (std::int64_t(z) * g.iy + y) * g.ix;
              if (g.stride == 1) {
                const int sx0 = ax - g.pad;  // source x of ox = 0
                const int lead = std::max(0, -sx0);
                const int tail = std::max(0, sx0 + g.ox - g.ix);
                const int mid = g.ox - lead - tail;
                std::fill(dst, dst + lead, S(0));
                if (mid > 0) std::copy(src + sx0 + lead, src + sx0 + lead + mid, dst + lead);
                std::fill(dst + lead + mid, dst + g.ox, S(0));
                dst += g.ox;
              } else {
                for (int ox = 0; ox < g.ox; ++ox, ++dst) {
                  const int xx = ox * g.stride - g.pad + ax;
                  *dst = (xx >= 0 && xx < g.ix) ? src[xx] : S(0);
                }
              }
            }
          }
        }
  }
}

template <class S>
void col2im_add(const MatRM<S>& col, const ConvGeometry& g, S* x) {
  const std::int64_t plane = std::int64_t(g.iy) * g.ix;
  std::int64_t row = 0;
  for (int c = 0; c < g.cin; ++c) {
    S* dst_c = x + c * g.iz * plane;
    for (int az = 0; az < g.kz; ++az)
      for (int ay = 0; ay < g.ky; ++ay)
        for (int ax = 0; ax < g.kx; ++ax, ++row) {
          const S* src = col.data() + row * std::int64_t(g.oz) * g.oy * g.ox;
          for (int oz = 0; oz < g.oz; ++oz) {
            const int z = oz * g.stride - g.pad + az;
            if (z < 0 || z >= g.iz) {
              src += std::int64_t(g.oy) * g.ox;
              continue;
            }
            for (int oy = 0; oy < g.oy; ++oy) {
              const int y = oy * g.stride - g.pad + ay;
              if (y < 0 || y >= g.iy) {
                src += g.ox;
                continue;
              }
              S* dst = dst_c + (std::int64_t(z) * g.iy + y) * g.ix;
              if (g.stride == 1) {
                const int sx0 = ax - g.pad;
                const int lead = std::max(0, -sx0);
                const int tail = std::max(0, sx0 + g.ox - g.ix);
                const int mid = g.ox - lead - tail;
                for (int i = 0; i < mid; ++i) dst[sx0 + lead + i] += src[lead + i];
                src += g.ox;
              } else {
                for (int ox = 0; ox < g.ox; ++ox, ++src) {
                  const int xx = ox * g.stride - g.pad + ax;
                  if (xx >= 0 && xx < g.ix) dst[xx] += *src;
                }
              }
            }
          }
        }
  }
}

// Direct convolution with a fixed per-element accumulation order
// (c, kz, ky, kx ascending), used for the 64-bit path.
template <class S>
void conv_direct(const S* x, const S* w, const S* bias, const ConvGeometry& g, S* out) {
  const std::int64_t in_plane = std::int64_t(g.iy) * g.ix;
  const std::int64_t kvol = g.kvol();
  for (int b = 0; b < g.batch; ++b) {
    const S* xb = x + std::int64_t(b) * g.cin * g.iz * in_plane;
    S* ob = out + std::int64_t(b) * g.cout * g.out_spatial();
    for (int o = 0; o < g.cout; ++o) {
      const S* wo = w + std::int64_t(o) * g.cin * kvol;
      S* oo = ob + std::int64_t(o) * g.out_spatial();
      std::int64_t n = 0;
      for (int oz = 0; oz < g.oz; ++oz)
        for (int oy = 0; oy < g.oy; ++oy)
          for (int ox = 0; ox < g.ox; ++ox, ++n) {
            const int z0 = oz * g.stride - g.pad;
            const int y0 = oy * g.stride - g.pad;
            const int x0 = ox * g.stride - g.pad;
            S acc = bias[o];
            const S* wk = wo;
            for (int c = 0; c < g.cin; ++c) {
              const S* xc = xb + std::int64_t(c) * g.iz * in_plane;
              for (int kz = 0; kz < g.kz; ++kz) {
                const int z = z0 + kz;
                for (int ky = 0; ky < g.ky; ++ky) {
                  const int y = y0 + ky;
                  const bool row_ok = z >= 0 && z < g.iz && y >= 0 && y < g.iy;
                  const S* xr = xc + (std::int64_t(z) * g.iy + y) * g.ix;
                  for (int kx = 0; kx < g.kx; ++kx) {
                    const int xx = x0 + kx;
                    if (row_ok && xx >= 0 && xx < g.ix) {
                      acc += wk[(c * g.kz + kz) * g.ky * g.kx + ky * g.kx + kx] * xr[xx];
                    }
                  }
                }
              }
            }
            oo[n] = acc;
          }
    }
  }
}

}  // namespace

// --- elementwise -----------------------------------------------------------

namespace {

/// Helper: create a node whose backward reads the node's own gradient.
template <class S, class Backward>
Value<S> unary_node(Value<S> a, Shape out_shape, ArrayX<S> value, Backward bw) {
  Tape<S>& t = *a.tape();
  const int ia = a.node();
  const bool rg = t.node(ia).requires_grad;
  Value<S> out = t.make_node(out_shape, std::move(value), rg, {});
  if (rg) {
    const int self = out.node();
    t.node(self).backward = [ia, self, bw](Tape<S>& tp) { bw(tp, ia, self); };
  }
  return out;
}

template <class S, class Backward>
Value<S> binary_node(Value<S> a, Value<S> b, Shape out_shape, ArrayX<S> value, Backward bw) {
  Tape<S>& t = *a.tape();
  const int ia = a.node(), ib = b.node();
  const bool rg = t.node(ia).requires_grad || t.node(ib).requires_grad;
  Value<S> out = t.make_node(out_shape, std::move(value), rg, {});
  if (rg) {
    const int self = out.node();
    t.node(self).backward = [ia, ib, self, bw](Tape<S>& tp) { bw(tp, ia, ib, self); };
  }
  return out;
}

}  // namespace

template <class S>
Value<S> add(Value<S> a, Value<S> b) {
  check_same_tape("add", a, b);
  check_same_shape("add", a, b);
  Tape<S>& t = *a.tape();
  ArrayX<S> v = t.node(a.node()).value + t.node(b.node()).value;
  return binary_node(a, b, a.shape(), std::move(v), [](Tape<S>& tp, int ia, int ib, int self) {
    const ArrayX<S>& g = tp.grad(self);
    tp.accumulate_grad(ia, g);
    tp.accumulate_grad(ib, g);
  });
}

template <class S>
Value<S> sub(Value<S> a, Value<S> b) {
  check_same_tape("sub", a, b);
  check_same_shape("sub", a, b);
  Tape<S>& t = *a.tape();
  ArrayX<S> v = t.node(a.node()).value - t.node(b.node()).value;
  return binary_node(a, b, a.shape(), std::move(v), [](Tape<S>& tp, int ia, int ib, int self) {
    const ArrayX<S>& g = tp.grad(self);
    tp.accumulate_grad(ia, g);
    if (tp.node(ib).requires_grad) tp.grad(ib) -= g;
  });
}

template <class S>
Value<S> mul(Value<S> a, Value<S> b) {
  check_same_tape("mul", a, b);
  check_same_shape("mul", a, b);
  Tape<S>& t = *a.tape();
  ArrayX<S> v = t.node(a.node()).value * t.node(b.node()).value;
  return binary_node(a, b, a.shape(), std::move(v), [](Tape<S>& tp, int ia, int ib, int self) {
    const ArrayX<S>& g = tp.grad(self);
    if (tp.node(ia).requires_grad) tp.grad(ia) += g * tp.node(ib).value;
    if (tp.node(ib).requires_grad) tp.grad(ib) += g * tp.node(ia).value;
  });
}

template <class S>
Value<S> div(Value<S> a, Value<S> b) {
  check_same_tape("div", a, b);
  check_same_shape("div", a, b);
  Tape<S>& t = *a.tape();
  ArrayX<S> v = t.node(a.node()).value / t.node(b.node()).value;
  return binary_node(a, b, a.shape(), std::move(v), [](Tape<S>& tp, int ia, int ib, int self) {
    const ArrayX<S>& g = tp.grad(self);
    const ArrayX<S>& bv = tp.node(ib).value;
    if (tp.node(ia).requires_grad) tp.grad(ia) += g / bv;
    if (tp.node(ib).requires_grad) {
      tp.grad(ib) -= g * tp.node(ia).value / (bv * bv);
    }
  });
}

template <class S>
Value<S> add_scalar(Value<S> a, S s) {
  ArrayX<S> v = a.array() + s;
  return unary_node(a, a.shape(), std::move(v), [](Tape<S>& tp, int ia, int self) {
    tp.accumulate_grad(ia, tp.grad(self));
  });
}

template <class S>
Value<S> mul_scalar(Value<S> a, S s) {
  ArrayX<S> v = a.array() * s;
  return unary_node(a, a.shape(), std::move(v), [s](Tape<S>& tp, int ia, int self) {
    if (tp.node(ia).requires_grad) tp.grad(ia) += tp.grad(self) * s;
  });
}

template <class S>
Value<S> sum(Value<S> a) {
  ArrayX<S> v(1);
  v[0] = a.array().sum();
  return unary_node(a, Shape::scalar(), std::move(v), [](Tape<S>& tp, int ia, int self) {
    if (tp.node(ia).requires_grad) tp.grad(ia) += tp.grad(self)[0];
  });
}

template <class S>
Value<S> mean(Value<S> a) {
  const S inv = S(1) / static_cast<S>(a.array().size());
  ArrayX<S> v(1);
  v[0] = a.array().sum() * inv;
  return unary_node(a, Shape::scalar(), std::move(v), [inv](Tape<S>& tp, int ia, int self) {
    if (tp.node(ia).requires_grad) tp.grad(ia) += tp.grad(self)[0] * inv;
  });
}

template <class S>
Value<S> tanh(Value<S> a) {
  ArrayX<S> v = a.array().tanh();
  return unary_node(a, a.shape(), std::move(v), [](Tape<S>& tp, int ia, int self) {
    if (!tp.node(ia).requires_grad) return;
    const ArrayX<S>& y = tp.node(self).value;
    tp.grad(ia) += tp.grad(self) * (S(1) - y * y);
  });
}

template <class S>
Value<S> sigmoid(Value<S> a) {
  ArrayX<S> v = (S(1) / (S(1) + (-a.array()).exp()));
  return unary_node(a, a.shape(), std::move(v), [](Tape<S>& tp, int ia, int self) {
    if (!tp.node(ia).requires_grad) return;
    const ArrayX<S>& y = tp.node(self).value;
    tp.grad(ia) += tp.grad(self) * y * (S(1) - y);
  });
}

template <class S>
Value<S> leaky_relu(Value<S> a, S slope) {
  const ArrayX<S>& x = a.array();
  ArrayX<S> v(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) v[i] = x[i] > S(0) ? x[i] : x[i] * slope;
  return unary_node(a, a.shape(), std::move(v), [slope](Tape<S>& tp, int ia, int self) {
    if (!tp.node(ia).requires_grad) return;
    const ArrayX<S>& x = tp.node(ia).value;
    const ArrayX<S>& g = tp.grad(self);
    ArrayX<S>& gi = tp.grad(ia);
    for (Eigen::Index i = 0; i < x.size(); ++i) gi[i] += x[i] > S(0) ? g[i] : g[i] * slope;
  });
}

template <class S>
Value<S> relu(Value<S> a) {
  return leaky_relu(a, S(0));
}

template <class S>
Value<S> softmax_last(Value<S> a) {
  const Shape& sh = a.shape();
  if (sh.rank() < 1) throw ShapeError("softmax_last: needs at least 1 axis");
  const int dim = sh[sh.rank() - 1];
  const std::int64_t rows = sh.numel() / dim;
  ArrayX<S> v(sh.numel());
  for (std::int64_t r = 0; r < rows; ++r) {
    auto row = a.array().segment(r * dim, dim);
    const S mx = row.maxCoeff();
    ArrayX<S> e = (row - mx).exp();
    v.segment(r * dim, dim) = e / e.sum();
  }
  return unary_node(a, sh, std::move(v), [dim, rows](Tape<S>& tp, int ia, int self) {
    if (!tp.node(ia).requires_grad) return;
    const ArrayX<S>& s = tp.node(self).value;
    const ArrayX<S>& g = tp.grad(self);
    ArrayX<S>& gi = tp.grad(ia);
    for (std::int64_t r = 0; r < rows; ++r) {
      auto srow = s.segment(r * dim, dim);
      auto grow = g.segment(r * dim, dim);
      const S dot = (srow * grow).sum();
      gi.segment(r * dim, dim) += srow * (grow - dot);
    }
  });
}

template <class S>
Value<S> reshape(Value<S> a, Shape target) {
  if (target.numel() != a.shape().numel()) {
    throw ShapeError("reshape: element count mismatch " + a.shape().str() + " -> " +
                     target.str());
  }
  ArrayX<S> v = a.array();
  return unary_node(a, target, std::move(v), [](Tape<S>& tp, int ia, int self) {
    tp.accumulate_grad(ia, tp.grad(self));
  });
}

template <class S>
Value<S> permute(Value<S> a, const std::vector<int>& perm) {
  const Shape& sh = a.shape();
  const int r = sh.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch");
  std::array<int, 5> out_dims{1, 1, 1, 1, 1};
  std::array<bool, 5> used{};
  for (int i = 0; i < r; ++i) {
    if (perm[i] < 0 || perm[i] >= r || used[perm[i]]) throw ShapeError("permute: bad axes");
    used[perm[i]] = true;
    out_dims[i] = sh[perm[i]];
  }
  Shape out_shape;
  switch (r) {
    case 1: out_shape = Shape{out_dims[0]}; break;
    case 2: out_shape = Shape{out_dims[0], out_dims[1]}; break;
    case 3: out_shape = Shape{out_dims[0], out_dims[1], out_dims[2]}; break;
    case 4: out_shape = Shape{out_dims[0], out_dims[1], out_dims[2], out_dims[3]}; break;
    default: out_shape = Shape{out_dims[0], out_dims[1], out_dims[2], out_dims[3], out_dims[4]};
  }

  // Strides of the input in row-major order.
  std::array<std::int64_t, 5> in_stride{};
  {
    std::int64_t s = 1;
    for (int i = r - 1; i >= 0; --i) {
      in_stride[i] = s;
      s *= sh[i];
    }
  }
  const std::int64_t n = sh.numel();
  ArrayX<S> v(n);
  std::vector<std::int64_t> src_of(static_cast<std::size_t>(n));
  {
    std::array<int, 5> idx{};  // output multi-index
    for (std::int64_t o = 0; o < n; ++o) {
      std::int64_t src = 0;
      for (int i = 0; i < r; ++i) src += std::int64_t(idx[i]) * in_stride[perm[i]];
      v[o] = a.array()[src];
      src_of[static_cast<std::size_t>(o)] = src;
      for (int i = r - 1; i >= 0; --i) {
        if (++idx[i] < out_shape[i]) break;
        idx[i] = 0;
      }
    }
  }
  return unary_node(a, out_shape, std::move(v),
                    [src_of = std::move(src_of)](Tape<S>& tp, int ia, int self) {
                      if (!tp.node(ia).requires_grad) return;
                      const ArrayX<S>& g = tp.grad(self);
                      ArrayX<S>& gi = tp.grad(ia);
                      for (std::int64_t o = 0; o < g.size(); ++o) {
                        gi[src_of[static_cast<std::size_t>(o)]] += g[o];
                      }
                    });
}

template <class S>
Value<S> concat_channels(Value<S> a, Value<S> b) {
  check_same_tape("concat_channels", a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != 5 || sb.rank() != 5) throw ShapeError("concat_channels: rank-5 inputs required");
  for (int i : {0, 2, 3, 4}) {
    if (sa[i] != sb[i]) {
      throw ShapeError("concat_channels: axis " + std::to_string(i) + " mismatch " + sa.str() +
                       " vs " + sb.str());
    }
  }
  const Shape out_shape{sa[0], sa[1] + sb[1], sa[2], sa[3], sa[4]};
  const std::int64_t spatial = std::int64_t(sa[2]) * sa[3] * sa[4];
  const std::int64_t ca = sa[1], cb = sb[1];
  ArrayX<S> v(out_shape.numel());
  for (int bb = 0; bb < sa[0]; ++bb) {
    v.segment(bb * (ca + cb) * spatial, ca * spatial) = a.array().segment(bb * ca * spatial, ca * spatial);
    v.segment(bb * (ca + cb) * spatial + ca * spatial, cb * spatial) =
        b.array().segment(bb * cb * spatial, cb * spatial);
  }
  const int batch = sa[0];
  return binary_node(a, b, out_shape, std::move(v),
                     [spatial, ca, cb, batch](Tape<S>& tp, int ia, int ib, int self) {
                       const ArrayX<S>& g = tp.grad(self);
                       for (int bb = 0; bb < batch; ++bb) {
                         if (tp.node(ia).requires_grad) {
                           tp.grad(ia).segment(bb * ca * spatial, ca * spatial) +=
                               g.segment(bb * (ca + cb) * spatial, ca * spatial);
                         }
                         if (tp.node(ib).requires_grad) {
                           tp.grad(ib).segment(bb * cb * spatial, cb * spatial) +=
                               g.segment(bb * (ca + cb) * spatial + ca * spatial, cb * spatial);
                         }
                       }
                     });
}

template <class S>
Value<S> detach(Value<S> a) {
  Tape<S>& t = *a.tape();
  return t.make_node(a.shape(), a.array(), false, {});
}

// --- convolution -----------------------------------------------------------

template <class S>
Value<S> conv3d(Value<S> x, Value<S> w, Value<S> bias, Conv3dOpts opts) {
  check_same_tape("conv3d", x, w);
  check_same_tape("conv3d", x, bias);
  const ConvGeometry g = conv_geometry(x, w, bias, opts);
  Tape<S>& t = *x.tape();
  const Shape out_shape{g.batch, g.cout, g.oz, g.oy, g.ox};
  ArrayX<S> out(out_shape.numel());

  // Forward im2col buffers are kept for the backward pass when any gradient
  // will be needed (saves a full re-gather).
  auto cached_cols = std::make_shared<std::vector<MatRM<S>>>();
  const int ix_node = x.node(), iw = w.node(), ib = bias.node();
  const bool rg = t.node(ix_node).requires_grad || t.node(iw).requires_grad ||
                  t.node(ib).requires_grad;
  if constexpr (std::is_same_v<S, float>) {
    const std::int64_t K = g.cin * g.kvol();
    const std::int64_t N = g.out_spatial();
    MatRM<S> col(K, N);
    CMapRM<S> W(w.array().data(), g.cout, K);
    const bool keep = rg && t.node(iw).requires_grad;
    for (int b = 0; b < g.batch; ++b) {
      im2col(x.array().data() + std::int64_t(b) * g.cin * g.in_spatial(), g, col);
      MapRM<S> dst(out.data() + std::int64_t(b) * g.cout * N, g.cout, N);
      dst.noalias() = W * col;
      dst.colwise() += Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>>(bias.array().data(),
                                                                          g.cout);
      if (keep) cached_cols->push_back(col);
    }
  } else {
    conv_direct(x.array().data(), w.array().data(), bias.array().data(), g, out.data());
  }

  Value<S> outv = t.make_node(out_shape, std::move(out), rg, {});
  if (!rg) return outv;
  const int self = outv.node();
  t.node(self).backward = [ix_node, iw, ib, self, g, cached_cols](Tape<S>& tp) {
    const ArrayX<S>& gout = tp.grad(self);
    const std::int64_t K = g.cin * g.kvol();
    const std::int64_t N = g.out_spatial();
    const bool need_x = tp.node(ix_node).requires_grad;
    const bool need_w = tp.node(iw).requires_grad;
    const bool need_b = tp.node(ib).requires_grad;

    if (need_b) {
      ArrayX<S>& gb = tp.grad(ib);
      for (int b = 0; b < g.batch; ++b)
        for (int o = 0; o < g.cout; ++o) {
          gb[o] += gout.segment((std::int64_t(b) * g.cout + o) * N, N).sum();
        }
    }
    if constexpr (std::is_same_v<S, float>) {
      MatRM<S> scratch;
      for (int b = 0; b < g.batch; ++b) {
        CMapRM<S> gout_mat(gout.data() + std::int64_t(b) * g.cout * N, g.cout, N);
        if (need_w) {
          const MatRM<S>* col = nullptr;
          if (static_cast<int>(cached_cols->size()) == g.batch) {
            col = &(*cached_cols)[static_cast<std::size_t>(b)];
          } else {
            scratch.resize(K, N);
            im2col(tp.node(ix_node).value.data() + std::int64_t(b) * g.cin * g.in_spatial(), g,
                   scratch);
            col = &scratch;
          }
          MapRM<S> gw(tp.grad(iw).data(), g.cout, K);
          gw.noalias() += gout_mat * col->transpose();
        }
        if (need_x) {
          CMapRM<S> W(tp.node(iw).value.data(), g.cout, K);
          MatRM<S> gcol(K, N);
          gcol.noalias() = W.transpose() * gout_mat;
          col2im_add(gcol, g, tp.grad(ix_node).data() + std::int64_t(b) * g.cin * g.in_spatial());
        }
      }
      cached_cols->clear();
    } else {
      // Direct scatter loops for the 64-bit verification path.
      const S* xv = tp.node(ix_node).value.data();
      const S* wv = tp.node(iw).value.data();
      const std::int64_t in_plane = std::int64_t(g.iy) * g.ix;
      for (int b = 0; b < g.batch; ++b) {
        for (int o = 0; o < g.cout; ++o) {
          const S* wo = wv + std::int64_t(o) * K;
          const S* go = gout.data() + (std::int64_t(b) * g.cout + o) * N;
          std::int64_t n = 0;
          for (int oz = 0; oz < g.oz; ++oz)
            for (int oy = 0; oy < g.oy; ++oy)
              for (int ox = 0; ox < g.ox; ++ox, ++n) {
                const S gv = go[n];
                if (gv == S(0)) continue;
                const int z0 = oz * g.stride - g.pad;
                const int y0 = oy * g.stride - g.pad;
                const int x0 = ox * g.stride - g.pad;
                std::int64_t k = 0;
                for (int c = 0; c < g.cin; ++c)
                  for (int kz = 0; kz < g.kz; ++kz)
                    for (int ky = 0; ky < g.ky; ++ky)
                      for (int kx = 0; kx < g.kx; ++kx, ++k) {
                        const int z = z0 + kz, y = y0 + ky, xx = x0 + kx;
                        if (z < 0 || y < 0 || xx < 0 || z >= g.iz || y >= g.iy || xx >= g.ix)
                          continue;
                        const std::int64_t xi =
                            (std::int64_t(b) * g.cin + c) * g.iz * in_plane +
                            (std::int64_t(z) * g.iy + y) * g.ix + xx;
                        if (tp.node(iw).requires_grad) tp.grad(iw)[o * K + k] += gv * xv[xi];
                        if (tp.node(ix_node).requires_grad) tp.grad(ix_node)[xi] += gv * wo[k];
                      }
              }
        }
      }
    }
  };
  return outv;
}

// --- pooling ---------------------------------------------------------------

namespace {

enum class PoolKind { Max, Min, Avg };

template <class S>
Value<S> pool3d(Value<S> x, PoolOpts opts, PoolKind kind, const char* name) {
  const Shape& sh = x.shape();
  if (sh.rank() != 5) throw ShapeError(std::string(name) + ": input must be (B,C,Z,Y,X)");
  if (opts.kernel < 1 || opts.stride < 1 || opts.pad < 0 || opts.pad >= opts.kernel) {
    throw ShapeError(std::string(name) + ": bad kernel/stride/pad");
  }
  const int B = sh[0], C = sh[1], iz = sh[2], iy = sh[3], ix = sh[4];
  const int oz = (iz + 2 * opts.pad - opts.kernel) / opts.stride + 1;
  const int oy = (iy + 2 * opts.pad - opts.kernel) / opts.stride + 1;
  const int ox = (ix + 2 * opts.pad - opts.kernel) / opts.stride + 1;
  if (oz <= 0 || oy <= 0 || ox <= 0) throw ShapeError(std::string(name) + ": window too large");

  const Shape out_shape{B, C, oz, oy, ox};
  ArrayX<S> out(out_shape.numel());
  const std::int64_t in_plane = std::int64_t(iy) * ix;
  const std::int64_t n_out = out_shape.numel();

  // For max/min: linear input index of the selected element (first hit in
  // window scan order). For avg: the in-bounds window size.
  std::vector<std::int32_t> aux(static_cast<std::size_t>(n_out));

  std::int64_t n = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const S* src = x.array().data() + (std::int64_t(b) * C + c) * iz * in_plane;
      const std::int64_t base = (std::int64_t(b) * C + c) * iz * in_plane;
      for (int z = 0; z < oz; ++z)
        for (int y = 0; y < oy; ++y)
          for (int xx = 0; xx < ox; ++xx, ++n) {
            const int z0 = z * opts.stride - opts.pad;
            const int y0 = y * opts.stride - opts.pad;
            const int x0 = xx * opts.stride - opts.pad;
            S best = kind == PoolKind::Max ? -std::numeric_limits<S>::infinity()
                     : kind == PoolKind::Min ? std::numeric_limits<S>::infinity()
                                             : S(0);
            std::int64_t best_idx = -1;
            int count = 0;
            for (int kz = 0; kz < opts.kernel; ++kz) {
              const int zz = z0 + kz;
              if (zz < 0 || zz >= iz) continue;
              for (int ky = 0; ky < opts.kernel; ++ky) {
                const int yy = y0 + ky;
                if (yy < 0 || yy >= iy) continue;
                for (int kx = 0; kx < opts.kernel; ++kx) {
                  const int xi = x0 + kx;
                  if (xi < 0 || xi >= ix) continue;
                  const std::int64_t idx = (std::int64_t(zz) * iy + yy) * ix + xi;
                  const S v = src[idx];
                  ++count;
                  switch (kind) {
                    case PoolKind::Max:
                      if (v > best) { best = v; best_idx = idx; }
                      break;
                    case PoolKind::Min:
                      if (v < best) { best = v; best_idx = idx; }
                      break;
                    case PoolKind::Avg:
                      best += v;
                      break;
                  }
                }
              }
            }
            if (count == 0) throw ShapeError(std::string(name) + ": empty window");
            if (kind == PoolKind::Avg) {
              out[n] = best / static_cast<S>(count);
              aux[static_cast<std::size_t>(n)] = count;
            } else {
              out[n] = best;
              aux[static_cast<std::size_t>(n)] = static_cast<std::int32_t>(best_idx);
              (void)base;
            }
          }
    }

  struct Geometry {
    int B, C, iz, iy, ix, oz, oy, ox;
    PoolOpts opts;
    PoolKind kind;
  } geo{B, C, iz, iy, ix, oz, oy, ox, opts, kind};

  return unary_node(x, out_shape, std::move(out),
                    [aux = std::move(aux), geo](Tape<S>& tp, int ia, int self) {
                      if (!tp.node(ia).requires_grad) return;
                      const ArrayX<S>& g = tp.grad(self);
                      ArrayX<S>& gi = tp.grad(ia);
                      const std::int64_t in_plane = std::int64_t(geo.iy) * geo.ix;
                      const std::int64_t out_spatial = std::int64_t(geo.oz) * geo.oy * geo.ox;
                      std::int64_t n = 0;
                      for (int b = 0; b < geo.B; ++b)
                        for (int c = 0; c < geo.C; ++c) {
                          const std::int64_t base = (std::int64_t(b) * geo.C + c) * geo.iz * in_plane;
                          if (geo.kind != PoolKind::Avg) {
                            for (std::int64_t k = 0; k < out_spatial; ++k, ++n) {
                              gi[base + aux[static_cast<std::size_t>(n)]] += g[n];
                            }
                          } else {
                            std::int64_t k = 0;
                            for (int z = 0; z < geo.oz; ++z)
                              for (int y = 0; y < geo.oy; ++y)
                                for (int xx = 0; xx < geo.ox; ++xx, ++k, ++n) {
                                  const S share = g[n] / static_cast<S>(aux[static_cast<std::size_t>(n)]);
                                  const int z0 = z * geo.opts.stride - geo.opts.pad;
                                  const int y0 = y * geo.opts.stride - geo.opts.pad;
                                  const int x0 = xx * geo.opts.stride - geo.opts.pad;
                                  for (int kz = 0; kz < geo.opts.kernel; ++kz) {
                                    const int zz = z0 + kz;
                                    if (zz < 0 || zz >= geo.iz) continue;
                                    for (int ky = 0; ky < geo.opts.kernel; ++ky) {
                                      const int yy = y0 + ky;
                                      if (yy < 0 || yy >= geo.iy) continue;
                                      for (int kx = 0; kx < geo.opts.kernel; ++kx) {
                                        const int xi = x0 + kx;
                                        if (xi < 0 || xi >= geo.ix) continue;
                                        gi[base + (std::int64_t(zz) * geo.iy + yy) * geo.ix + xi] +=
                                            share;
                                      }
                                    }
                                  }
                                }
                          }
                        }
                    });
}

}  // namespace

template <class S>
Value<S> max_pool3d(Value<S> x, PoolOpts opts) {
  return pool3d(x, opts, PoolKind::Max, "max_pool3d");
}
template <class S>
Value<S> min_pool3d(Value<S> x, PoolOpts opts) {
  return pool3d(x, opts, PoolKind::Min, "min_pool3d");
}
template <class S>
Value<S> avg_pool3d(Value<S> x, PoolOpts opts) {
  return pool3d(x, opts, PoolKind::Avg, "avg_pool3d");
}

template <class S>
Value<S> upsample_nearest2x(Value<S> x) {
  const Shape& sh = x.shape();
  if (sh.rank() != 5) throw ShapeError("upsample_nearest2x: input must be (B,C,Z,Y,X)");
  const int B = sh[0], C = sh[1], iz = sh[2], iy = sh[3], ix = sh[4];
  const Shape out_shape{B, C, 2 * iz, 2 * iy, 2 * ix};
  ArrayX<S> out(out_shape.numel());
  const std::int64_t in_plane = std::int64_t(iy) * ix;
  std::int64_t n = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const S* src = x.array().data() + (std::int64_t(b) * C + c) * iz * in_plane;
      for (int z = 0; z < 2 * iz; ++z)
        for (int y = 0; y < 2 * iy; ++y)
          for (int xx = 0; xx < 2 * ix; ++xx, ++n) {
            out[n] = src[(std::int64_t(z / 2) * iy + y / 2) * ix + xx / 2];
          }
    }
  struct Geo {
    int B, C, iz, iy, ix;
  } geo{B, C, iz, iy, ix};
  return unary_node(x, out_shape, std::move(out), [geo](Tape<S>& tp, int ia, int self) {
    if (!tp.node(ia).requires_grad) return;
    const ArrayX<S>& g = tp.grad(self);
    ArrayX<S>& gi = tp.grad(ia);
    const std::int64_t in_plane = std::int64_t(geo.iy) * geo.ix;
    std::int64_t n = 0;
    for (int b = 0; b < geo.B; ++b)
      for (int c = 0; c < geo.C; ++c) {
        S* dst = gi.data() + (std::int64_t(b) * geo.C + c) * geo.iz * in_plane;
        for (int z = 0; z < 2 * geo.iz; ++z)
          for (int y = 0; y < 2 * geo.iy; ++y)
            for (int xx = 0; xx < 2 * geo.ix; ++xx, ++n) {
              dst[(std::int64_t(z / 2) * geo.iy + y / 2) * geo.ix + xx / 2] += g[n];
            }
      }
  });
}

// --- dense / attention ------------------------------------------------------

template <class S>
Value<S> linear(Value<S> x, Value<S> w, Value<S> bias) {
  check_same_tape("linear", x, w);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.rank() != 2) throw ShapeError("linear: weight must be (Out,In)");
  const int in = ws[1], out_dim = ws[0];
  if (xs.rank() < 1 || xs[xs.rank() - 1] != in) {
    throw ShapeError("linear: last axis of input " + xs.str() + " must equal In=" +
                     std::to_string(in));
  }
  if (bias.shape().rank() != 1 || bias.shape()[0] != out_dim) {
    throw ShapeError("linear: bias must be (Out)");
  }
  const std::int64_t rows = xs.numel() / in;
  std::array<int, 5> od{};
  for (int i = 0; i < xs.rank() - 1; ++i) od[i] = xs[i];
  od[xs.rank() - 1] = out_dim;
  Shape out_shape;
  switch (xs.rank()) {
    case 1: out_shape = Shape{od[0]}; break;
    case 2: out_shape = Shape{od[0], od[1]}; break;
    case 3: out_shape = Shape{od[0], od[1], od[2]}; break;
    case 4: out_shape = Shape{od[0], od[1], od[2], od[3]}; break;
    default: out_shape = Shape{od[0], od[1], od[2], od[3], od[4]};
  }

  ArrayX<S> out(out_shape.numel());
  {
    CMapRM<S> X(x.array().data(), rows, in);
    CMapRM<S> W(w.array().data(), out_dim, in);
    MapRM<S> Y(out.data(), rows, out_dim);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += Eigen::Map<const Eigen::RowVector<S, Eigen::Dynamic>>(bias.array().data(),
                                                                         out_dim);
  }
  Tape<S>& t = *x.tape();
  const int ix = x.node(), iw = w.node(), ib = bias.node();
  const bool rg =
      t.node(ix).requires_grad || t.node(iw).requires_grad || t.node(ib).requires_grad;
  Value<S> outv = t.make_node(out_shape, std::move(out), rg, {});
  if (!rg) return outv;
  const int self = outv.node();
  t.node(self).backward = [ix, iw, ib, self, rows, in, out_dim](Tape<S>& tp) {
    CMapRM<S> gY(tp.grad(self).data(), rows, out_dim);
    if (tp.node(ix).requires_grad) {
      CMapRM<S> W(tp.node(iw).value.data(), out_dim, in);
      MapRM<S> gX(tp.grad(ix).data(), rows, in);
      gX.noalias() += gY * W;
    }
    if (tp.node(iw).requires_grad) {
      CMapRM<S> X(tp.node(ix).value.data(), rows, in);
      MapRM<S> gW(tp.grad(iw).data(), out_dim, in);
      gW.noalias() += gY.transpose() * X;
    }
    if (tp.node(ib).requires_grad) {
      Eigen::Map<Eigen::RowVector<S, Eigen::Dynamic>> gB(tp.grad(ib).data(), out_dim);
      gB += gY.colwise().sum();
    }
  };
  return outv;
}

namespace {

template <class S>
Value<S> matmul_impl(Value<S> a, Value<S> b, bool transpose_b, const char* name) {
  check_same_tape(name, a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() < 2 || sa.rank() != sb.rank()) {
    throw ShapeError(std::string(name) + ": ranks must match and be >= 2");
  }
  const int r = sa.rank();
  std::int64_t batch = 1;
  for (int i = 0; i < r - 2; ++i) {
    if (sa[i] != sb[i]) throw ShapeError(std::string(name) + ": batch axes differ");
    batch *= sa[i];
  }
  const int m = sa[r - 2], k = sa[r - 1];
  const int bk = transpose_b ? sb[r - 1] : sb[r - 2];
  const int n = transpose_b ? sb[r - 2] : sb[r - 1];
  if (bk != k) {
    throw ShapeError(std::string(name) + ": inner dims differ: " + sa.str() + " vs " + sb.str());
  }
  std::array<int, 5> od{};
  for (int i = 0; i < r - 2; ++i) od[i] = sa[i];
  od[r - 2] = m;
  od[r - 1] = n;
  Shape out_shape;
  switch (r) {
    case 2: out_shape = Shape{od[0], od[1]}; break;
    case 3: out_shape = Shape{od[0], od[1], od[2]}; break;
    case 4: out_shape = Shape{od[0], od[1], od[2], od[3]}; break;
    default: out_shape = Shape{od[0], od[1], od[2], od[3], od[4]};
  }

  ArrayX<S> out(out_shape.numel());
  const std::int64_t a_stride = std::int64_t(m) * k;
  const std::int64_t b_stride = std::int64_t(transpose_b ? n : k) * (transpose_b ? k : n);
  const std::int64_t o_stride = std::int64_t(m) * n;
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    CMapRM<S> A(a.array().data() + bi * a_stride, m, k);
    MapRM<S> O(out.data() + bi * o_stride, m, n);
    if (transpose_b) {
      CMapRM<S> B(b.array().data() + bi * b_stride, n, k);
      O.noalias() = A * B.transpose();
    } else {
      CMapRM<S> B(b.array().data() + bi * b_stride, k, n);
      O.noalias() = A * B;
    }
  }
  Tape<S>& t = *a.tape();
  const int ia = a.node(), ib = b.node();
  const bool rg = t.node(ia).requires_grad || t.node(ib).requires_grad;
  Value<S> outv = t.make_node(out_shape, std::move(out), rg, {});
  if (!rg) return outv;
  const int self = outv.node();
  t.node(self).backward = [ia, ib, self, batch, m, n, k, a_stride, b_stride, o_stride,
                           transpose_b](Tape<S>& tp) {
    for (std::int64_t bi = 0; bi < batch; ++bi) {
      CMapRM<S> gO(tp.grad(self).data() + bi * o_stride, m, n);
      if (tp.node(ia).requires_grad) {
        MapRM<S> gA(tp.grad(ia).data() + bi * a_stride, m, k);
        if (transpose_b) {
          CMapRM<S> B(tp.node(ib).value.data() + bi * b_stride, n, k);
          gA.noalias() += gO * B;
        } else {
          CMapRM<S> B(tp.node(ib).value.data() + bi * b_stride, k, n);
          gA.noalias() += gO * B.transpose();
        }
      }
      if (tp.node(ib).requires_grad) {
        CMapRM<S> A(tp.node(ia).value.data() + bi * a_stride, m, k);
        if (transpose_b) {
          MapRM<S> gB(tp.grad(ib).data() + bi * b_stride, n, k);
          gB.noalias() += gO.transpose() * A;
        } else {
          MapRM<S> gB(tp.grad(ib).data() + bi * b_stride, k, n);
          gB.noalias() += A.transpose() * gO;
        }
      }
    }
  };
  return outv;
}

}  // namespace

template <class S>
Value<S> matmul(Value<S> a, Value<S> b) {
  return matmul_impl(a, b, false, "matmul");
}
template <class S>
Value<S> matmul_nt(Value<S> a, Value<S> b) {
  return matmul_impl(a, b, true, "matmul_nt");
}

template <class S>
Value<S> patchify3d(Value<S> x, int px, int py, int pz) {
  const Shape& sh = x.shape();
  if (sh.rank() != 5) throw ShapeError("patchify3d: input must be (B,C,Z,Y,X)");
  const int B = sh[0], C = sh[1], iz = sh[2], iy = sh[3], ix = sh[4];
  if (px < 1 || py < 1 || pz < 1 || iz % pz != 0 || iy % py != 0 || ix % px != 0) {
    std::string axes;
    if (pz < 1 || iz % pz != 0) axes += " z";
    if (py < 1 || iy % py != 0) axes += " y";
    if (px < 1 || ix % px != 0) axes += " x";
    throw ShapeError("patchify3d: dims " + sh.str() + " not divisible by patch on axes:" + axes);
  }
  const int gz = iz / pz, gy = iy / py, gx = ix / px;
  const int tokens = gz * gy * gx;
  const int feat = C * pz * py * px;
  const Shape out_shape{B, tokens, feat};
  ArrayX<S> out(out_shape.numel());
  const std::int64_t in_plane = std::int64_t(iy) * ix;
  std::int64_t o = 0;
  for (int b = 0; b < B; ++b) {
    const S* xb = x.array().data() + std::int64_t(b) * C * iz * in_plane;
    for (int tz = 0; tz < gz; ++tz)
      for (int ty = 0; ty < gy; ++ty)
        for (int tx = 0; tx < gx; ++tx)
          for (int c = 0; c < C; ++c)
            for (int lz = 0; lz < pz; ++lz)
              for (int ly = 0; ly < py; ++ly)
                for (int lx = 0; lx < px; ++lx, ++o) {
                  const std::int64_t src = std::int64_t(c) * iz * in_plane +
                                           (std::int64_t(tz * pz + lz) * iy + ty * py + ly) * ix +
                                           tx * px + lx;
                  out[o] = xb[src];
                }
  }
  struct Geo {
    int B, C, iz, iy, ix, px, py, pz, gx, gy, gz;
  } geo{B, C, iz, iy, ix, px, py, pz, gx, gy, gz};
  return unary_node(x, out_shape, std::move(out), [geo](Tape<S>& tp, int ia, int self) {
    if (!tp.node(ia).requires_grad) return;
    const ArrayX<S>& g = tp.grad(self);
    ArrayX<S>& gi = tp.grad(ia);
    const std::int64_t in_plane = std::int64_t(geo.iy) * geo.ix;
    std::int64_t o = 0;
    for (int b = 0; b < geo.B; ++b) {
      S* dst = gi.data() + std::int64_t(b) * geo.C * geo.iz * in_plane;
      for (int tz = 0; tz < geo.gz; ++tz)
        for (int ty = 0; ty < geo.gy; ++ty)
          for (int tx = 0; tx < geo.gx; ++tx)
            for (int c = 0; c < geo.C; ++c)
              for (int lz = 0; lz < geo.pz; ++lz)
                for (int ly = 0; ly < geo.py; ++ly)
                  for (int lx = 0; lx < geo.px; ++lx, ++o) {
                    const std::int64_t src =
                        std::int64_t(c) * geo.iz * in_plane +
                        (std::int64_t(tz * geo.pz + lz) * geo.iy + ty * geo.py + ly) * geo.ix +
                        tx * geo.px + lx;
                    dst[src] += g[o];
                  }
    }
  });
}

template <class S>
Value<S> concat_tokens(Value<S> a, Value<S> b) {
  check_same_tape("concat_tokens", a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != 3 || sb.rank() != 3 || sa[0] != sb[0] || sa[2] != sb[2]) {
    throw ShapeError("concat_tokens: need (B,T,D) inputs agreeing on B and D");
  }
  const int B = sa[0], Ta = sa[1], Tb = sb[1], D = sa[2];
  const Shape out_shape{B, Ta + Tb, D};
  ArrayX<S> v(out_shape.numel());
  for (int bb = 0; bb < B; ++bb) {
    v.segment(std::int64_t(bb) * (Ta + Tb) * D, std::int64_t(Ta) * D) =
        a.array().segment(std::int64_t(bb) * Ta * D, std::int64_t(Ta) * D);
    v.segment(std::int64_t(bb) * (Ta + Tb) * D + std::int64_t(Ta) * D, std::int64_t(Tb) * D) =
        b.array().segment(std::int64_t(bb) * Tb * D, std::int64_t(Tb) * D);
  }
  return binary_node(a, b, out_shape, std::move(v),
                     [B, Ta, Tb, D](Tape<S>& tp, int ia, int ib, int self) {
                       const ArrayX<S>& g = tp.grad(self);
                       for (int bb = 0; bb < B; ++bb) {
                         if (tp.node(ia).requires_grad) {
                           tp.grad(ia).segment(std::int64_t(bb) * Ta * D, std::int64_t(Ta) * D) +=
                               g.segment(std::int64_t(bb) * (Ta + Tb) * D, std::int64_t(Ta) * D);
                         }
                         if (tp.node(ib).requires_grad) {
                           tp.grad(ib).segment(std::int64_t(bb) * Tb * D, std::int64_t(Tb) * D) +=
                               g.segment(std::int64_t(bb) * (Ta + Tb) * D + std::int64_t(Ta) * D,
                                         std::int64_t(Tb) * D);
                         }
                       }
                     });
}

template <class S>
Value<S> select_token(Value<S> x, int token) {
  const Shape& sh = x.shape();
  if (sh.rank() != 3) throw ShapeError("select_token: input must be (B,T,D)");
  const int B = sh[0], T = sh[1], D = sh[2];
  if (token < 0 || token >= T) throw ShapeError("select_token: token index out of range");
  ArrayX<S> v(std::int64_t(B) * D);
  for (int bb = 0; bb < B; ++bb) {
    v.segment(std::int64_t(bb) * D, D) =
        x.array().segment((std::int64_t(bb) * T + token) * D, D);
  }
  return unary_node(x, Shape{B, D}, std::move(v), [B, T, D, token](Tape<S>& tp, int ia, int self) {
    if (!tp.node(ia).requires_grad) return;
    const ArrayX<S>& g = tp.grad(self);
    for (int bb = 0; bb < B; ++bb) {
      tp.grad(ia).segment((std::int64_t(bb) * T + token) * D, D) +=
          g.segment(std::int64_t(bb) * D, D);
    }
  });
}

template <class S>
Value<S> tile_batch(Value<S> x, int batch) {
  const Shape& sh = x.shape();
  if (sh.rank() < 1 || sh[0] != 1) throw ShapeError("tile_batch: leading axis must be 1");
  if (batch < 1) throw ShapeError("tile_batch: batch must be >= 1");
  std::array<int, 5> od{};
  for (int i = 0; i < sh.rank(); ++i) od[i] = sh[i];
  od[0] = batch;
  Shape out_shape;
  switch (sh.rank()) {
    case 1: out_shape = Shape{od[0]}; break;
    case 2: out_shape = Shape{od[0], od[1]}; break;
    case 3: out_shape = Shape{od[0], od[1], od[2]}; break;
    case 4: out_shape = Shape{od[0], od[1], od[2], od[3]}; break;
    default: out_shape = Shape{od[0], od[1], od[2], od[3], od[4]};
  }
  const std::int64_t len = sh.numel();
  ArrayX<S> v(out_shape.numel());
  for (int bb = 0; bb < batch; ++bb) v.segment(bb * len, len) = x.array();
  return unary_node(x, out_shape, std::move(v), [batch, len](Tape<S>& tp, int ia, int self) {
    if (!tp.node(ia).requires_grad) return;
    const ArrayX<S>& g = tp.grad(self);
    for (int bb = 0; bb < batch; ++bb) tp.grad(ia) += g.segment(bb * len, len);
  });
}

// --- normalization ----------------------------------------------------------

namespace {

// Shared implementation: normalize contiguous groups of length `len`;
// `param_of(group)` maps a group to its gamma/beta index.
template <class S>
Value<S> norm_impl(Value<S> x, Value<S> gamma, Value<S> beta, S eps, std::int64_t groups,
                   std::int64_t len, std::int64_t params, bool param_is_channel, int channels,
                   const char* name) {
  if (gamma.shape().numel() != params || beta.shape().numel() != params) {
    throw ShapeError(std::string(name) + ": gamma/beta must have " + std::to_string(params) +
                     " elements");
  }
  check_same_tape(name, x, gamma);
  check_same_tape(name, x, beta);

  ArrayX<S> xhat(x.array().size());
  ArrayX<S> inv_std(groups);
  ArrayX<S> out(x.array().size());
  for (std::int64_t gidx = 0; gidx < groups; ++gidx) {
    auto seg = x.array().segment(gidx * len, len);
    const S mu = seg.mean();
    const S var = (seg - mu).square().sum() / static_cast<S>(len);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[gidx] = is;
    xhat.segment(gidx * len, len) = (seg - mu) * is;
    if (param_is_channel) {
      // instance norm: one gamma/beta per channel
      const std::int64_t p = gidx % channels;
      out.segment(gidx * len, len) =
          xhat.segment(gidx * len, len) * gamma.array()[p] + beta.array()[p];
    } else {
      // layer norm: gamma/beta span the normalized axis
      out.segment(gidx * len, len) =
          xhat.segment(gidx * len, len) * gamma.array() + beta.array();
    }
  }

  Tape<S>& t = *x.tape();
  const int ix = x.node(), ig = gamma.node(), ib = beta.node();
  const bool rg =
      t.node(ix).requires_grad || t.node(ig).requires_grad || t.node(ib).requires_grad;
  Value<S> outv = t.make_node(x.shape(), std::move(out), rg, {});
  if (!rg) return outv;
  const int self = outv.node();
  t.node(self).backward = [ix, ig, ib, self, xhat = std::move(xhat), inv_std = std::move(inv_std),
                           groups, len, param_is_channel, channels](Tape<S>& tp) {
    const ArrayX<S>& g = tp.grad(self);
    const ArrayX<S>& gamma_v = tp.node(ig).value;
    for (std::int64_t gidx = 0; gidx < groups; ++gidx) {
      auto gseg = g.segment(gidx * len, len);
      auto xh = xhat.segment(gidx * len, len);
      if (tp.node(ig).requires_grad) {
        if (param_is_channel) {
          tp.grad(ig)[gidx % channels] += (gseg * xh).sum();
        } else {
          tp.grad(ig) += gseg * xh;
        }
      }
      if (tp.node(ib).requires_grad) {
        if (param_is_channel) {
          tp.grad(ib)[gidx % channels] += gseg.sum();
        } else {
          tp.grad(ib) += gseg;
        }
      }
      if (tp.node(ix).requires_grad) {
        ArrayX<S> gy(len);
        if (param_is_channel) {
          gy = gseg * gamma_v[gidx % channels];
        } else {
          gy = gseg * gamma_v;
        }
        const S mean_gy = gy.mean();
        const S mean_gy_xh = (gy * xh).mean();
        tp.grad(ix).segment(gidx * len, len) +=
            inv_std[gidx] * (gy - mean_gy - xh * mean_gy_xh);
      }
    }
  };
  return outv;
}

}  // namespace

template <class S>
Value<S> layer_norm(Value<S> x, Value<S> gamma, Value<S> beta, S eps) {
  const Shape& sh = x.shape();
  if (sh.rank() < 1) throw ShapeError("layer_norm: empty shape");
  const std::int64_t len = sh[sh.rank() - 1];
  return norm_impl(x, gamma, beta, eps, sh.numel() / len, len, len, false, 0, "layer_norm");
}

template <class S>
Value<S> instance_norm(Value<S> x, Value<S> gamma, Value<S> beta, S eps) {
  const Shape& sh = x.shape();
  if (sh.rank() != 5) throw ShapeError("instance_norm: input must be (B,C,Z,Y,X)");
  const std::int64_t len = std::int64_t(sh[2]) * sh[3] * sh[4];
  const std::int64_t groups = std::int64_t(sh[0]) * sh[1];
  return norm_impl(x, gamma, beta, eps, groups, len, sh[1], true, sh[1], "instance_norm");
}

// --- losses ------------------------------------------------------------------

template <class S>
Value<S> bce_with_logits_mean(Value<S> logits, Value<S> targets) {
  check_same_tape("bce_with_logits", logits, targets);
  check_same_shape("bce_with_logits", logits, targets);
  if (targets.tape()->node(targets.node()).requires_grad) {
    throw ShapeError("bce_with_logits: targets must not require gradients");
  }
  const ArrayX<S>& x = logits.array();
  const ArrayX<S>& tgt = targets.array();
  // max(x,0) - x*t + log1p(exp(-|x|))
  ArrayX<S> per = x.max(S(0)) - x * tgt + (S(1) + (-x.abs()).exp()).log();
  ArrayX<S> v(1);
  v[0] = per.mean();
  const S inv = S(1) / static_cast<S>(x.size());
  return unary_node(logits, Shape::scalar(), std::move(v),
                    [inv, it = targets.node()](Tape<S>& tp, int ia, int self) {
                      if (!tp.node(ia).requires_grad) return;
                      const ArrayX<S>& x = tp.node(ia).value;
                      const ArrayX<S>& tgt = tp.node(it).value;
                      const ArrayX<S> sig = S(1) / (S(1) + (-x).exp());
                      tp.grad(ia) += tp.grad(self)[0] * inv * (sig - tgt);
                    });
}

template <class S>
Value<S> l1_mean(Value<S> a, Value<S> b) {
  check_same_tape("l1_mean", a, b);
  check_same_shape("l1_mean", a, b);
  Tape<S>& t = *a.tape();
  ArrayX<S> diff = t.node(a.node()).value - t.node(b.node()).value;
  ArrayX<S> v(1);
  v[0] = diff.abs().mean();
  const S inv = S(1) / static_cast<S>(diff.size());
  return binary_node(a, b, Shape::scalar(), std::move(v),
                     [inv](Tape<S>& tp, int ia, int ib, int self) {
                       const ArrayX<S> sign =
                           (tp.node(ia).value - tp.node(ib).value).sign();
                       const S g = tp.grad(self)[0] * inv;
                       if (tp.node(ia).requires_grad) tp.grad(ia) += g * sign;
                       if (tp.node(ib).requires_grad) tp.grad(ib) -= g * sign;
                     });
}

template <class S>
Value<S> multi_head_attention(Value<S> x, Value<S> wq, Value<S> bq, Value<S> wk, Value<S> bk,
                              Value<S> wv, Value<S> bv, Value<S> wo, Value<S> bo, int heads) {
  Shape in_shape = x.shape();
  Value<S> x3 = x;
  if (in_shape.rank() == 2) {
    x3 = reshape(x, Shape{1, in_shape[0], in_shape[1]});
  } else if (in_shape.rank() != 3) {
    throw ShapeError("multi_head_attention: input must be (T,D) or (B,T,D)");
  }
  const int B = x3.shape()[0], T = x3.shape()[1], D = x3.shape()[2];
  if (heads < 1 || D % heads != 0) {
    throw ShapeError("multi_head_attention: dim " + std::to_string(D) +
                     " not divisible by heads " + std::to_string(heads));
  }
  const int dh = D / heads;

  auto split = [&](Value<S> v) {
    // (B,T,D) -> (B,H,T,dh)
    return permute(reshape(v, Shape{B, T, heads, dh}), {0, 2, 1, 3});
  };
  Value<S> q = split(linear(x3, wq, bq));
  Value<S> k = split(linear(x3, wk, bk));
  Value<S> v = split(linear(x3, wv, bv));

  Value<S> scores = mul_scalar(matmul_nt(q, k), S(1) / std::sqrt(static_cast<S>(dh)));
  Value<S> attn = softmax_last(scores);
  Value<S> ctx = matmul(attn, v);                       // (B,H,T,dh)
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), Shape{B, T, D});
  Value<S> out = linear(ctx, wo, bo);
  if (in_shape.rank() == 2) out = reshape(out, in_shape);
  return out;
}

// --- gradient certification ---------------------------------------------------

GradCheckReport grad_check(
    const std::function<Value<double>(Tape<double>&, const std::vector<Value<double>>&)>& f,
    std::vector<TensorData<double>> inputs, double eps, double tol) {
  auto eval = [&](const std::vector<TensorData<double>>& ins) {
    Tape<double> tape;
    std::vector<Value<double>> leaves;
    leaves.reserve(ins.size());
    for (const auto& t : ins) leaves.push_back(tape.leaf(t, false));
    Value<double> loss = f(tape, leaves);
    if (loss.shape().numel() != 1) throw ShapeError("grad_check: f must return a scalar");
    return loss.array()[0];
  };

  // Analytic gradients.
  std::vector<ArrayX<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Value<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    Value<double> loss = f(tape, leaves);
    if (loss.shape().numel() != 1) throw ShapeError("grad_check: f must return a scalar");
    tape.backward(loss);
    for (const auto& leaf : leaves) {
      analytic.push_back(tape.has_grad(leaf.node()) ? tape.grad(leaf.node())
                                                    : ArrayX<double>::Zero(leaf.array().size()));
    }
  }

  GradCheckReport report;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    for (std::int64_t j = 0; j < inputs[which].data.size(); ++j) {
      const double saved = inputs[which].data[j];
      auto numeric_at = [&](double h) {
        inputs[which].data[j] = saved + h;
        const double hi = eval(inputs);
        inputs[which].data[j] = saved - h;
        const double lo = eval(inputs);
        inputs[which].data[j] = saved;
        return (hi - lo) / (2.0 * h);
      };
      const double a = analytic[which][j];
      const double n = numeric_at(eps);
      const double denom = std::max(std::abs(a), std::abs(n));
      double rel = denom < 1e-7 ? 0.0 : std::abs(a - n) / denom;
      if (rel > tol) {
        // Distinguish kinks from genuine failures. For a piecewise-linear
        // kink inside [x-eps, x+eps], the one-sided slopes disagree by
        // exactly twice the central-difference error; for a smooth function
        // with a wrong analytic gradient they stay symmetric. A probe whose
        // discrepancy is explained by that asymmetry is skipped.
        inputs[which].data[j] = saved;
        const double f0 = eval(inputs);
        inputs[which].data[j] = saved + eps;
        const double fp = eval(inputs);
        inputs[which].data[j] = saved - eps;
        const double fm = eval(inputs);
        inputs[which].data[j] = saved;
        const double n_plus = (fp - f0) / eps;
        const double n_minus = (f0 - fm) / eps;
        const double central = 0.5 * (n_plus + n_minus);
        if (std::abs(n_plus - n_minus) > 1.2 * std::abs(a - central)) {
          ++report.skipped_kinks;
          continue;
        }
        const double n2 = numeric_at(eps / 2.0);
        const double denom2 = std::max(std::abs(a), std::abs(n2));
        rel = denom2 < 1e-7 ? 0.0 : std::abs(a - n2) / denom2;
      }
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  return report;
}

// --- explicit instantiations ---------------------------------------------------

#define AIRWAY_AD_INSTANTIATE(S)                                                              \
  template Value<S> add<S>(Value<S>, Value<S>);                                               \
  template Value<S> sub<S>(Value<S>, Value<S>);                                               \
  template Value<S> mul<S>(Value<S>, Value<S>);                                               \
  template Value<S> div<S>(Value<S>, Value<S>);                                               \
  template Value<S> add_scalar<S>(Value<S>, S);                                               \
  template Value<S> mul_scalar<S>(Value<S>, S);                                               \
  template Value<S> sum<S>(Value<S>);                                                         \
  template Value<S> mean<S>(Value<S>);                                                        \
  template Value<S> tanh<S>(Value<S>);                                                        \
  template Value<S> sigmoid<S>(Value<S>);                                                     \
  template Value<S> leaky_relu<S>(Value<S>, S);                                               \
  template Value<S> relu<S>(Value<S>);                                                        \
  template Value<S> softmax_last<S>(Value<S>);                                                \
  template Value<S> reshape<S>(Value<S>, Shape);                                              \
  template Value<S> permute<S>(Value<S>, const std::vector<int>&);                            \
  template Value<S> concat_channels<S>(Value<S>, Value<S>);                                   \
  template Value<S> detach<S>(Value<S>);                                                      \
  template Value<S> conv3d<S>(Value<S>, Value<S>, Value<S>, Conv3dOpts);                      \
  template Value<S> max_pool3d<S>(Value<S>, PoolOpts);                                        \
  template Value<S> min_pool3d<S>(Value<S>, PoolOpts);                                        \
  template Value<S> avg_pool3d<S>(Value<S>, PoolOpts);                                        \
  template Value<S> upsample_nearest2x<S>(Value<S>);                                          \
  template Value<S> linear<S>(Value<S>, Value<S>, Value<S>);                                  \
  template Value<S> matmul<S>(Value<S>, Value<S>);                                            \
  template Value<S> matmul_nt<S>(Value<S>, Value<S>);                                         \
  template Value<S> patchify3d<S>(Value<S>, int, int, int);                                   \
  template Value<S> concat_tokens<S>(Value<S>, Value<S>);                                     \
  template Value<S> select_token<S>(Value<S>, int);                                           \
  template Value<S> tile_batch<S>(Value<S>, int);                                             \
  template Value<S> layer_norm<S>(Value<S>, Value<S>, Value<S>, S);                           \
  template Value<S> instance_norm<S>(Value<S>, Value<S>, Value<S>, S);                        \
  template Value<S> bce_with_logits_mean<S>(Value<S>, Value<S>);                              \
  template Value<S> l1_mean<S>(Value<S>, Value<S>);                                           \
  template Value<S> multi_head_attention<S>(Value<S>, Value<S>, Value<S>, Value<S>, Value<S>, \
                                            Value<S>, Value<S>, Value<S>, Value<S>, int);

AIRWAY_AD_INSTANTIATE(float)
AIRWAY_AD_INSTANTIATE(double)

#undef AIRWAY_AD_INSTANTIATE

}  // namespace airway::ad
