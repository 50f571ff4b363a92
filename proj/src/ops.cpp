#include "hds/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace hds {

namespace testing {
namespace {
std::atomic<bool> g_conv_fault{false};
}
void set_conv_backward_fault(bool on) { g_conv_fault = on; }
bool conv_backward_fault() { return g_conv_fault; }
}  // namespace testing

namespace {

template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Upper bound on im2col buffer size (elements).
constexpr Index kColumnBudget = Index(1) << 20;

template <typename Scalar>
bool tracks(const Tensor<Scalar>& t) {
  return t.defined() && t.requires_grad();
}

template <typename Scalar>
void record(Tensor<Scalar>& out, const char* op, std::vector<Tensor<Scalar>> parents,
            std::function<void(const Vec<Scalar>&)> fn) {
  if (!grad_enabled()) return;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor<Scalar>& p) { return tracks(p); });
  if (!any) return;
  out.set_requires_grad(true);
  out.set_node(std::make_shared<Node<Scalar>>(Node<Scalar>{op, std::move(parents), std::move(fn)}));
}

// Gradient buffers are allocated by backward() for every tensor it visits.
template <typename Scalar>
Vec<Scalar>& grad_of(const Tensor<Scalar>& t) {
  return t.impl()->grad;
}

void require_4d(const char* op, const Shape& s) {
  if (s.size() != 4) {
    throw ShapeError(std::string(op) + ": expected a 4-D tensor, got " + to_string(s));
  }
}

template <typename Scalar>
void require_no_nan(const Tensor<Scalar>& x, const char* op) {
  if (x.values().isNaN().any()) throw NumericError(std::string(op) + ": NaN input");
}

Index ceil_div(Index a, Index b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
Index floor_div(Index a, Index b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

struct ConvGeometry {
  Index channels, height, width, kh, kw, stride, pad, out_h, out_w;

  // Valid output-column range [lo, hi] for kernel column kj.
  std::pair<Index, Index> valid_cols(Index kj) const {
    const Index lo = std::max<Index>(0, ceil_div(pad - kj, stride));
    const Index hi = std::min<Index>(out_w - 1, floor_div(width - 1 + pad - kj, stride));
    return {lo, hi};
  }
};

// col: (C*kh*kw) x (rows*out_w), row-major.
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Index row0, Index rows, Scalar* col) {
  const Index cols = rows * g.out_w;
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        Scalar* dst = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        const auto [lo, hi] = g.valid_cols(kj);
        for (Index r = 0; r < rows; ++r) {
          Scalar* d = dst + r * g.out_w;
          const Index ih = (row0 + r) * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height || lo > hi) {
            std::fill(d, d + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = x + (c * g.height + ih) * g.width;
          const Index shift = kj - g.pad;
          std::fill(d, d + lo, Scalar(0));
          if (g.stride == 1) {
            std::copy(src + lo + shift, src + hi + 1 + shift, d + lo);
          } else {
            for (Index ow = lo; ow <= hi; ++ow) d[ow] = src[ow * g.stride + shift];
          }
          std::fill(d + hi + 1, d + g.out_w, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, Index row0, Index rows, Scalar* x) {
  const Index cols = rows * g.out_w;
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const Scalar* srcrow = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        const auto [lo, hi] = g.valid_cols(kj);
        for (Index r = 0; r < rows; ++r) {
          const Index ih = (row0 + r) * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height) continue;
          const Scalar* s = srcrow + r * g.out_w;
          Scalar* dst = x + (c * g.height + ih) * g.width;
          const Index shift = kj - g.pad;
          for (Index ow = lo; ow <= hi; ++ow) dst[ow * g.stride + shift] += s[ow];
        }
      }
    }
  }
}

struct BilinearTap {
  Index i0, i1;
  double w1;
};

std::vector<BilinearTap> bilinear_taps(Index in, int factor) {
  std::vector<BilinearTap> taps(static_cast<std::size_t>(in * factor));
  for (Index o = 0; o < in * factor; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    Index i0 = static_cast<Index>(std::floor(src));
    BilinearTap t{};
    if (i0 >= in - 1) {
      t = {in - 1, in - 1, 0.0};
    } else {
      t = {i0, i0 + 1, src - static_cast<double>(i0)};
    }
    taps[static_cast<std::size_t>(o)] = t;
  }
  return taps;
}

void require_pool_extents(const char* op, const Shape& s, int stride) {
  require_4d(op, s);
  if (stride < 1) throw ValueError(std::string(op) + ": stride must be >= 1");
  if (s[2] % stride != 0 || s[3] % stride != 0) {
    throw ShapeError(std::string(op) + ": extents " + std::to_string(s[2]) + "x" +
                     std::to_string(s[3]) + " not divisible by stride " + std::to_string(stride));
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                      int stride, int pad) {
  require_4d("conv2d", x.shape());
  require_4d("conv2d", w.shape());
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " has " + std::to_string(x.dim(1)) +
                     " channels but weight " + to_string(w.shape()) + " expects " +
                     std::to_string(w.dim(1)));
  }
  if (stride < 1 || pad < 0) throw ValueError("conv2d: invalid stride/pad");
  const Index batch = x.dim(0), kout = w.dim(0);
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != kout)) {
    throw ShapeError("conv2d: bias " + to_string(b.shape()) + " does not match " +
                     std::to_string(kout) + " output channels");
  }
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride, pad, 0, 0};
  if (g.height + 2 * pad < g.kh || g.width + 2 * pad < g.kw) {
    throw ShapeError("conv2d: kernel larger than padded input " + to_string(x.shape()));
  }
  g.out_h = (g.height + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kw) / stride + 1;

  const Index patch = g.channels * g.kh * g.kw;
  const Index pixels = g.out_h * g.out_w;
  const Index in_plane = g.channels * g.height * g.width;
  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0;
  const Index rows_per_chunk =
      std::clamp<Index>(kColumnBudget / std::max<Index>(1, patch * g.out_w), 1, g.out_h);

  Tensor<Scalar> out(Shape{batch, kout, g.out_h, g.out_w});
  Eigen::Map<const RowMatrix<Scalar>> weight(w.data(), kout, patch);
  RowMatrix<Scalar> col;
  for (Index n = 0; n < batch; ++n) {
    const Scalar* xn = x.data() + n * in_plane;
    Eigen::Map<RowMatrix<Scalar>> on(out.data() + n * kout * pixels, kout, pixels);
    if (pointwise) {
      on.noalias() = weight * Eigen::Map<const RowMatrix<Scalar>>(xn, g.channels, pixels);
    } else {
      for (Index r0 = 0; r0 < g.out_h; r0 += rows_per_chunk) {
        const Index rows = std::min(rows_per_chunk, g.out_h - r0);
        col.resize(patch, rows * g.out_w);
        im2col(xn, g, r0, rows, col.data());
        on.middleCols(r0 * g.out_w, rows * g.out_w).noalias() = weight * col;
      }
    }
    if (b.defined()) on.colwise() += Eigen::Map<const ColVector<Scalar>>(b.data(), kout);
  }

  record<Scalar>(out, "conv2d", {x, w, b}, [=](const Vec<Scalar>& grad) {
    const bool want_x = tracks(x), want_w = tracks(w), want_b = tracks(b);
    Eigen::Map<const RowMatrix<Scalar>> wm(w.data(), kout, patch);
    RowMatrix<Scalar> dw;
    if (want_w) dw = RowMatrix<Scalar>::Zero(kout, patch);
    RowMatrix<Scalar> cols, dcols;
    for (Index n = 0; n < batch; ++n) {
      Eigen::Map<const RowMatrix<Scalar>> gn(grad.data() + n * kout * pixels, kout, pixels);
      const Scalar* xn = x.data() + n * in_plane;
      if (want_b) {
        Eigen::Map<ColVector<Scalar>>(grad_of(b).data(), kout) += gn.rowwise().sum();
      }
      if (pointwise) {
        Eigen::Map<const RowMatrix<Scalar>> xm(xn, g.channels, pixels);
        if (want_w) dw.noalias() += gn * xm.transpose();
        if (want_x) {
          Eigen::Map<RowMatrix<Scalar>>(grad_of(x).data() + n * in_plane, g.channels, pixels)
              .noalias() += wm.transpose() * gn;
        }
        continue;
      }
      for (Index r0 = 0; r0 < g.out_h; r0 += rows_per_chunk) {
        const Index rows = std::min(rows_per_chunk, g.out_h - r0);
        const auto gchunk = gn.middleCols(r0 * g.out_w, rows * g.out_w);
        if (want_w) {
          cols.resize(patch, rows * g.out_w);
          im2col(xn, g, r0, rows, cols.data());
          dw.noalias() += gchunk * cols.transpose();
        }
        if (want_x) {
          dcols.noalias() = wm.transpose() * gchunk;
          col2im_add(dcols.data(), g, r0, rows, grad_of(x).data() + n * in_plane);
        }
      }
    }
    if (want_w) {
      if (testing::conv_backward_fault()) dw *= Scalar(1.01);
      Eigen::Map<RowMatrix<Scalar>>(grad_of(w).data(), kout, patch) += dw;
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& x, int stride) {
  require_pool_extents("maxpool2d", x.shape(), stride);
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h / stride, ow = w / stride;
  Tensor<Scalar> out(Shape{x.dim(0), x.dim(1), oh, ow});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.size()));
  const Scalar* xv = x.data();
  Scalar* ov = out.data();
  for (Index p = 0; p < planes; ++p) {
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        Index best = (p * h + i * stride) * w + j * stride;
        for (Index di = 0; di < stride; ++di) {
          for (Index dj = 0; dj < stride; ++dj) {
            const Index k = (p * h + i * stride + di) * w + j * stride + dj;
            if (xv[k] > xv[best]) best = k;
          }
        }
        const Index o = (p * oh + i) * ow + j;
        ov[o] = xv[best];
        (*argmax)[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  record<Scalar>(out, "maxpool2d", {x}, [x, argmax](const Vec<Scalar>& grad) {
    Vec<Scalar>& gx = grad_of(x);
    for (std::size_t o = 0; o < argmax->size(); ++o) gx[(*argmax)[o]] += grad[static_cast<Index>(o)];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> avgpool2d(const Tensor<Scalar>& x, int stride) {
  require_pool_extents("avgpool2d", x.shape(), stride);
  if (stride == 1) return x;
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h / stride, ow = w / stride;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(stride * stride);
  Tensor<Scalar> out(Shape{x.dim(0), x.dim(1), oh, ow});
  const Scalar* xv = x.data();
  Scalar* ov = out.data();
  for (Index p = 0; p < planes; ++p) {
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        Scalar s = 0;
        for (Index di = 0; di < stride; ++di) {
          const Scalar* row = xv + (p * h + i * stride + di) * w + j * stride;
          for (Index dj = 0; dj < stride; ++dj) s += row[dj];
        }
        ov[(p * oh + i) * ow + j] = s * inv;
      }
    }
  }
  record<Scalar>(out, "avgpool2d", {x}, [=](const Vec<Scalar>& grad) {
    Scalar* gx = grad_of(x).data();
    for (Index p = 0; p < planes; ++p) {
      for (Index i = 0; i < oh; ++i) {
        for (Index j = 0; j < ow; ++j) {
          const Scalar g = grad[(p * oh + i) * ow + j] * inv;
          for (Index di = 0; di < stride; ++di) {
            Scalar* row = gx + (p * h + i * stride + di) * w + j * stride;
            for (Index dj = 0; dj < stride; ++dj) row[dj] += g;
          }
        }
      }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> upsample_bilinear(const Tensor<Scalar>& x, int factor) {
  require_4d("upsample_bilinear", x.shape());
  if (factor < 1) throw ValueError("upsample_bilinear: factor must be >= 1");
  if (factor == 1) return x;
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h * factor, ow = w * factor;
  const auto rows = bilinear_taps(h, factor);
  const auto cols = bilinear_taps(w, factor);
  Tensor<Scalar> out(Shape{x.dim(0), x.dim(1), oh, ow});
  const Scalar* xv = x.data();
  Scalar* ov = out.data();
  for (Index p = 0; p < planes; ++p) {
    const Scalar* xp = xv + p * h * w;
    for (Index i = 0; i < oh; ++i) {
      const auto& r = rows[static_cast<std::size_t>(i)];
      const Scalar wr1 = static_cast<Scalar>(r.w1), wr0 = Scalar(1) - wr1;
      const Scalar* top = xp + r.i0 * w;
      const Scalar* bottom = xp + r.i1 * w;
      Scalar* orow = ov + (p * oh + i) * ow;
      for (Index j = 0; j < ow; ++j) {
        const auto& c = cols[static_cast<std::size_t>(j)];
        const Scalar wc1 = static_cast<Scalar>(c.w1), wc0 = Scalar(1) - wc1;
        orow[j] = wr0 * (wc0 * top[c.i0] + wc1 * top[c.i1]) +
                  wr1 * (wc0 * bottom[c.i0] + wc1 * bottom[c.i1]);
      }
    }
  }
  record<Scalar>(out, "upsample_bilinear", {x}, [=](const Vec<Scalar>& grad) {
    Scalar* gx = grad_of(x).data();
    for (Index p = 0; p < planes; ++p) {
      Scalar* gp = gx + p * h * w;
      for (Index i = 0; i < oh; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        const Scalar wr1 = static_cast<Scalar>(r.w1), wr0 = Scalar(1) - wr1;
        Scalar* top = gp + r.i0 * w;
        Scalar* bottom = gp + r.i1 * w;
        const Scalar* grow = grad.data() + (p * oh + i) * ow;
        for (Index j = 0; j < ow; ++j) {
          const auto& c = cols[static_cast<std::size_t>(j)];
          const Scalar wc1 = static_cast<Scalar>(c.w1), wc0 = Scalar(1) - wc1;
          const Scalar g = grow[j];
          top[c.i0] += wr0 * wc0 * g;
          top[c.i1] += wr0 * wc1 * g;
          bottom[c.i0] += wr1 * wc0 * g;
          bottom[c.i1] += wr1 * wc1 * g;
        }
      }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_4d("concat_channels", a.shape());
  require_4d("concat_channels", b.shape());
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " disagree on N, H or W");
  }
  const Index batch = a.dim(0), plane = a.dim(2) * a.dim(3);
  const Index ca = a.dim(1) * plane, cb = b.dim(1) * plane;
  Tensor<Scalar> out(Shape{batch, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
  for (Index n = 0; n < batch; ++n) {
    out.values().segment(n * (ca + cb), ca) = a.values().segment(n * ca, ca);
    out.values().segment(n * (ca + cb) + ca, cb) = b.values().segment(n * cb, cb);
  }
  record<Scalar>(out, "concat_channels", {a, b}, [=](const Vec<Scalar>& grad) {
    for (Index n = 0; n < batch; ++n) {
      if (tracks(a)) grad_of(a).segment(n * ca, ca) += grad.segment(n * (ca + cb), ca);
      if (tracks(b)) grad_of(b).segment(n * cb, cb) += grad.segment(n * (ca + cb) + ca, cb);
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  require_no_nan(x, "relu");
  Tensor<Scalar> out(x.shape(), x.values().max(Scalar(0)).eval());
  record<Scalar>(out, "relu", {x}, [x](const Vec<Scalar>& grad) {
    grad_of(x) += (x.values() > Scalar(0)).select(grad, Scalar(0));
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  require_no_nan(x, "sigmoid");
  Vec<Scalar> y(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar v = x.values()[i];
    if (v >= Scalar(0)) {
      y[i] = Scalar(1) / (Scalar(1) + std::exp(-v));
    } else {
      const Scalar e = std::exp(v);
      y[i] = e / (Scalar(1) + e);
    }
  }
  Tensor<Scalar> out(x.shape(), std::move(y));
  const Tensor<Scalar> saved = out.detach();
  record<Scalar>(out, "sigmoid", {x}, [x, saved](const Vec<Scalar>& grad) {
    const auto& s = saved.values();
    grad_of(x) += grad * s * (Scalar(1) - s);
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x) {
  require_no_nan(x, "log");
  if ((x.values() <= Scalar(0)).any()) throw ValueError("log: non-positive input");
  Tensor<Scalar> out(x.shape(), x.values().log().eval());
  record<Scalar>(out, "log", {x}, [x](const Vec<Scalar>& grad) { grad_of(x) += grad / x.values(); });
  return out;
}

template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& x, Scalar lo, Scalar hi) {
  Tensor<Scalar> out(x.shape(), x.values().max(lo).min(hi).eval());
  record<Scalar>(out, "clamp", {x}, [x, lo, hi](const Vec<Scalar>& grad) {
    grad_of(x) += (x.values() > lo && x.values() < hi).select(grad, Scalar(0));
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<Scalar> out(a.shape(), (a.values() + b.values()).eval());
  record<Scalar>(out, "add", {a, b}, [a, b](const Vec<Scalar>& grad) {
    if (tracks(a)) grad_of(a) += grad;
    if (tracks(b)) grad_of(b) += grad;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<Scalar> out(a.shape(), (a.values() * b.values()).eval());
  record<Scalar>(out, "mul", {a, b}, [a, b](const Vec<Scalar>& grad) {
    if (tracks(a)) grad_of(a) += grad * b.values();
    if (tracks(b)) grad_of(b) += grad * a.values();
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> scalar_mul(const Tensor<Scalar>& x, Scalar c) {
  Tensor<Scalar> out(x.shape(), (x.values() * c).eval());
  record<Scalar>(out, "scalar_mul", {x}, [x, c](const Vec<Scalar>& grad) { grad_of(x) += grad * c; });
  return out;
}

template <typename Scalar>
Tensor<Scalar> reduce_sum(const Tensor<Scalar>& x) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(x.values().sum());
  record<Scalar>(out, "reduce_sum", {x}, [x](const Vec<Scalar>& grad) { grad_of(x) += grad[0]; });
  return out;
}

template <typename Scalar>
Tensor<Scalar> reduce_max_spatial(const Tensor<Scalar>& x) {
  require_4d("reduce_max_spatial", x.shape());
  const Index planes = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  if (plane == 0) throw ShapeError("reduce_max_spatial: empty spatial extent");
  Tensor<Scalar> out(Shape{x.dim(0), x.dim(1)});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(planes));
  for (Index p = 0; p < planes; ++p) {
    const Scalar* v = x.data() + p * plane;
    Index best = 0;
    for (Index k = 1; k < plane; ++k) {
      if (v[k] > v[best]) best = k;
    }
    out.values()[p] = v[best];
    (*argmax)[static_cast<std::size_t>(p)] = p * plane + best;
  }
  record<Scalar>(out, "reduce_max_spatial", {x}, [x, argmax](const Vec<Scalar>& grad) {
    for (std::size_t p = 0; p < argmax->size(); ++p) {
      grad_of(x)[(*argmax)[p]] += grad[static_cast<Index>(p)];
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, bool training, RngState rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValueError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  Vec<Scalar> mask(x.size());
  for (Index i = 0; i < x.size(); ++i) mask[i] = rng.uniform() < rate ? Scalar(0) : scale;
  Tensor<Scalar> out(x.shape(), (x.values() * mask).eval());
  record<Scalar>(out, "dropout", {x},
                 [x, mask = std::move(mask)](const Vec<Scalar>& grad) { grad_of(x) += grad * mask; });
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const Tensor<Scalar>& target) {
  require_4d("softmax_cross_entropy", logits.shape());
  const Index batch = logits.dim(0), classes = logits.dim(1);
  const Index plane = logits.dim(2) * logits.dim(3);
  if (target.shape() != Shape{batch, logits.dim(2), logits.dim(3)}) {
    throw ShapeError("softmax_cross_entropy: target " + to_string(target.shape()) +
                     " does not match logits " + to_string(logits.shape()));
  }
  for (Index i = 0; i < target.size(); ++i) {
    const Scalar t = target.values()[i];
    if (!(t >= 0 && t < classes && t == std::floor(t))) {
      throw ValueError("softmax_cross_entropy: target value " + std::to_string(t) +
                       " is not a class index in [0, " + std::to_string(classes) + ")");
    }
  }
  const Index count = batch * plane;
  double total = 0.0;
  for (Index n = 0; n < batch; ++n) {
    const Scalar* ln = logits.data() + n * classes * plane;
    for (Index q = 0; q < plane; ++q) {
      Scalar m = ln[q];
      for (Index k = 1; k < classes; ++k) m = std::max(m, ln[k * plane + q]);
      Scalar s = 0;
      for (Index k = 0; k < classes; ++k) s += std::exp(ln[k * plane + q] - m);
      const auto t = static_cast<Index>(target.values()[n * plane + q]);
      total += static_cast<double>(m + std::log(s) - ln[t * plane + q]);
    }
  }
  Tensor<Scalar> out = Tensor<Scalar>::scalar(static_cast<Scalar>(total / static_cast<double>(count)));
  record<Scalar>(out, "softmax_cross_entropy", {logits},
                 [=](const Vec<Scalar>& grad) {
                   const Scalar g = grad[0] / static_cast<Scalar>(count);
                   Scalar* gl = grad_of(logits).data();
                   for (Index n = 0; n < batch; ++n) {
                     const Scalar* ln = logits.data() + n * classes * plane;
                     Scalar* gn = gl + n * classes * plane;
                     for (Index q = 0; q < plane; ++q) {
                       Scalar m = ln[q];
                       for (Index k = 1; k < classes; ++k) m = std::max(m, ln[k * plane + q]);
                       Scalar s = 0;
                       for (Index k = 0; k < classes; ++k) s += std::exp(ln[k * plane + q] - m);
                       const auto t = static_cast<Index>(target.values()[n * plane + q]);
                       for (Index k = 0; k < classes; ++k) {
                         const Scalar p = std::exp(ln[k * plane + q] - m) / s;
                         gn[k * plane + q] += g * (p - (k == t ? Scalar(1) : Scalar(0)));
                       }
                     }
                   }
                 });
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax_channels(const Tensor<Scalar>& logits) {
  require_4d("softmax_channels", logits.shape());
  const Index batch = logits.dim(0), classes = logits.dim(1);
  const Index plane = logits.dim(2) * logits.dim(3);
  Tensor<Scalar> out(logits.shape());
  for (Index n = 0; n < batch; ++n) {
    const Scalar* ln = logits.data() + n * classes * plane;
    Scalar* on = out.data() + n * classes * plane;
    for (Index q = 0; q < plane; ++q) {
      Scalar m = ln[q];
      for (Index k = 1; k < classes; ++k) m = std::max(m, ln[k * plane + q]);
      Scalar s = 0;
      for (Index k = 0; k < classes; ++k) s += std::exp(ln[k * plane + q] - m);
      for (Index k = 0; k < classes; ++k) on[k * plane + q] = std::exp(ln[k * plane + q] - m) / s;
    }
  }
  return out;
}

template <typename Scalar>
void check_finite(const Tensor<Scalar>& x, const char* where) {
  if (!x.values().isFinite().all()) throw NumericError(std::string(where) + ": non-finite value");
}

#define HDS_INSTANTIATE_OPS(S)                                                                   \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int);    \
  template Tensor<S> maxpool2d(const Tensor<S>&, int);                                          \
  template Tensor<S> avgpool2d(const Tensor<S>&, int);                                          \
  template Tensor<S> upsample_bilinear(const Tensor<S>&, int);                                  \
  template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> relu(const Tensor<S>&);                                                    \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                 \
  template Tensor<S> log(const Tensor<S>&);                                                     \
  template Tensor<S> clamp(const Tensor<S>&, S, S);                                             \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> scalar_mul(const Tensor<S>&, S);                                           \
  template Tensor<S> reduce_sum(const Tensor<S>&);                                              \
  template Tensor<S> reduce_max_spatial(const Tensor<S>&);                                      \
  template Tensor<S> dropout(const Tensor<S>&, double, bool, RngState);                         \
  template Tensor<S> softmax_cross_entropy(const Tensor<S>&, const Tensor<S>&);                 \
  template Tensor<S> softmax_channels(const Tensor<S>&);                                        \
  template void check_finite(const Tensor<S>&, const char*);

HDS_INSTANTIATE_OPS(float)
HDS_INSTANTIATE_OPS(double)

#undef HDS_INSTANTIATE_OPS

}  // namespace hds
