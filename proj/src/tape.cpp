#include "cep/tape.hpp"

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace cep {

void runtime_tune() {
  // keep big short-lived tensors on the heap so pages get reused
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

namespace {

constexpr double kExpClamp = 700.0;  // exp(700) ~ 1e304, still finite

[[noreturn]] void fail(OpKind k, const std::string& msg) {
  throw std::invalid_argument(std::string(op_name(k)) + ": " + msg);
}

void check_same_shape(OpKind k, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    fail(k, "shape mismatch, expected " + shape_str(a.shape()) + " got " +
                shape_str(b.shape()));
  }
}

template <typename Fn>
void with_prec(Precision p, Fn&& fn) {
  if (p == Precision::f32) {
    fn(float{});
  } else {
    fn(double{});
  }
}

template <typename T, typename F>
void ew_unary(const Tensor& a, Tensor& y, F f) {
  const T* __restrict pa = a.data<T>();
  T* __restrict py = y.data<T>();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) py[i] = f(pa[i]);
}

template <typename T, typename F>
void ew_binary(const Tensor& a, const Tensor& b, Tensor& y, F f) {
  const T* __restrict pa = a.data<T>();
  const T* __restrict pb = b.data<T>();
  T* __restrict py = y.data<T>();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) py[i] = f(pa[i], pb[i]);
}

// grad += f(i) elementwise
template <typename T, typename F>
void accum(Tensor& g, F f) {
  T* __restrict pg = g.data<T>();
  const int64_t n = g.numel();
  for (int64_t i = 0; i < n; ++i) pg[i] += f(i);
}

// Decomposes a reduction over a contiguous block of axes into
// outer x mid x inner extents. Falls back to index arithmetic otherwise.
struct ReducePlan {
  bool contiguous = false;
  int64_t outer = 1, mid = 1, inner = 1;
  Shape out_shape;
  std::vector<int64_t> axes;  // sorted, unique
};

ReducePlan plan_reduce(OpKind k, const Shape& in, std::vector<int64_t> axes) {
  ReducePlan p;
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  if (axes.empty()) fail(k, "empty axis set");
  for (int64_t a : axes) {
    if (a < 0 || a >= static_cast<int64_t>(in.size())) {
      fail(k, "axis " + std::to_string(a) + " out of range for shape " +
                  shape_str(in));
    }
  }
  p.axes = axes;
  for (size_t d = 0; d < in.size(); ++d) {
    if (!std::binary_search(axes.begin(), axes.end(),
                            static_cast<int64_t>(d))) {
      p.out_shape.push_back(in[d]);
    }
  }
  if (p.out_shape.empty()) p.out_shape = {1};
  p.contiguous = (axes.back() - axes.front() + 1 ==
                  static_cast<int64_t>(axes.size()));
  if (p.contiguous) {
    for (int64_t d = 0; d < axes.front(); ++d) p.outer *= in[d];
    for (int64_t a : axes) p.mid *= in[a];
    for (size_t d = static_cast<size_t>(axes.back()) + 1; d < in.size(); ++d) {
      p.inner *= in[d];
    }
  }
  return p;
}

// Maps an input linear index to its reduction-group index (slow path).
int64_t group_index(const Shape& in, const std::vector<int64_t>& axes,
                    int64_t lin) {
  int64_t group = 0;
  for (int64_t d = static_cast<int64_t>(in.size()) - 1, rem = lin; d >= 0;
       --d) {
    int64_t idx = rem % in[d];
    rem /= in[d];
    if (!std::binary_search(axes.begin(), axes.end(), d)) {
      int64_t stride = 1;
      for (int64_t dd = d + 1; dd < static_cast<int64_t>(in.size()); ++dd) {
        if (!std::binary_search(axes.begin(), axes.end(), dd)) {
          stride *= in[dd];
        }
      }
      group += idx * stride;
    }
  }
  return group;
}

// Walks all (input index, group index) pairs in ascending input order.
template <typename F>
void for_each_group(const Shape& in_shape, const ReducePlan& p, F f) {
  if (p.contiguous) {
    for (int64_t o = 0; o < p.outer; ++o) {
      for (int64_t m = 0; m < p.mid; ++m) {
        const int64_t base = (o * p.mid + m) * p.inner;
        for (int64_t i = 0; i < p.inner; ++i) f(base + i, o * p.inner + i);
      }
    }
  } else {
    const int64_t n = numel_of(in_shape);
    for (int64_t i = 0; i < n; ++i) f(i, group_index(in_shape, p.axes, i));
  }
}

// ---- matmul kernels ----

template <typename T>
void matmul_fwd(const T* __restrict a, const T* __restrict b, T* __restrict y,
                int64_t n, int64_t k, int64_t m) {
  for (int64_t i = 0; i < n; ++i) {
    T* __restrict yr = y + i * m;
    for (int64_t j = 0; j < m; ++j) yr[j] = T(0);
    const T* ar = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = ar[kk];
      const T* __restrict br = b + kk * m;
      for (int64_t j = 0; j < m; ++j) yr[j] += av * br[j];
    }
  }
}

// ga += gy . b^T
template <typename T>
void matmul_bwd_a(const T* __restrict b, const T* __restrict gy,
                  T* __restrict ga, int64_t n, int64_t k, int64_t m) {
  for (int64_t i = 0; i < n; ++i) {
    const T* __restrict gr = gy + i * m;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T* __restrict br = b + kk * m;
      T acc = T(0);
      for (int64_t j = 0; j < m; ++j) acc += gr[j] * br[j];
      ga[i * k + kk] += acc;
    }
  }
}

// gb += a^T . gy
template <typename T>
void matmul_bwd_b(const T* __restrict a, const T* __restrict gy,
                  T* __restrict gb, int64_t n, int64_t k, int64_t m) {
  for (int64_t i = 0; i < n; ++i) {
    const T* __restrict gr = gy + i * m;
    const T* ar = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = ar[kk];
      T* __restrict gbr = gb + kk * m;
      for (int64_t j = 0; j < m; ++j) gbr[j] += av * gr[j];
    }
  }
}

// ---- conv2d kernels (NHWC, weights KH,KW,Ci,Co) ----

struct ConvDims {
  int64_t frames, h, w, ci, kh, kw, co, oh, ow, stride, pad;
};

constexpr int64_t kMaxConvChannels = 256;

// COC > 0 bakes the output-channel count into the code so the inner loops
// fully unroll; COC == 0 is the generic fallback.
template <typename T, int COC>
void conv2d_fwd_impl(const T* __restrict x, const T* __restrict wt,
                     const T* __restrict bias, T* __restrict y,
                     const ConvDims& d) {
  const int64_t co = COC > 0 ? COC : d.co;
  T acc[COC > 0 ? COC : kMaxConvChannels];
  for (int64_t f = 0; f < d.frames; ++f) {
    const T* xf = x + f * d.h * d.w * d.ci;
    T* yf = y + f * d.oh * d.ow * co;
    for (int64_t oh = 0; oh < d.oh; ++oh) {
      for (int64_t ow = 0; ow < d.ow; ++ow) {
        for (int64_t c = 0; c < co; ++c) acc[c] = bias[c];
        for (int64_t kh = 0; kh < d.kh; ++kh) {
          const int64_t ih = oh * d.stride - d.pad + kh;
          if (ih < 0 || ih >= d.h) continue;
          for (int64_t kw = 0; kw < d.kw; ++kw) {
            const int64_t iw = ow * d.stride - d.pad + kw;
            if (iw < 0 || iw >= d.w) continue;
            const T* __restrict xp = xf + (ih * d.w + iw) * d.ci;
            const T* __restrict wp = wt + ((kh * d.kw + kw) * d.ci) * co;
            for (int64_t ci = 0; ci < d.ci; ++ci) {
              const T xv = xp[ci];
              const T* __restrict wr = wp + ci * co;
              for (int64_t c = 0; c < co; ++c) acc[c] += xv * wr[c];
            }
          }
        }
        T* __restrict yp = yf + (oh * d.ow + ow) * co;
        for (int64_t c = 0; c < co; ++c) yp[c] = acc[c];
      }
    }
  }
}

template <typename T>
void conv2d_fwd(const T* x, const T* wt, const T* bias, T* y,
                const ConvDims& d) {
  switch (d.co) {
    case 16: conv2d_fwd_impl<T, 16>(x, wt, bias, y, d); break;
    case 32: conv2d_fwd_impl<T, 32>(x, wt, bias, y, d); break;
    default: conv2d_fwd_impl<T, 0>(x, wt, bias, y, d); break;
  }
}

template <typename T, int COC>
void conv2d_bwd_w_impl(const T* __restrict x, const T* __restrict gy,
                       T* __restrict gw, T* __restrict gb, const ConvDims& d) {
  const int64_t co = COC > 0 ? COC : d.co;
  for (int64_t f = 0; f < d.frames; ++f) {
    const T* xf = x + f * d.h * d.w * d.ci;
    const T* gyf = gy + f * d.oh * d.ow * co;
    for (int64_t oh = 0; oh < d.oh; ++oh) {
      for (int64_t ow = 0; ow < d.ow; ++ow) {
        const T* __restrict gp = gyf + (oh * d.ow + ow) * co;
        for (int64_t c = 0; c < co; ++c) gb[c] += gp[c];
        for (int64_t kh = 0; kh < d.kh; ++kh) {
          const int64_t ih = oh * d.stride - d.pad + kh;
          if (ih < 0 || ih >= d.h) continue;
          for (int64_t kw = 0; kw < d.kw; ++kw) {
            const int64_t iw = ow * d.stride - d.pad + kw;
            if (iw < 0 || iw >= d.w) continue;
            const T* __restrict xp = xf + (ih * d.w + iw) * d.ci;
            T* __restrict gwp = gw + ((kh * d.kw + kw) * d.ci) * co;
            for (int64_t ci = 0; ci < d.ci; ++ci) {
              const T xv = xp[ci];
              T* __restrict gwr = gwp + ci * co;
              for (int64_t c = 0; c < co; ++c) gwr[c] += xv * gp[c];
            }
          }
        }
      }
    }
  }
}

// Uses weights transposed to (kh, kw, co, ci) so the inner accumulation
// runs contiguously over input channels.
template <typename T, int CIC>
void conv2d_bwd_x_impl(const T* __restrict wtr, const T* __restrict gy,
                       T* __restrict gx, const ConvDims& d) {
  const int64_t ci = CIC > 0 ? CIC : d.ci;
  for (int64_t f = 0; f < d.frames; ++f) {
    const T* gyf = gy + f * d.oh * d.ow * d.co;
    T* gxf = gx + f * d.h * d.w * ci;
    for (int64_t oh = 0; oh < d.oh; ++oh) {
      for (int64_t ow = 0; ow < d.ow; ++ow) {
        const T* __restrict gp = gyf + (oh * d.ow + ow) * d.co;
        for (int64_t kh = 0; kh < d.kh; ++kh) {
          const int64_t ih = oh * d.stride - d.pad + kh;
          if (ih < 0 || ih >= d.h) continue;
          for (int64_t kw = 0; kw < d.kw; ++kw) {
            const int64_t iw = ow * d.stride - d.pad + kw;
            if (iw < 0 || iw >= d.w) continue;
            T* __restrict gxp = gxf + (ih * d.w + iw) * ci;
            const T* __restrict wp = wtr + ((kh * d.kw + kw) * d.co) * ci;
            for (int64_t c = 0; c < d.co; ++c) {
              const T gv = gp[c];
              const T* __restrict wr = wp + c * ci;
              for (int64_t i = 0; i < ci; ++i) gxp[i] += gv * wr[i];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_bwd_w(const T* x, const T* gy, T* gw, T* gb, const ConvDims& d) {
  switch (d.co) {
    case 16: conv2d_bwd_w_impl<T, 16>(x, gy, gw, gb, d); break;
    case 32: conv2d_bwd_w_impl<T, 32>(x, gy, gw, gb, d); break;
    default: conv2d_bwd_w_impl<T, 0>(x, gy, gw, gb, d); break;
  }
}

template <typename T>
void conv2d_bwd_x(const T* wt, const T* gy, T* gx, const ConvDims& d) {
  std::vector<T> wtr(static_cast<size_t>(d.kh * d.kw * d.ci * d.co));
  for (int64_t k = 0; k < d.kh * d.kw; ++k) {
    for (int64_t i = 0; i < d.ci; ++i) {
      for (int64_t c = 0; c < d.co; ++c) {
        wtr[static_cast<size_t>((k * d.co + c) * d.ci + i)] =
            wt[(k * d.ci + i) * d.co + c];
      }
    }
  }
  switch (d.ci) {
    case 16: conv2d_bwd_x_impl<T, 16>(wtr.data(), gy, gx, d); break;
    case 32: conv2d_bwd_x_impl<T, 32>(wtr.data(), gy, gx, d); break;
    default: conv2d_bwd_x_impl<T, 0>(wtr.data(), gy, gx, d); break;
  }
}

ConvDims conv_dims(OpKind k, const Tensor& x, const Tensor& w,
                   const Tensor& b, int64_t stride, int64_t pad) {
  if (x.rank() != 4 && x.rank() != 5) {
    fail(k, "input must be (F,H,W,C) or (N,T,H,W,C), got " +
                shape_str(x.shape()));
  }
  if (w.rank() != 4) {
    fail(k, "weights must be (KH,KW,Ci,Co), got " + shape_str(w.shape()));
  }
  if (stride < 1) fail(k, "stride must be positive");
  if (pad < 0) fail(k, "pad must be non-negative");
  ConvDims d;
  const int64_t lead = x.rank() - 3;
  d.frames = 1;
  for (int64_t i = 0; i < lead; ++i) d.frames *= x.extent(i);
  d.h = x.extent(lead);
  d.w = x.extent(lead + 1);
  d.ci = x.extent(lead + 2);
  d.kh = w.extent(0);
  d.kw = w.extent(1);
  d.co = w.extent(3);
  d.stride = stride;
  d.pad = pad;
  if (w.extent(2) != d.ci) {
    fail(k, "channel mismatch, input " + shape_str(x.shape()) + " weights " +
                shape_str(w.shape()));
  }
  if (d.co > kMaxConvChannels) {
    fail(k, "output channels " + std::to_string(d.co) + " exceed limit " +
                std::to_string(kMaxConvChannels));
  }
  if (b.rank() != 1 || b.extent(0) != d.co) {
    fail(k, "bias must be (" + std::to_string(d.co) + "), got " +
                shape_str(b.shape()));
  }
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.oh <= 0 || d.ow <= 0) {
    fail(k, "kernel " + shape_str(w.shape()) + " too large for input " +
                shape_str(x.shape()));
  }
  return d;
}

// ---- temporal-group normalization ----

struct TgnDims {
  int64_t n, t, h, w, c, chunks;
};

TgnDims tgn_dims(const Tensor& x, const Tensor& scale, const Tensor& shift,
                 const std::vector<int32_t>& chunk_of_t) {
  const OpKind k = OpKind::kTgnNorm;
  if (x.rank() != 5) {
    fail(k, "input must be (N,T,H,W,C), got " + shape_str(x.shape()));
  }
  TgnDims d{x.extent(0), x.extent(1), x.extent(2), x.extent(3), x.extent(4),
            0};
  if (static_cast<int64_t>(chunk_of_t.size()) != d.t) {
    fail(k, "chunk map covers " + std::to_string(chunk_of_t.size()) +
                " temporal indices, input has " + std::to_string(d.t));
  }
  for (int32_t c : chunk_of_t) {
    if (c < 0) fail(k, "temporal index missing from chunk map");
    d.chunks = std::max<int64_t>(d.chunks, c + 1);
  }
  if (scale.rank() != 1 || scale.extent(0) != d.c || !scale.same_shape(shift)) {
    fail(k, "scale/shift must be (" + std::to_string(d.c) + ")");
  }
  return d;
}

// Per-(chunk, channel) mean and inverse std over batch/height/width.
// Statistics accumulate in double regardless of storage precision.
template <typename T>
void tgn_stats(const Tensor& x, const TgnDims& d,
               const std::vector<int32_t>& chunk_of_t, Tensor& mean,
               Tensor& invstd, std::vector<int64_t>& count) {
  const int64_t hw = d.h * d.w;
  const T* __restrict px = x.data<T>();
  std::vector<double> sum(static_cast<size_t>(d.chunks * d.c), 0.0);
  std::vector<double> sq(static_cast<size_t>(d.chunks * d.c), 0.0);
  count.assign(static_cast<size_t>(d.chunks), 0);
  for (int64_t t = 0; t < d.t; ++t) {
    count[static_cast<size_t>(chunk_of_t[static_cast<size_t>(t)])] +=
        hw * d.n;
  }
  for (int64_t nn = 0; nn < d.n; ++nn) {
    for (int64_t t = 0; t < d.t; ++t) {
      const int64_t g = chunk_of_t[static_cast<size_t>(t)];
      const T* row = px + (nn * d.t + t) * hw * d.c;
      double* sg = sum.data() + g * d.c;
      for (int64_t i = 0; i < hw; ++i) {
        for (int64_t c = 0; c < d.c; ++c) {
          sg[c] += static_cast<double>(row[i * d.c + c]);
        }
      }
    }
  }
  for (int64_t g = 0; g < d.chunks; ++g) {
    if (count[static_cast<size_t>(g)] == 0) {
      fail(OpKind::kTgnNorm,
           "chunk " + std::to_string(g) + " has no temporal indices");
    }
    for (int64_t c = 0; c < d.c; ++c) {
      mean.set(g * d.c + c,
               sum[static_cast<size_t>(g * d.c + c)] /
                   static_cast<double>(count[static_cast<size_t>(g)]));
    }
  }
  for (int64_t nn = 0; nn < d.n; ++nn) {
    for (int64_t t = 0; t < d.t; ++t) {
      const int64_t g = chunk_of_t[static_cast<size_t>(t)];
      const T* row = px + (nn * d.t + t) * hw * d.c;
      double* qg = sq.data() + g * d.c;
      for (int64_t i = 0; i < hw; ++i) {
        for (int64_t c = 0; c < d.c; ++c) {
          const double dv =
              static_cast<double>(row[i * d.c + c]) - mean.at(g * d.c + c);
          qg[c] += dv * dv;
        }
      }
    }
  }
  for (int64_t g = 0; g < d.chunks; ++g) {
    for (int64_t c = 0; c < d.c; ++c) {
      const double v = sq[static_cast<size_t>(g * d.c + c)] /
                       static_cast<double>(count[static_cast<size_t>(g)]);
      invstd.set(g * d.c + c, 1.0 / std::sqrt(v + kEps));
    }
  }
}

template <typename T>
void tgn_apply(const Tensor& x, const TgnDims& d,
               const std::vector<int32_t>& chunk_of_t, const Tensor& mean,
               const Tensor& invstd, const Tensor& sc, const Tensor& sh,
               Tensor& y) {
  const int64_t hw = d.h * d.w;
  const T* __restrict px = x.data<T>();
  T* __restrict py = y.data<T>();
  std::vector<T> m(static_cast<size_t>(d.c)), r(static_cast<size_t>(d.c)),
      a(static_cast<size_t>(d.c)), b(static_cast<size_t>(d.c));
  for (int64_t nn = 0; nn < d.n; ++nn) {
    for (int64_t t = 0; t < d.t; ++t) {
      const int64_t g = chunk_of_t[static_cast<size_t>(t)];
      for (int64_t c = 0; c < d.c; ++c) {
        m[static_cast<size_t>(c)] = static_cast<T>(mean.at(g * d.c + c));
        r[static_cast<size_t>(c)] = static_cast<T>(invstd.at(g * d.c + c));
        a[static_cast<size_t>(c)] = static_cast<T>(sc.at(c));
        b[static_cast<size_t>(c)] = static_cast<T>(sh.at(c));
      }
      const T* row = px + (nn * d.t + t) * hw * d.c;
      T* out = py + (nn * d.t + t) * hw * d.c;
      for (int64_t i = 0; i < hw; ++i) {
        for (int64_t c = 0; c < d.c; ++c) {
          out[i * d.c + c] =
              a[static_cast<size_t>(c)] *
                  (row[i * d.c + c] - m[static_cast<size_t>(c)]) *
                  r[static_cast<size_t>(c)] +
              b[static_cast<size_t>(c)];
        }
      }
    }
  }
}

}  // namespace

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddConst: return "add_const";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRelu: return "relu";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kConcatLast: return "concat_last";
    case OpKind::kStackRows: return "stack_rows";
    case OpKind::kRowSlice: return "row_slice";
    case OpKind::kTimeSlice: return "time_slice";
    case OpKind::kReshape: return "reshape";
    case OpKind::kAddRowVec: return "add_rowvec";
    case OpKind::kReduceMean: return "reduce_mean";
    case OpKind::kReduceVar: return "reduce_var";
    case OpKind::kReduceSum: return "reduce_sum";
    case OpKind::kDot: return "dot";
    case OpKind::kSqDist: return "sqdist";
    case OpKind::kRowL2Dist: return "l2dist_rows";
    case OpKind::kTgnNorm: return "tgn_norm";
    case OpKind::kStopGrad: return "stop_gradient";
  }
  return "unknown";
}

const Tensor& GradientMap::at(Var v) const {
  // ids are ascending by construction
  const auto it = std::lower_bound(ids_.begin(), ids_.end(), v.id);
  if (it == ids_.end() || *it != v.id) {
    throw std::invalid_argument("gradient map: node " + std::to_string(v.id) +
                                " is not a requires_grad leaf");
  }
  return grads_[static_cast<size_t>(it - ids_.begin())];
}

bool GradientMap::contains(Var v) const {
  return std::binary_search(ids_.begin(), ids_.end(), v.id);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = value.to(prec_);
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  if (v.tape != this || v.id < 0 ||
      v.id >= static_cast<int32_t>(nodes_.size())) {
    throw std::invalid_argument("tape: invalid var");
  }
  return nodes_[static_cast<size_t>(v.id)].value;
}

bool Tape::needs_grad(Var v) const {
  return nodes_[static_cast<size_t>(v.id)].needs_grad;
}

Var Tape::apply(OpKind kind, std::span<const Var> operands,
                const OpAttrs& attrs) {
  const int32_t ki = static_cast<int32_t>(kind);
  if (ki <= static_cast<int32_t>(OpKind::kLeaf) ||
      ki > static_cast<int32_t>(OpKind::kStopGrad)) {
    throw std::invalid_argument("apply: unknown op kind " +
                                std::to_string(ki));
  }
  Node n;
  n.kind = kind;
  n.attrs = attrs;
  n.operands.reserve(operands.size());
  for (const Var& v : operands) {
    if (v.tape != this) fail(kind, "operand from another tape");
    if (v.id < 0 || v.id >= static_cast<int32_t>(nodes_.size())) {
      fail(kind, "invalid operand");
    }
    n.operands.push_back(v.id);
    n.needs_grad = n.needs_grad || nodes_[static_cast<size_t>(v.id)].needs_grad;
  }
  if (kind == OpKind::kStopGrad) n.needs_grad = false;
  forward_node(n);
  return push(std::move(n));
}

void Tape::forward_node(Node& n) {
  const OpKind k = n.kind;
  auto opnd = [&](size_t i) -> const Tensor& {
    return nodes_[static_cast<size_t>(n.operands[i])].value;
  };
  auto expect_operands = [&](size_t c) {
    if (n.operands.size() != c) {
      fail(k, "expected " + std::to_string(c) + " operands, got " +
                  std::to_string(n.operands.size()));
    }
  };

  switch (k) {
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      expect_operands(2);
      const Tensor &a = opnd(0), &b = opnd(1);
      check_same_shape(k, a, b);
      n.value = Tensor::uninit(a.shape(), prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        if (k == OpKind::kAdd) {
          ew_binary<T>(a, b, n.value, [](T x, T y) { return x + y; });
        } else if (k == OpKind::kSub) {
          ew_binary<T>(a, b, n.value, [](T x, T y) { return x - y; });
        } else {
          ew_binary<T>(a, b, n.value, [](T x, T y) { return x * y; });
        }
      });
      break;
    }
    case OpKind::kScale:
    case OpKind::kAddConst: {
      expect_operands(1);
      const Tensor& a = opnd(0);
      n.value = Tensor::uninit(a.shape(), prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T c = static_cast<T>(n.attrs.scalar);
        if (k == OpKind::kScale) {
          ew_unary<T>(a, n.value, [c](T x) { return x * c; });
        } else {
          ew_unary<T>(a, n.value, [c](T x) { return x + c; });
        }
      });
      break;
    }
    case OpKind::kMatmul: {
      expect_operands(2);
      const Tensor &a = opnd(0), &b = opnd(1);
      if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
        fail(k, "shape mismatch " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
      }
      const int64_t nn = a.extent(0), kk = a.extent(1), m = b.extent(1);
      n.value = Tensor::uninit({nn, m}, prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        matmul_fwd<T>(a.data<T>(), b.data<T>(), n.value.data<T>(), nn, kk, m);
      });
      break;
    }
    case OpKind::kConv2d: {
      expect_operands(3);
      const Tensor &x = opnd(0), &w = opnd(1), &b = opnd(2);
      ConvDims d = conv_dims(k, x, w, b, n.attrs.stride, n.attrs.pad);
      Shape out(x.shape().begin(), x.shape().end() - 3);
      out.push_back(d.oh);
      out.push_back(d.ow);
      out.push_back(d.co);
      n.value = Tensor::uninit(out, prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        conv2d_fwd<T>(x.data<T>(), w.data<T>(), b.data<T>(),
                      n.value.data<T>(), d);
      });
      break;
    }
    case OpKind::kRelu: {
      expect_operands(1);
      const Tensor& a = opnd(0);
      n.value = Tensor::uninit(a.shape(), prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        ew_unary<T>(a, n.value, [](T x) { return x > T(0) ? x : T(0); });
      });
      break;
    }
    case OpKind::kExp: {
      expect_operands(1);
      const Tensor& a = opnd(0);
      n.value = Tensor::uninit(a.shape(), prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        ew_unary<T>(a, n.value, [](T x) {
          return static_cast<T>(
              std::exp(std::min(static_cast<double>(x), kExpClamp)));
        });
      });
      break;
    }
    case OpKind::kLog: {
      expect_operands(1);
      const Tensor& a = opnd(0);
      n.value = Tensor::uninit(a.shape(), prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        ew_unary<T>(a, n.value, [](T x) {
          return static_cast<T>(
              std::log(std::max(static_cast<double>(x), kEps)));
        });
      });
      break;
    }
    case OpKind::kSqrt: {
      expect_operands(1);
      const Tensor& a = opnd(0);
      n.value = Tensor::uninit(a.shape(), prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        ew_unary<T>(a, n.value, [](T x) {
          return static_cast<T>(
              std::sqrt(std::max(static_cast<double>(x) + kEps, 0.0)));
        });
      });
      break;
    }
    case OpKind::kConcatLast: {
      if (n.operands.empty()) fail(k, "needs at least one operand");
      const Tensor& first = opnd(0);
      int64_t last_total = 0;
      for (size_t i = 0; i < n.operands.size(); ++i) {
        const Tensor& t = opnd(i);
        if (t.rank() != first.rank()) fail(k, "rank mismatch");
        for (int64_t d = 0; d + 1 < t.rank(); ++d) {
          if (t.extent(d) != first.extent(d)) {
            fail(k, "shape mismatch " + shape_str(first.shape()) + " vs " +
                        shape_str(t.shape()));
          }
        }
        last_total += t.extent(t.rank() - 1);
      }
      Shape out = first.shape();
      out.back() = last_total;
      n.value = Tensor::uninit(out, prec_);
      const int64_t rows = n.value.numel() / last_total;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        T* y = n.value.data<T>();
        int64_t off = 0;
        for (size_t i = 0; i < n.operands.size(); ++i) {
          const Tensor& t = opnd(i);
          const int64_t w = t.extent(t.rank() - 1);
          const T* src = t.data<T>();
          for (int64_t r = 0; r < rows; ++r) {
            std::memcpy(y + r * last_total + off, src + r * w,
                        static_cast<size_t>(w) * sizeof(T));
          }
          off += w;
        }
      });
      break;
    }
    case OpKind::kStackRows: {
      if (n.operands.empty()) fail(k, "needs at least one operand");
      const Tensor& first = opnd(0);
      if (first.rank() != 1) fail(k, "operands must be vectors");
      const int64_t d = first.extent(0);
      n.value = Tensor::uninit(
          {static_cast<int64_t>(n.operands.size()), d}, prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        T* y = n.value.data<T>();
        for (size_t i = 0; i < n.operands.size(); ++i) {
          const Tensor& t = opnd(i);
          check_same_shape(k, first, t);
          std::memcpy(y + static_cast<int64_t>(i) * d, t.data<T>(),
                      static_cast<size_t>(d) * sizeof(T));
        }
      });
      break;
    }
    case OpKind::kRowSlice: {
      expect_operands(1);
      const Tensor& a = opnd(0);
      if (a.rank() < 2) fail(k, "needs rank >= 2, got " + shape_str(a.shape()));
      const int64_t rows = a.extent(0);
      const int64_t rw = a.numel() / rows;
      if (n.attrs.row < 0 || n.attrs.row >= rows) {
        fail(k, "row " + std::to_string(n.attrs.row) + " out of range");
      }
      Shape out(a.shape().begin() + 1, a.shape().end());
      n.value = Tensor::uninit(out, prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        std::memcpy(n.value.data<T>(), a.data<T>() + n.attrs.row * rw,
                    static_cast<size_t>(rw) * sizeof(T));
      });
      break;
    }
    case OpKind::kTimeSlice: {
      expect_operands(1);
      const Tensor& a = opnd(0);
      if (a.rank() < 3) fail(k, "needs rank >= 3, got " + shape_str(a.shape()));
      const int64_t m = a.extent(0), t = a.extent(1);
      const int64_t rest = a.numel() / (m * t);
      if (n.attrs.t0 < 0 || n.attrs.t1 > t || n.attrs.t0 >= n.attrs.t1) {
        fail(k, "range [" + std::to_string(n.attrs.t0) + "," +
                    std::to_string(n.attrs.t1) + ") invalid for T=" +
                    std::to_string(t));
      }
      const int64_t span = n.attrs.t1 - n.attrs.t0;
      n.value = Tensor::uninit({m, span * rest}, prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T* py = n.value.data<T>();
        for (int64_t i = 0; i < m; ++i) {
          std::memcpy(py + i * span * rest,
                      pa + (i * t + n.attrs.t0) * rest,
                      static_cast<size_t>(span * rest) * sizeof(T));
        }
      });
      break;
    }
    case OpKind::kReshape: {
      expect_operands(1);
      const Tensor& a = opnd(0);
      if (numel_of(n.attrs.new_shape) != a.numel()) {
        fail(k, "cannot reshape " + shape_str(a.shape()) + " to " +
                    shape_str(n.attrs.new_shape));
      }
      n.value = Tensor::uninit(n.attrs.new_shape, prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        std::memcpy(n.value.data<T>(), a.data<T>(),
                    static_cast<size_t>(a.numel()) * sizeof(T));
      });
      break;
    }
    case OpKind::kAddRowVec: {
      expect_operands(2);
      const Tensor &a = opnd(0), &v = opnd(1);
      if (v.rank() != 1 || a.extent(a.rank() - 1) != v.extent(0)) {
        fail(k, "shape mismatch " + shape_str(a.shape()) + " + " +
                    shape_str(v.shape()));
      }
      n.value = Tensor::uninit(a.shape(), prec_);
      const int64_t w = v.extent(0), rows = a.numel() / w;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* __restrict pa = a.data<T>();
        const T* __restrict pv = v.data<T>();
        T* __restrict py = n.value.data<T>();
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t j = 0; j < w; ++j) py[r * w + j] = pa[r * w + j] + pv[j];
        }
      });
      break;
    }
    case OpKind::kReduceMean:
    case OpKind::kReduceVar:
    case OpKind::kReduceSum: {
      expect_operands(1);
      const Tensor& a = opnd(0);
      ReducePlan p = plan_reduce(k, a.shape(), n.attrs.axes);
      n.attrs.axes = p.axes;
      n.value = Tensor::uninit(p.out_shape, prec_);
      const int64_t groups = n.value.numel();
      const int64_t gsize = a.numel() / groups;
      std::vector<double> sums(static_cast<size_t>(groups), 0.0);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        for_each_group(a.shape(), p, [&](int64_t i, int64_t g) {
          sums[static_cast<size_t>(g)] += static_cast<double>(pa[i]);
        });
      });
      if (k == OpKind::kReduceSum) {
        for (int64_t g = 0; g < groups; ++g) {
          n.value.set(g, sums[static_cast<size_t>(g)]);
        }
      } else if (k == OpKind::kReduceMean) {
        for (int64_t g = 0; g < groups; ++g) {
          n.value.set(g, sums[static_cast<size_t>(g)] /
                             static_cast<double>(gsize));
        }
      } else {
        Tensor means(p.out_shape);  // f64 aux
        for (int64_t g = 0; g < groups; ++g) {
          means.set(g, sums[static_cast<size_t>(g)] /
                           static_cast<double>(gsize));
        }
        std::vector<double> sq(static_cast<size_t>(groups), 0.0);
        with_prec(prec_, [&](auto tag) {
          using T = decltype(tag);
          const T* pa = a.data<T>();
          for_each_group(a.shape(), p, [&](int64_t i, int64_t g) {
            const double dv = static_cast<double>(pa[i]) - means.at(g);
            sq[static_cast<size_t>(g)] += dv * dv;
          });
        });
        for (int64_t g = 0; g < groups; ++g) {
          n.value.set(g,
                      sq[static_cast<size_t>(g)] / static_cast<double>(gsize));
        }
        n.saved.push_back(std::move(means));
      }
      break;
    }
    case OpKind::kDot:
    case OpKind::kSqDist: {
      expect_operands(2);
      const Tensor &a = opnd(0), &b = opnd(1);
      check_same_shape(k, a, b);
      double acc = 0.0;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        const T* pb = b.data<T>();
        if (k == OpKind::kDot) {
          for (int64_t i = 0; i < a.numel(); ++i) {
            acc += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
          }
        } else {
          for (int64_t i = 0; i < a.numel(); ++i) {
            const double dv =
                static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
            acc += dv * dv;
          }
        }
      });
      n.value = Tensor::scalar(acc, prec_);
      break;
    }
    case OpKind::kRowL2Dist: {
      expect_operands(2);
      const Tensor &a = opnd(0), &b = opnd(1);
      check_same_shape(k, a, b);
      if (a.rank() != 2) fail(k, "needs (n,d), got " + shape_str(a.shape()));
      const int64_t rows = a.extent(0), w = a.extent(1);
      n.value = Tensor::uninit({rows}, prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        const T* pb = b.data<T>();
        for (int64_t r = 0; r < rows; ++r) {
          double s = 0.0;
          for (int64_t j = 0; j < w; ++j) {
            const double dv = static_cast<double>(pa[r * w + j]) -
                              static_cast<double>(pb[r * w + j]);
            s += dv * dv;
          }
          n.value.set(r, std::sqrt(s));  // exact; zero closes cycles exactly
        }
      });
      break;
    }
    case OpKind::kTgnNorm: {
      expect_operands(3);
      const Tensor &x = opnd(0), &sc = opnd(1), &sh = opnd(2);
      TgnDims d = tgn_dims(x, sc, sh, n.attrs.chunk_of_t);
      Tensor mean({d.chunks, d.c}), invstd({d.chunks, d.c});  // f64 aux
      std::vector<int64_t> count;
      n.value = Tensor::uninit(x.shape(), prec_);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        tgn_stats<T>(x, d, n.attrs.chunk_of_t, mean, invstd, count);
        tgn_apply<T>(x, d, n.attrs.chunk_of_t, mean, invstd, sc, sh, n.value);
      });
      n.saved.push_back(std::move(mean));
      n.saved.push_back(std::move(invstd));
      break;
    }
    case OpKind::kStopGrad: {
      expect_operands(1);
      n.value = opnd(0);
      break;
    }
    case OpKind::kLeaf:
      break;
  }
}

GradientMap Tape::backward(Var loss) {
  if (loss.tape != this) {
    throw std::invalid_argument("backward: loss from another tape");
  }
  const Node& ln = node(loss.id);
  if (ln.value.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(ln.value.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  std::vector<uint8_t> has_grad(nodes_.size(), 0);
  if (ln.needs_grad) {
    grads[static_cast<size_t>(loss.id)] = Tensor::scalar(1.0, prec_);
    has_grad[static_cast<size_t>(loss.id)] = 1;
  }
  for (int32_t id = loss.id; id >= 0; --id) {
    const size_t si = static_cast<size_t>(id);
    if (!has_grad[si] || !nodes_[si].needs_grad) continue;
    if (nodes_[si].kind != OpKind::kLeaf) {
      backward_node(id, grads[si], grads, has_grad);
      grads[si] = Tensor();  // release; consumers are all behind us
      has_grad[si] = 0;
    }
  }
  GradientMap out;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::kLeaf && nodes_[i].needs_grad) {
      out.ids_.push_back(static_cast<int32_t>(i));
      if (has_grad[i]) {
        out.grads_.push_back(std::move(grads[i]));
      } else {
        out.grads_.push_back(Tensor(nodes_[i].value.shape(), prec_));
      }
    }
  }
  return out;
}

void Tape::backward_node(int32_t id, const Tensor& gout,
                         std::vector<Tensor>& grads,
                         std::vector<uint8_t>& has_grad) {
  Node& n = nodes_[static_cast<size_t>(id)];
  auto opnd = [&](size_t i) -> const Tensor& {
    return nodes_[static_cast<size_t>(n.operands[i])].value;
  };
  auto opnd_needs = [&](size_t i) {
    return nodes_[static_cast<size_t>(n.operands[i])].needs_grad;
  };
  auto grad_of = [&](size_t i) -> Tensor& {
    const size_t oi = static_cast<size_t>(n.operands[i]);
    if (!has_grad[oi]) {
      grads[oi] = Tensor(nodes_[oi].value.shape(), prec_);
      has_grad[oi] = 1;
    }
    return grads[oi];
  };

  switch (n.kind) {
    case OpKind::kAdd: {
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        for (size_t i = 0; i < 2; ++i) {
          if (!opnd_needs(i)) continue;
          accum<T>(grad_of(i), [g](int64_t j) { return g[j]; });
        }
      });
      break;
    }
    case OpKind::kSub: {
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        if (opnd_needs(0)) {
          accum<T>(grad_of(0), [g](int64_t j) { return g[j]; });
        }
        if (opnd_needs(1)) {
          accum<T>(grad_of(1), [g](int64_t j) { return -g[j]; });
        }
      });
      break;
    }
    case OpKind::kMul: {
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        if (opnd_needs(0)) {
          const T* pb = opnd(1).data<T>();
          accum<T>(grad_of(0), [g, pb](int64_t j) { return g[j] * pb[j]; });
        }
        if (opnd_needs(1)) {
          const T* pa = opnd(0).data<T>();
          accum<T>(grad_of(1), [g, pa](int64_t j) { return g[j] * pa[j]; });
        }
      });
      break;
    }
    case OpKind::kScale: {
      if (!opnd_needs(0)) break;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        const T c = static_cast<T>(n.attrs.scalar);
        accum<T>(grad_of(0), [g, c](int64_t j) { return g[j] * c; });
      });
      break;
    }
    case OpKind::kAddConst: {
      if (!opnd_needs(0)) break;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        accum<T>(grad_of(0), [g](int64_t j) { return g[j]; });
      });
      break;
    }
    case OpKind::kMatmul: {
      const Tensor &a = opnd(0), &b = opnd(1);
      const int64_t nn = a.extent(0), kk = a.extent(1), m = b.extent(1);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        if (opnd_needs(0)) {
          matmul_bwd_a<T>(b.data<T>(), g, grad_of(0).data<T>(), nn, kk, m);
        }
        if (opnd_needs(1)) {
          matmul_bwd_b<T>(a.data<T>(), g, grad_of(1).data<T>(), nn, kk, m);
        }
      });
      break;
    }
    case OpKind::kConv2d: {
      const Tensor &x = opnd(0), &w = opnd(1), &b = opnd(2);
      ConvDims d = conv_dims(n.kind, x, w, b, n.attrs.stride, n.attrs.pad);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        if (opnd_needs(0)) {
          conv2d_bwd_x<T>(w.data<T>(), g, grad_of(0).data<T>(), d);
        }
        if (opnd_needs(1) || opnd_needs(2)) {
          // weight and bias gradients fall out of the same pass
          Tensor gw_local = opnd_needs(1) ? Tensor() : Tensor(w.shape(), prec_);
          Tensor gb_local = opnd_needs(2) ? Tensor() : Tensor(b.shape(), prec_);
          T* gw = opnd_needs(1) ? grad_of(1).data<T>() : gw_local.data<T>();
          T* gb = opnd_needs(2) ? grad_of(2).data<T>() : gb_local.data<T>();
          conv2d_bwd_w<T>(x.data<T>(), g, gw, gb, d);
        }
      });
      break;
    }
    case OpKind::kRelu: {
      if (!opnd_needs(0)) break;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        const T* pa = opnd(0).data<T>();
        // subgradient at 0 is 0
        accum<T>(grad_of(0), [g, pa](int64_t j) {
          return pa[j] > T(0) ? g[j] : T(0);
        });
      });
      break;
    }
    case OpKind::kExp: {
      if (!opnd_needs(0)) break;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        const T* pa = opnd(0).data<T>();
        const T* pv = n.value.data<T>();
        accum<T>(grad_of(0), [g, pa, pv](int64_t j) {
          return static_cast<double>(pa[j]) < kExpClamp ? g[j] * pv[j] : T(0);
        });
      });
      break;
    }
    case OpKind::kLog: {
      if (!opnd_needs(0)) break;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        const T* pa = opnd(0).data<T>();
        accum<T>(grad_of(0), [g, pa](int64_t j) {
          return static_cast<double>(pa[j]) > kEps ? g[j] / pa[j] : T(0);
        });
      });
      break;
    }
    case OpKind::kSqrt: {
      if (!opnd_needs(0)) break;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        const T* pa = opnd(0).data<T>();
        const T* pv = n.value.data<T>();
        accum<T>(grad_of(0), [g, pa, pv](int64_t j) {
          return static_cast<double>(pa[j]) + kEps > 0.0
                     ? g[j] * T(0.5) / pv[j]
                     : T(0);
        });
      });
      break;
    }
    case OpKind::kConcatLast: {
      const int64_t total = n.value.extent(n.value.rank() - 1);
      const int64_t rows = n.value.numel() / total;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        int64_t off = 0;
        for (size_t i = 0; i < n.operands.size(); ++i) {
          const Tensor& t = opnd(i);
          const int64_t w = t.extent(t.rank() - 1);
          if (opnd_needs(i)) {
            T* go = grad_of(i).data<T>();
            for (int64_t r = 0; r < rows; ++r) {
              for (int64_t j = 0; j < w; ++j) {
                go[r * w + j] += g[r * total + off + j];
              }
            }
          }
          off += w;
        }
      });
      break;
    }
    case OpKind::kStackRows: {
      const int64_t d = n.value.extent(1);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        for (size_t i = 0; i < n.operands.size(); ++i) {
          if (!opnd_needs(i)) continue;
          T* go = grad_of(i).data<T>();
          for (int64_t j = 0; j < d; ++j) {
            go[j] += g[static_cast<int64_t>(i) * d + j];
          }
        }
      });
      break;
    }
    case OpKind::kRowSlice: {
      if (!opnd_needs(0)) break;
      const Tensor& a = opnd(0);
      const int64_t rw = a.numel() / a.extent(0);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        T* go = grad_of(0).data<T>();
        for (int64_t j = 0; j < rw; ++j) go[n.attrs.row * rw + j] += g[j];
      });
      break;
    }
    case OpKind::kTimeSlice: {
      if (!opnd_needs(0)) break;
      const Tensor& a = opnd(0);
      const int64_t m = a.extent(0), t = a.extent(1);
      const int64_t rest = a.numel() / (m * t);
      const int64_t span = n.attrs.t1 - n.attrs.t0;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        T* go = grad_of(0).data<T>();
        for (int64_t i = 0; i < m; ++i) {
          T* dst = go + (i * t + n.attrs.t0) * rest;
          const T* src = g + i * span * rest;
          for (int64_t j = 0; j < span * rest; ++j) dst[j] += src[j];
        }
      });
      break;
    }
    case OpKind::kReshape: {
      if (!opnd_needs(0)) break;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        accum<T>(grad_of(0), [g](int64_t j) { return g[j]; });
      });
      break;
    }
    case OpKind::kAddRowVec: {
      const Tensor& v = opnd(1);
      const int64_t w = v.extent(0);
      const int64_t rows = n.value.numel() / w;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        if (opnd_needs(0)) {
          accum<T>(grad_of(0), [g](int64_t j) { return g[j]; });
        }
        if (opnd_needs(1)) {
          T* go = grad_of(1).data<T>();
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < w; ++j) go[j] += g[r * w + j];
          }
        }
      });
      break;
    }
    case OpKind::kReduceMean:
    case OpKind::kReduceVar:
    case OpKind::kReduceSum: {
      if (!opnd_needs(0)) break;
      const Tensor& a = opnd(0);
      ReducePlan p = plan_reduce(n.kind, a.shape(), n.attrs.axes);
      const int64_t groups = n.value.numel();
      const int64_t gsize = a.numel() / groups;
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        T* go = grad_of(0).data<T>();
        if (n.kind == OpKind::kReduceSum) {
          for_each_group(a.shape(), p,
                         [&](int64_t i, int64_t grp) { go[i] += g[grp]; });
        } else if (n.kind == OpKind::kReduceMean) {
          const T inv = T(1) / static_cast<T>(gsize);
          for_each_group(a.shape(), p, [&](int64_t i, int64_t grp) {
            go[i] += g[grp] * inv;
          });
        } else {
          const Tensor& means = n.saved[0];
          const T* pa = a.data<T>();
          const double inv = 2.0 / static_cast<double>(gsize);
          for_each_group(a.shape(), p, [&](int64_t i, int64_t grp) {
            go[i] += static_cast<T>(static_cast<double>(g[grp]) * inv *
                                    (static_cast<double>(pa[i]) -
                                     means.at(grp)));
          });
        }
      });
      break;
    }
    case OpKind::kDot: {
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T gv = gout.data<T>()[0];
        if (opnd_needs(0)) {
          const T* pb = opnd(1).data<T>();
          accum<T>(grad_of(0), [gv, pb](int64_t j) { return gv * pb[j]; });
        }
        if (opnd_needs(1)) {
          const T* pa = opnd(0).data<T>();
          accum<T>(grad_of(1), [gv, pa](int64_t j) { return gv * pa[j]; });
        }
      });
      break;
    }
    case OpKind::kSqDist: {
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T gv = gout.data<T>()[0];
        const T* pa = opnd(0).data<T>();
        const T* pb = opnd(1).data<T>();
        if (opnd_needs(0)) {
          accum<T>(grad_of(0), [gv, pa, pb](int64_t j) {
            return T(2) * (pa[j] - pb[j]) * gv;
          });
        }
        if (opnd_needs(1)) {
          accum<T>(grad_of(1), [gv, pa, pb](int64_t j) {
            return T(-2) * (pa[j] - pb[j]) * gv;
          });
        }
      });
      break;
    }
    case OpKind::kRowL2Dist: {
      const Tensor &a = opnd(0), &b = opnd(1);
      const int64_t rows = a.extent(0), w = a.extent(1);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        const T* pa = a.data<T>();
        const T* pb = b.data<T>();
        T* g0 = opnd_needs(0) ? grad_of(0).data<T>() : nullptr;
        T* g1 = opnd_needs(1) ? grad_of(1).data<T>() : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
          const double dist = static_cast<double>(n.value.at(r));
          if (dist == 0.0) continue;  // zero subgradient at the origin
          const double gv = static_cast<double>(g[r]) / dist;
          for (int64_t j = 0; j < w; ++j) {
            const T d = static_cast<T>(
                gv * (static_cast<double>(pa[r * w + j]) -
                      static_cast<double>(pb[r * w + j])));
            if (g0) g0[r * w + j] += d;
            if (g1) g1[r * w + j] -= d;
          }
        }
      });
      break;
    }
    case OpKind::kTgnNorm: {
      const Tensor &x = opnd(0), &sc = opnd(1), &sh = opnd(2);
      TgnDims d = tgn_dims(x, sc, sh, n.attrs.chunk_of_t);
      const Tensor& mean = n.saved[0];
      const Tensor& invstd = n.saved[1];
      const int64_t hw = d.h * d.w;
      std::vector<int64_t> count(static_cast<size_t>(d.chunks), 0);
      for (int64_t t = 0; t < d.t; ++t) {
        count[static_cast<size_t>(
            n.attrs.chunk_of_t[static_cast<size_t>(t)])] += hw * d.n;
      }
      // group sums of dy and dy*xhat plus per-channel scale/shift grads,
      // accumulated in double
      std::vector<double> s1(static_cast<size_t>(d.chunks * d.c), 0.0);
      std::vector<double> s2(static_cast<size_t>(d.chunks * d.c), 0.0);
      std::vector<double> gsc(static_cast<size_t>(d.c), 0.0);
      std::vector<double> gsh(static_cast<size_t>(d.c), 0.0);
      with_prec(prec_, [&](auto tag) {
        using T = decltype(tag);
        const T* g = gout.data<T>();
        const T* px = x.data<T>();
        for (int64_t nn = 0; nn < d.n; ++nn) {
          for (int64_t t = 0; t < d.t; ++t) {
            const int64_t grp = n.attrs.chunk_of_t[static_cast<size_t>(t)];
            const int64_t base = (nn * d.t + t) * hw * d.c;
            for (int64_t i = 0; i < hw; ++i) {
              for (int64_t c = 0; c < d.c; ++c) {
                const int64_t idx = base + i * d.c + c;
                const double gd = static_cast<double>(g[idx]);
                const double xh = (static_cast<double>(px[idx]) -
                                   mean.at(grp * d.c + c)) *
                                  invstd.at(grp * d.c + c);
                s1[static_cast<size_t>(grp * d.c + c)] += gd;
                s2[static_cast<size_t>(grp * d.c + c)] += gd * xh;
                gsc[static_cast<size_t>(c)] += gd * xh;
                gsh[static_cast<size_t>(c)] += gd;
              }
            }
          }
        }
        if (opnd_needs(0)) {
          T* go = grad_of(0).data<T>();
          for (int64_t nn = 0; nn < d.n; ++nn) {
            for (int64_t t = 0; t < d.t; ++t) {
              const int64_t grp = n.attrs.chunk_of_t[static_cast<size_t>(t)];
              const double cnt =
                  static_cast<double>(count[static_cast<size_t>(grp)]);
              const int64_t base = (nn * d.t + t) * hw * d.c;
              for (int64_t i = 0; i < hw; ++i) {
                for (int64_t c = 0; c < d.c; ++c) {
                  const int64_t idx = base + i * d.c + c;
                  const double r = invstd.at(grp * d.c + c);
                  const double xh =
                      (static_cast<double>(px[idx]) - mean.at(grp * d.c + c)) *
                      r;
                  go[idx] += static_cast<T>(
                      sc.at(c) * r *
                      (static_cast<double>(g[idx]) -
                       s1[static_cast<size_t>(grp * d.c + c)] / cnt -
                       xh * s2[static_cast<size_t>(grp * d.c + c)] / cnt));
                }
              }
            }
          }
        }
      });
      if (opnd_needs(1)) {
        Tensor& go = grad_of(1);
        for (int64_t c = 0; c < d.c; ++c) {
          go.add_at(c, gsc[static_cast<size_t>(c)]);
        }
      }
      if (opnd_needs(2)) {
        Tensor& go = grad_of(2);
        for (int64_t c = 0; c < d.c; ++c) {
          go.add_at(c, gsh[static_cast<size_t>(c)]);
        }
      }
      break;
    }
    case OpKind::kStopGrad:
    case OpKind::kLeaf:
      break;
  }
}

// ---- typed wrappers ----

namespace {
Var apply1(OpKind k, Var a, const OpAttrs& at = {}) {
  const Var ops[1] = {a};
  return a.tape->apply(k, ops, at);
}
Var apply2(OpKind k, Var a, Var b, const OpAttrs& at = {}) {
  const Var ops[2] = {a, b};
  return a.tape->apply(k, ops, at);
}
}  // namespace

Var add(Var a, Var b) { return apply2(OpKind::kAdd, a, b); }
Var sub(Var a, Var b) { return apply2(OpKind::kSub, a, b); }
Var mul(Var a, Var b) { return apply2(OpKind::kMul, a, b); }
Var scale(Var a, double c) {
  OpAttrs at;
  at.scalar = c;
  return apply1(OpKind::kScale, a, at);
}
Var add_const(Var a, double c) {
  OpAttrs at;
  at.scalar = c;
  return apply1(OpKind::kAddConst, a, at);
}
Var matmul(Var a, Var b) { return apply2(OpKind::kMatmul, a, b); }
Var conv2d(Var x, Var w, Var b, int64_t stride, int64_t pad) {
  OpAttrs at;
  at.stride = stride;
  at.pad = pad;
  const Var ops[3] = {x, w, b};
  return x.tape->apply(OpKind::kConv2d, ops, at);
}
Var relu(Var a) { return apply1(OpKind::kRelu, a); }
Var exp(Var a) { return apply1(OpKind::kExp, a); }
Var log(Var a) { return apply1(OpKind::kLog, a); }
Var sqrt(Var a) { return apply1(OpKind::kSqrt, a); }
Var concat_last(std::span<const Var> parts) {
  return parts[0].tape->apply(OpKind::kConcatLast, parts);
}
Var stack_rows(std::span<const Var> rows) {
  return rows[0].tape->apply(OpKind::kStackRows, rows);
}
Var row_slice(Var m, int64_t row) {
  OpAttrs at;
  at.row = row;
  return apply1(OpKind::kRowSlice, m, at);
}
Var time_slice(Var a, int64_t t0, int64_t t1) {
  OpAttrs at;
  at.t0 = t0;
  at.t1 = t1;
  return apply1(OpKind::kTimeSlice, a, at);
}
Var reshape(Var a, Shape s) {
  OpAttrs at;
  at.new_shape = std::move(s);
  return apply1(OpKind::kReshape, a, at);
}
Var add_rowvec(Var m, Var v) { return apply2(OpKind::kAddRowVec, m, v); }
Var reduce_mean(Var a, std::vector<int64_t> axes) {
  OpAttrs at;
  at.axes = std::move(axes);
  return apply1(OpKind::kReduceMean, a, at);
}
Var reduce_var(Var a, std::vector<int64_t> axes) {
  OpAttrs at;
  at.axes = std::move(axes);
  return apply1(OpKind::kReduceVar, a, at);
}
Var reduce_sum(Var a, std::vector<int64_t> axes) {
  OpAttrs at;
  at.axes = std::move(axes);
  return apply1(OpKind::kReduceSum, a, at);
}
Var dot(Var a, Var b) { return apply2(OpKind::kDot, a, b); }
Var sqdist(Var a, Var b) { return apply2(OpKind::kSqDist, a, b); }
Var l2dist_rows(Var a, Var b) { return apply2(OpKind::kRowL2Dist, a, b); }
Var tgn_norm(Var x, Var sc, Var sh, std::vector<int32_t> chunk_of_t) {
  OpAttrs at;
  at.chunk_of_t = std::move(chunk_of_t);
  const Var ops[3] = {x, sc, sh};
  return x.tape->apply(OpKind::kTgnNorm, ops, at);
}
Var stop_gradient(Var a) { return apply1(OpKind::kStopGrad, a); }

Var logsumexp(Var s) {
  const Tensor& sv = s.tape->value(s);
  if (sv.rank() != 1) {
    throw std::invalid_argument("logsumexp: needs a vector, got shape " +
                                shape_str(sv.shape()));
  }
  double m = sv.at(0);
  for (int64_t i = 1; i < sv.numel(); ++i) m = std::max(m, sv.at(i));
  Var shifted = add_const(s, -m);
  Var sum = reduce_sum(cep::exp(shifted), {0});
  return add_const(cep::log(sum), m);
}

}  // namespace cep
