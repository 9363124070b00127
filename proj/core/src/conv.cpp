#include <algorithm>
#include <cstring>
#include <string>

#include "gemm.hpp"
#include "mdcn/error.hpp"
#include "mdcn/opcount.hpp"
#include "mdcn/nn.hpp"
#include "mdcn/parallel.hpp"

namespace mdcn {

int output_extent(int in, int kernel, int stride, int pad) {
  if (kernel < 1 || stride < 1 || pad < 0) {
    throw ConfigError("invalid kernel/stride/padding " + std::to_string(kernel) + "/" +
                      std::to_string(stride) + "/" + std::to_string(pad));
  }
  const int span = in + 2 * pad - kernel;
  if (span < 0) {
    throw ConfigError("kernel " + std::to_string(kernel) + " exceeds padded input " +
                      std::to_string(in + 2 * pad));
  }
  return span / stride + 1;
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ConfigError("conv channel counts must be >= 1");
  for (int k : {kernel.t, kernel.h, kernel.w, stride.t, stride.h, stride.w}) {
    if (k < 1) throw ConfigError("conv kernel and stride components must be >= 1");
  }
  for (int p : {padding.t, padding.h, padding.w}) {
    if (p < 0) throw ConfigError("conv padding must be >= 0");
  }
}

Shape5 ConvSpec::weight_shape() const {
  return {out_channels, in_channels, kernel.t, kernel.h, kernel.w};
}

Shape5 ConvSpec::output_shape(const Shape5& in) const {
  validate();
  if (in.c != in_channels) {
    throw ConfigError("conv expects " + std::to_string(in_channels) + " input channels, got " +
                      std::to_string(in.c));
  }
  return {in.n, out_channels, output_extent(in.d, kernel.t, stride.t, padding.t),
          output_extent(in.h, kernel.h, stride.h, padding.h),
          output_extent(in.w, kernel.w, stride.w, padding.w)};
}

namespace {

constexpr std::int64_t kMaxColumnElements = std::int64_t{1} << 21;

struct ConvGeometry {
  Shape5 in;
  Shape5 out;
  ConvSpec spec;
  std::int64_t k_rows;  // in_channels * kernel volume
  std::int64_t out_plane_hw;
  std::int64_t out_plane;
  int chunk_depth;
  bool pointwise;  // 1x1x1, stride 1, no padding: the input already is the column matrix

  ConvGeometry(const Shape5& x, const ConvSpec& s) : in(x), spec(s) {
    out = s.output_shape(x);
    k_rows = static_cast<std::int64_t>(s.in_channels) * s.kernel_volume();
    out_plane_hw = static_cast<std::int64_t>(out.h) * out.w;
    out_plane = out_plane_hw * out.d;
    pointwise = s.kernel == Triple{1, 1, 1} && s.stride == Triple{1, 1, 1} &&
                s.padding == Triple{0, 0, 0};
    const std::int64_t per_depth = k_rows * out_plane_hw;
    chunk_depth = pointwise ? out.d
                            : static_cast<int>(std::clamp<std::int64_t>(
                                  kMaxColumnElements / std::max<std::int64_t>(per_depth, 1), 1,
                                  out.d));
  }
};

// Valid [lo, hi) output indices along one axis for which in = o*stride + k - pad lands inside.
inline void valid_range(int out_n, int in_n, int k, int stride, int pad, int& lo, int& hi) {
  const int off = k - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  // o*stride + off <= in_n - 1
  const int top = in_n - 1 - off;
  hi = top < 0 ? 0 : std::min(out_n, top / stride + 1);
  if (hi < lo) hi = lo;
}

// col has k_rows rows of length depth_count*out_plane_hw.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, int od0, int depth_count, T* col) {
  const ConvSpec& s = g.spec;
  const std::int64_t row_len = static_cast<std::int64_t>(depth_count) * g.out_plane_hw;
  const std::int64_t in_plane = static_cast<std::int64_t>(g.in.d) * g.in.h * g.in.w;
  const std::int64_t in_hw = static_cast<std::int64_t>(g.in.h) * g.in.w;
  parallel_for(s.in_channels, [&](std::int64_t c0, std::int64_t c1) {
    for (std::int64_t ic = c0; ic < c1; ++ic) {
      const T* src_c = x + ic * in_plane;
      for (int a = 0; a < s.kernel.t; ++a) {
        for (int b = 0; b < s.kernel.h; ++b) {
          for (int c = 0; c < s.kernel.w; ++c) {
            const std::int64_t k = ((ic * s.kernel.t + a) * s.kernel.h + b) * s.kernel.w + c;
            T* dst_row = col + k * row_len;
            int ow_lo, ow_hi;
            valid_range(g.out.w, g.in.w, c, s.stride.w, s.padding.w, ow_lo, ow_hi);
            for (int dd = 0; dd < depth_count; ++dd) {
              const int id = (od0 + dd) * s.stride.t + a - s.padding.t;
              for (int oh = 0; oh < g.out.h; ++oh) {
                T* dst = dst_row + dd * g.out_plane_hw + static_cast<std::int64_t>(oh) * g.out.w;
                const int ih = oh * s.stride.h + b - s.padding.h;
                if (id < 0 || id >= g.in.d || ih < 0 || ih >= g.in.h) {
                  std::fill(dst, dst + g.out.w, T(0));
                  continue;
                }
                const T* src = src_c + id * in_hw + static_cast<std::int64_t>(ih) * g.in.w;
                std::fill(dst, dst + ow_lo, T(0));
                const int off = c - s.padding.w;
                if (s.stride.w == 1) {
                  std::memcpy(dst + ow_lo, src + ow_lo + off, sizeof(T) * (ow_hi - ow_lo));
                } else {
                  for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow] = src[ow * s.stride.w + off];
                }
                std::fill(dst + ow_hi, dst + g.out.w, T(0));
              }
            }
          }
        }
      }
    }
  });
}

// Inverse scatter of im2col: grad_x += col2im(grad_col). Parallel over input channels, which
// own disjoint rows of grad_col and disjoint slices of grad_x.
template <typename T>
void col2im_add(const T* grad_col, const ConvGeometry& g, int od0, int depth_count, T* grad_x) {
  const ConvSpec& s = g.spec;
  const std::int64_t row_len = static_cast<std::int64_t>(depth_count) * g.out_plane_hw;
  const std::int64_t in_plane = static_cast<std::int64_t>(g.in.d) * g.in.h * g.in.w;
  const std::int64_t in_hw = static_cast<std::int64_t>(g.in.h) * g.in.w;
  parallel_for(s.in_channels, [&](std::int64_t c0, std::int64_t c1) {
    for (std::int64_t ic = c0; ic < c1; ++ic) {
      T* dst_c = grad_x + ic * in_plane;
      for (int a = 0; a < s.kernel.t; ++a) {
        for (int b = 0; b < s.kernel.h; ++b) {
          for (int c = 0; c < s.kernel.w; ++c) {
            const std::int64_t k = ((ic * s.kernel.t + a) * s.kernel.h + b) * s.kernel.w + c;
            const T* src_row = grad_col + k * row_len;
            int ow_lo, ow_hi;
            valid_range(g.out.w, g.in.w, c, s.stride.w, s.padding.w, ow_lo, ow_hi);
            const int off = c - s.padding.w;
            for (int dd = 0; dd < depth_count; ++dd) {
              const int id = (od0 + dd) * s.stride.t + a - s.padding.t;
              if (id < 0 || id >= g.in.d) continue;
              for (int oh = 0; oh < g.out.h; ++oh) {
                const int ih = oh * s.stride.h + b - s.padding.h;
                if (ih < 0 || ih >= g.in.h) continue;
                const T* src = src_row + dd * g.out_plane_hw + static_cast<std::int64_t>(oh) * g.out.w;
                T* dst = dst_c + id * in_hw + static_cast<std::int64_t>(ih) * g.in.w;
                for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow * s.stride.w + off] += src[ow];
              }
            }
          }
        }
      }
    }
  });
}

void check_weight(const Shape5& w, const ConvSpec& spec) {
  if (w != spec.weight_shape()) {
    throw ConfigError("conv weight shape " + w.str() + " does not match spec " +
                      spec.weight_shape().str());
  }
}

}  // namespace

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec) {
  const ConvGeometry g(x.shape(), spec);
  check_weight(w.shape(), spec);
  Tensor<T> out(g.out);
  const std::int64_t in_volume = x.shape().plane() * x.shape().c;
  const std::int64_t out_volume = g.out_plane * g.out.c;
  std::vector<T> col;
  if (!g.pointwise) col.resize(static_cast<std::size_t>(g.k_rows * g.chunk_depth * g.out_plane_hw));

  for (int n = 0; n < g.in.n; ++n) {
    const T* xn = x.data() + n * in_volume;
    T* on = out.data() + n * out_volume;
    for (int od0 = 0; od0 < g.out.d; od0 += g.chunk_depth) {
      const int depth_count = std::min(g.chunk_depth, g.out.d - od0);
      const std::int64_t cols = depth_count * g.out_plane_hw;
      const T* b = xn;
      std::int64_t ldb = g.out_plane;
      if (!g.pointwise) {
        im2col(xn, g, od0, depth_count, col.data());
        b = col.data();
        ldb = cols;
      }
      detail::gemm_nn<T>(spec.out_channels, cols, g.k_rows, w.data(), g.k_rows, b, ldb,
                         on + od0 * g.out_plane_hw, g.out_plane);
      detail::record_macs(spec.out_channels * cols * g.k_rows);
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec,
                             const Tensor<T>& grad_out) {
  const ConvGeometry g(x.shape(), spec);
  check_weight(w.shape(), spec);
  if (grad_out.shape() != g.out) {
    throw ConfigError("conv grad_out shape " + grad_out.shape().str() + " != expected " +
                      g.out.str());
  }
  ConvGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>(w.shape())};

  // w^T as (k_rows x out_channels) so grad_col = w^T * grad_out reuses gemm_nn.
  const int oc_n = spec.out_channels;
  std::vector<T> wt(static_cast<std::size_t>(g.k_rows * oc_n));
  for (int oc = 0; oc < oc_n; ++oc) {
    for (std::int64_t k = 0; k < g.k_rows; ++k) wt[k * oc_n + oc] = w.data()[oc * g.k_rows + k];
  }

  const std::int64_t in_volume = x.shape().plane() * x.shape().c;
  const std::int64_t out_volume = g.out_plane * g.out.c;
  std::vector<T> col;
  std::vector<T> grad_col;
  if (!g.pointwise) {
    col.resize(static_cast<std::size_t>(g.k_rows * g.chunk_depth * g.out_plane_hw));
    grad_col.resize(col.size());
  }

  for (int n = 0; n < g.in.n; ++n) {
    const T* xn = x.data() + n * in_volume;
    T* gxn = grads.grad_x.data() + n * in_volume;
    const T* gon = grad_out.data() + n * out_volume;
    for (int od0 = 0; od0 < g.out.d; od0 += g.chunk_depth) {
      const int depth_count = std::min(g.chunk_depth, g.out.d - od0);
      const std::int64_t cols = depth_count * g.out_plane_hw;
      const T* go = gon + od0 * g.out_plane_hw;
      if (g.pointwise) {
        detail::gemm_nt_acc<T>(oc_n, g.k_rows, cols, go, g.out_plane, xn, g.out_plane,
                               grads.grad_w.data());
        detail::gemm_nn<T>(static_cast<int>(g.k_rows), cols, oc_n, wt.data(), oc_n, go,
                           g.out_plane, gxn, g.out_plane);
      } else {
        im2col(xn, g, od0, depth_count, col.data());
        detail::gemm_nt_acc<T>(oc_n, g.k_rows, cols, go, g.out_plane, col.data(), cols,
                               grads.grad_w.data());
        detail::gemm_nn<T>(static_cast<int>(g.k_rows), cols, oc_n, wt.data(), oc_n, go,
                           g.out_plane, grad_col.data(), cols);
        col2im_add(grad_col.data(), g, od0, depth_count, gxn);
      }
    }
  }
  return grads;
}

template Tensor<float> conv3d_forward(const Tensor<float>&, const Tensor<float>&, const ConvSpec&);
template Tensor<double> conv3d_forward(const Tensor<double>&, const Tensor<double>&,
                                       const ConvSpec&);
template ConvGrads<float> conv3d_backward(const Tensor<float>&, const Tensor<float>&,
                                          const ConvSpec&, const Tensor<float>&);
template ConvGrads<double> conv3d_backward(const Tensor<double>&, const Tensor<double>&,
                                           const ConvSpec&, const Tensor<double>&);

}  // namespace mdcn
