#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "mdcn/error.hpp"
#include "mdcn/opcount.hpp"
#include "mdcn/nn.hpp"
#include "mdcn/parallel.hpp"

namespace mdcn {

void PoolSpec::validate() const {
  for (int k : {kernel.t, kernel.h, kernel.w, stride.t, stride.h, stride.w}) {
    if (k < 1) throw ConfigError("pool kernel and stride components must be >= 1");
  }
  for (int p : {padding.t, padding.h, padding.w}) {
    if (p < 0) throw ConfigError("pool padding must be >= 0");
  }
}

Shape5 PoolSpec::output_shape(const Shape5& in) const {
  validate();
  return {in.n, in.c, output_extent(in.d, kernel.t, stride.t, padding.t),
          output_extent(in.h, kernel.h, stride.h, padding.h),
          output_extent(in.w, kernel.w, stride.w, padding.w)};
}

// ---------------------------------------------------------------- batchnorm

template <typename T>
BNState<T> BNState<T>::fresh(int channels) {
  BNState s;
  s.gamma.assign(channels, T(1));
  s.beta.assign(channels, T(0));
  s.running_mean.assign(channels, T(0));
  s.running_var.assign(channels, T(1));
  return s;
}

template <typename T>
void BNState<T>::validate() const {
  const std::size_t c = gamma.size();
  if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw ConfigError("batchnorm state vectors disagree in length");
  }
  if (!(epsilon > T(0))) throw ConfigError("batchnorm epsilon must be > 0");
  for (T v : running_var) {
    if (v < T(0)) throw ConfigError("batchnorm running variance must be >= 0");
  }
}

template <typename T>
BNResult<T> batchnorm_apply(const Tensor<T>& x, const BNState<T>& state, Mode mode) {
  state.validate();
  const Shape5& s = x.shape();
  if (state.channels() != s.c) {
    throw ConfigError("batchnorm has " + std::to_string(state.channels()) +
                      " channels, input has " + std::to_string(s.c));
  }
  BNResult<T> r;
  r.y = Tensor<T>(s);
  r.state = state;
  const std::int64_t plane = s.plane();

  if (mode == Mode::infer) {
    parallel_for(s.c, [&](std::int64_t c0, std::int64_t c1) {
      for (std::int64_t c = c0; c < c1; ++c) {
        const T scale = state.gamma[c] / std::sqrt(state.running_var[c] + state.epsilon);
        const T shift = state.beta[c] - state.running_mean[c] * scale;
        for (int n = 0; n < s.n; ++n) {
          const T* src = x.slice(n, static_cast<int>(c));
          T* dst = r.y.slice(n, static_cast<int>(c));
          for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
        }
      }
    });
    return r;
  }

  r.cache.x_hat = Tensor<T>(s);
  r.cache.inv_std.assign(s.c, T(0));
  r.cache.gamma = state.gamma;
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  parallel_for(s.c, [&](std::int64_t c0, std::int64_t c1) {
    for (std::int64_t c = c0; c < c1; ++c) {
      const int ci = static_cast<int>(c);
      double sum = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* src = x.slice(n, ci);
        for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
      }
      const double mean = sum / count;
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* src = x.slice(n, ci);
        for (std::int64_t i = 0; i < plane; ++i) {
          const double dv = src[i] - mean;
          sq += dv * dv;
        }
      }
      const double var = sq / count;
      const T inv_std = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.epsilon)));
      const T mean_t = static_cast<T>(mean);
      r.cache.inv_std[c] = inv_std;
      for (int n = 0; n < s.n; ++n) {
        const T* src = x.slice(n, ci);
        T* xh = r.cache.x_hat.slice(n, ci);
        T* dst = r.y.slice(n, ci);
        for (std::int64_t i = 0; i < plane; ++i) {
          xh[i] = (src[i] - mean_t) * inv_std;
          dst[i] = state.gamma[c] * xh[i] + state.beta[c];
        }
      }
      const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
      const T m = state.momentum;
      r.state.running_mean[c] = (T(1) - m) * state.running_mean[c] + m * mean_t;
      r.state.running_var[c] = (T(1) - m) * state.running_var[c] + m * static_cast<T>(unbiased);
    }
  });
  return r;
}

template <typename T>
BNGrads<T> batchnorm_backward(const BNCache<T>& cache, const Tensor<T>& grad_out) {
  const Shape5& s = cache.x_hat.shape();
  if (cache.x_hat.empty()) throw ConfigError("batchnorm_backward needs a train-mode cache");
  if (grad_out.shape() != s) {
    throw ConfigError("batchnorm grad shape " + grad_out.shape().str() + " != " + s.str());
  }
  BNGrads<T> g{Tensor<T>(s), std::vector<T>(s.c, T(0)), std::vector<T>(s.c, T(0))};
  const std::int64_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  parallel_for(s.c, [&](std::int64_t c0, std::int64_t c1) {
    for (std::int64_t c = c0; c < c1; ++c) {
      const int ci = static_cast<int>(c);
      double sum_g = 0.0;
      double sum_gx = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* go = grad_out.slice(n, ci);
        const T* xh = cache.x_hat.slice(n, ci);
        for (std::int64_t i = 0; i < plane; ++i) {
          sum_g += go[i];
          sum_gx += static_cast<double>(go[i]) * xh[i];
        }
      }
      g.grad_beta[c] = static_cast<T>(sum_g);
      g.grad_gamma[c] = static_cast<T>(sum_gx);
      const T scale = static_cast<T>(cache.gamma[c] * cache.inv_std[c] / count);
      const T mg = static_cast<T>(sum_g);
      const T mgx = static_cast<T>(sum_gx);
      const T cnt = static_cast<T>(count);
      for (int n = 0; n < s.n; ++n) {
        const T* go = grad_out.slice(n, ci);
        const T* xh = cache.x_hat.slice(n, ci);
        T* gx = g.grad_x.slice(n, ci);
        for (std::int64_t i = 0; i < plane; ++i) gx[i] = scale * (cnt * go[i] - mg - xh[i] * mgx);
      }
    }
  });
  return g;
}

// --------------------------------------------------------------------- relu

template <typename T>
Tensor<T> relu_apply(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (T& v : y.values()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  if (x.shape() != grad_out.shape()) throw ConfigError("relu_backward shape mismatch");
  Tensor<T> g(x.shape());
  const T* xv = x.data();
  const T* go = grad_out.data();
  T* gv = g.data();
  for (std::int64_t i = 0; i < x.size(); ++i) gv[i] = xv[i] > T(0) ? go[i] : T(0);
  return g;
}

// ------------------------------------------------------------------ maxpool

template <typename T>
PoolResult<T> maxpool3d_apply(const Tensor<T>& x, const PoolSpec& spec) {
  const Shape5& in = x.shape();
  const Shape5 out = spec.output_shape(in);
  PoolResult<T> r;
  r.y = Tensor<T>(out);
  r.argmax.assign(static_cast<std::size_t>(out.volume()), -1);
  r.input_shape = in;
  const std::int64_t slices = static_cast<std::int64_t>(in.n) * in.c;
  const std::int64_t in_plane = in.plane();
  const std::int64_t out_plane = out.plane();
  std::atomic<bool> empty_window{false};
  parallel_for(slices, [&](std::int64_t s0, std::int64_t s1) {
    for (std::int64_t sl = s0; sl < s1; ++sl) {
      const T* src = x.data() + sl * in_plane;
      T* dst = r.y.data() + sl * out_plane;
      std::int64_t* arg = r.argmax.data() + sl * out_plane;
      for (int od = 0; od < out.d; ++od) {
        for (int oh = 0; oh < out.h; ++oh) {
          for (int ow = 0; ow < out.w; ++ow) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t best_idx = -1;
            for (int a = 0; a < spec.kernel.t; ++a) {
              const int id = od * spec.stride.t + a - spec.padding.t;
              if (id < 0 || id >= in.d) continue;
              for (int b = 0; b < spec.kernel.h; ++b) {
                const int ih = oh * spec.stride.h + b - spec.padding.h;
                if (ih < 0 || ih >= in.h) continue;
                for (int c = 0; c < spec.kernel.w; ++c) {
                  const int iw = ow * spec.stride.w + c - spec.padding.w;
                  if (iw < 0 || iw >= in.w) continue;
                  const std::int64_t idx = (static_cast<std::int64_t>(id) * in.h + ih) * in.w + iw;
                  if (best_idx < 0 || src[idx] > best) {
                    best = src[idx];
                    best_idx = idx;
                  }
                }
              }
            }
            const std::int64_t o = (static_cast<std::int64_t>(od) * out.h + oh) * out.w + ow;
            if (best_idx < 0) {
              empty_window = true;
              dst[o] = T(0);
              arg[o] = -1;
            } else {
              dst[o] = best;
              arg[o] = sl * in_plane + best_idx;
            }
          }
        }
      }
    }
  });
  if (empty_window) throw ConfigError("max pool window lies entirely in padding");
  return r;
}

template <typename T>
Tensor<T> maxpool3d_backward(const PoolResult<T>& fwd, const Tensor<T>& grad_out) {
  if (grad_out.shape() != fwd.y.shape()) throw ConfigError("maxpool_backward shape mismatch");
  Tensor<T> g(fwd.input_shape);
  const Shape5& out = fwd.y.shape();
  const std::int64_t slices = static_cast<std::int64_t>(out.n) * out.c;
  const std::int64_t out_plane = out.plane();
  parallel_for(slices, [&](std::int64_t s0, std::int64_t s1) {
    for (std::int64_t i = s0 * out_plane; i < s1 * out_plane; ++i) {
      g.data()[fwd.argmax[i]] += grad_out.data()[i];
    }
  });
  return g;
}

// ---------------------------------------------------------- global avg pool

template <typename T>
Matrix<T> global_avg_pool(const Tensor<T>& x) {
  const Shape5& s = x.shape();
  Matrix<T> out(s.n, s.c);
  const std::int64_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* src = x.slice(n, c);
      double sum = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
      out.at(n, c) = static_cast<T>(sum / static_cast<double>(plane));
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape5& input_shape, const Matrix<T>& grad_out) {
  if (grad_out.rows != input_shape.n || grad_out.cols != input_shape.c) {
    throw ConfigError("global_avg_pool_backward shape mismatch");
  }
  Tensor<T> g(input_shape);
  const std::int64_t plane = input_shape.plane();
  const T inv = T(1) / static_cast<T>(plane);
  for (int n = 0; n < input_shape.n; ++n) {
    for (int c = 0; c < input_shape.c; ++c) {
      const T v = grad_out.at(n, c) * inv;
      std::fill(g.slice(n, c), g.slice(n, c) + plane, v);
    }
  }
  return g;
}

// ------------------------------------------------------------------- linear

template <typename T>
Matrix<T> linear_apply(const Matrix<T>& x, const Matrix<T>& w, std::span<const T> b) {
  if (x.cols != w.cols) {
    throw ConfigError("linear: input features " + std::to_string(x.cols) + " != weight columns " +
                      std::to_string(w.cols));
  }
  if (static_cast<int>(b.size()) != w.rows) throw ConfigError("linear: bias length mismatch");
  Matrix<T> y(x.rows, w.rows);
  for (int n = 0; n < x.rows; ++n) {
    for (int o = 0; o < w.rows; ++o) {
      T acc = T(0);
      for (int f = 0; f < x.cols; ++f) acc += x.at(n, f) * w.at(o, f);
      y.at(n, o) = acc + b[o];
    }
  }
  detail::record_macs(static_cast<std::int64_t>(x.rows) * w.rows * x.cols);
  return y;
}

template <typename T>
LinearGrads<T> linear_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& grad_out) {
  if (grad_out.rows != x.rows || grad_out.cols != w.rows || x.cols != w.cols) {
    throw ConfigError("linear_backward shape mismatch");
  }
  LinearGrads<T> g{Matrix<T>(x.rows, x.cols), Matrix<T>(w.rows, w.cols),
                   std::vector<T>(w.rows, T(0))};
  for (int n = 0; n < x.rows; ++n) {
    for (int o = 0; o < w.rows; ++o) {
      const T go = grad_out.at(n, o);
      g.grad_b[o] += go;
      for (int f = 0; f < x.cols; ++f) {
        g.grad_x.at(n, f) += go * w.at(o, f);
        g.grad_w.at(o, f) += go * x.at(n, f);
      }
    }
  }
  return g;
}

// ------------------------------------------------------------------ softmax

template <typename T>
Matrix<T> softmax(const Matrix<T>& logits) {
  Matrix<T> p(logits.rows, logits.cols);
  for (int n = 0; n < logits.rows; ++n) {
    const T* row = logits.row(n);
    const T mx = *std::max_element(row, row + logits.cols);
    T sum = T(0);
    for (int k = 0; k < logits.cols; ++k) {
      p.at(n, k) = std::exp(row[k] - mx);
      sum += p.at(n, k);
    }
    for (int k = 0; k < logits.cols; ++k) p.at(n, k) /= sum;
  }
  return p;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const int> labels) {
  if (static_cast<int>(labels.size()) != logits.rows) {
    throw DataError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(logits.rows) + " rows");
  }
  LossResult<T> r;
  r.grad_logits = Matrix<T>(logits.rows, logits.cols);
  const T inv_n = T(1) / static_cast<T>(logits.rows);
  T total = T(0);
  for (int n = 0; n < logits.rows; ++n) {
    const int label = labels[n];
    if (label < 0 || label >= logits.cols) {
      throw DataError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(logits.cols) + ")");
    }
    const T* row = logits.row(n);
    const T mx = *std::max_element(row, row + logits.cols);
    T sum = T(0);
    for (int k = 0; k < logits.cols; ++k) sum += std::exp(row[k] - mx);
    const T log_z = mx + std::log(sum);
    total += log_z - row[label];
    for (int k = 0; k < logits.cols; ++k) {
      const T p = std::exp(row[k] - log_z);
      r.grad_logits.at(n, k) = (p - (k == label ? T(1) : T(0))) * inv_n;
    }
  }
  r.loss = total * inv_n;
  return r;
}

// ------------------------------------------------------------------- concat

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no parts");
  Shape5 s = parts.front()->shape();
  int channels = 0;
  for (const Tensor<T>* p : parts) {
    const Shape5& ps = p->shape();
    if (ps.n != s.n || ps.d != s.d || ps.h != s.h || ps.w != s.w) {
      throw ConfigError("concat_channels: shape " + ps.str() + " incompatible with " + s.str());
    }
    channels += ps.c;
  }
  s.c = channels;
  Tensor<T> out(s);
  const std::int64_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    int c_off = 0;
    for (const Tensor<T>* p : parts) {
      const T* src = p->slice(n, 0);
      std::copy(src, src + plane * p->shape().c, out.slice(n, c_off));
      c_off += p->shape().c;
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& grad, std::span<const int> channels) {
  const Shape5& s = grad.shape();
  int total = 0;
  for (int c : channels) total += c;
  if (total != s.c) throw ConfigError("split_channels: channel counts do not sum to input");
  std::vector<Tensor<T>> parts;
  parts.reserve(channels.size());
  const std::int64_t plane = s.plane();
  int c_off = 0;
  for (int c : channels) {
    Shape5 ps = s;
    ps.c = c;
    Tensor<T> part(ps);
    for (int n = 0; n < s.n; ++n) {
      const T* src = grad.slice(n, c_off);
      std::copy(src, src + plane * c, part.slice(n, 0));
    }
    parts.push_back(std::move(part));
    c_off += c;
  }
  return parts;
}

template <typename T>
Matrix<T> concat_features(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows != b.rows) throw ConfigError("concat_features: batch mismatch");
  Matrix<T> out(a.rows, a.cols + b.cols);
  for (int n = 0; n < a.rows; ++n) {
    std::copy(a.row(n), a.row(n) + a.cols, out.row(n));
    std::copy(b.row(n), b.row(n) + b.cols, out.row(n) + a.cols);
  }
  return out;
}

#define MDCN_INSTANTIATE_LAYERS(T)                                                          \
  template struct BNState<T>;                                                               \
  template BNResult<T> batchnorm_apply(const Tensor<T>&, const BNState<T>&, Mode);          \
  template BNGrads<T> batchnorm_backward(const BNCache<T>&, const Tensor<T>&);              \
  template Tensor<T> relu_apply(const Tensor<T>&);                                          \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                     \
  template PoolResult<T> maxpool3d_apply(const Tensor<T>&, const PoolSpec&);                \
  template Tensor<T> maxpool3d_backward(const PoolResult<T>&, const Tensor<T>&);            \
  template Matrix<T> global_avg_pool(const Tensor<T>&);                                     \
  template Tensor<T> global_avg_pool_backward(const Shape5&, const Matrix<T>&);             \
  template Matrix<T> linear_apply(const Matrix<T>&, const Matrix<T>&, std::span<const T>);  \
  template LinearGrads<T> linear_backward(const Matrix<T>&, const Matrix<T>&,               \
                                          const Matrix<T>&);                                \
  template Matrix<T> softmax(const Matrix<T>&);                                             \
  template LossResult<T> softmax_cross_entropy(const Matrix<T>&, std::span<const int>);     \
  template Tensor<T> concat_channels(std::span<const Tensor<T>* const>);                    \
  template std::vector<Tensor<T>> split_channels(const Tensor<T>&, std::span<const int>);   \
  template Matrix<T> concat_features(const Matrix<T>&, const Matrix<T>&);

MDCN_INSTANTIATE_LAYERS(float)
MDCN_INSTANTIATE_LAYERS(double)

#undef MDCN_INSTANTIATE_LAYERS

}  // namespace mdcn
