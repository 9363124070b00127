#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mdcn/tensor.hpp"

namespace mdcn {

// (temporal, height, width) triple used for kernels, strides and padding.
struct Triple {
  int t = 1;
  int h = 1;
  int w = 1;
  bool operator==(const Triple&) const = default;
};

// floor((in + 2*pad - kernel) / stride) + 1, throwing ConfigError when < 1.
int output_extent(int in, int kernel, int stride, int pad);

// Convolutions in this library never carry a bias.
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  Triple kernel{1, 1, 1};
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};

  void validate() const;
  Shape5 weight_shape() const;
  Shape5 output_shape(const Shape5& input) const;
  std::int64_t kernel_volume() const {
    return static_cast<std::int64_t>(kernel.t) * kernel.h * kernel.w;
  }
};

struct PoolSpec {
  Triple kernel{1, 1, 1};
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};

  void validate() const;
  Shape5 output_shape(const Shape5& input) const;
};

enum class Mode { train, infer };

template <typename T>
struct BNState {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  // gamma = 1, beta = 0, running mean 0, running var 1.
  static BNState fresh(int channels);
  int channels() const { return static_cast<int>(gamma.size()); }
  void validate() const;
};

template <typename T>
struct BNCache {
  Tensor<T> x_hat;
  std::vector<T> inv_std;
  std::vector<T> gamma;
};

template <typename T>
struct BNResult {
  Tensor<T> y;
  BNCache<T> cache;  // populated in train mode only
  BNState<T> state;  // running statistics after this call
};

template <typename T>
struct BNGrads {
  Tensor<T> grad_x;
  std::vector<T> grad_gamma;
  std::vector<T> grad_beta;
};

template <typename T>
struct ConvGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_w;
};

template <typename T>
struct PoolResult {
  Tensor<T> y;
  std::vector<std::int64_t> argmax;  // flat input offset per output element
  Shape5 input_shape;
};

template <typename T>
struct LinearGrads {
  Matrix<T> grad_x;
  Matrix<T> grad_w;
  std::vector<T> grad_b;
};

template <typename T>
struct LossResult {
  T loss = T(0);
  Matrix<T> grad_logits;
};

/// Direct 3-D convolution, zero padded, no bias. Every output element sums its
/// receptive field in the fixed order (in_channel, kt, kh, kw), so results
/// are bit-identical for any worker count.
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec,
                             const Tensor<T>& grad_out);

/// Train mode normalizes with batch statistics over (n, d, h, w) and returns
/// the exponentially averaged running statistics; infer mode uses the
/// running statistics and leaves them unchanged.
template <typename T>
BNResult<T> batchnorm_apply(const Tensor<T>& x, const BNState<T>& state, Mode mode);

template <typename T>
BNGrads<T> batchnorm_backward(const BNCache<T>& cache, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> relu_apply(const Tensor<T>& x);

// Passes grad_out where x > 0; the subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

// Padded cells never win; ties go to the lowest flat input offset.
template <typename T>
PoolResult<T> maxpool3d_apply(const Tensor<T>& x, const PoolSpec& spec);

template <typename T>
Tensor<T> maxpool3d_backward(const PoolResult<T>& forward, const Tensor<T>& grad_out);

template <typename T>
Matrix<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape5& input_shape, const Matrix<T>& grad_out);

// y = x * w^T + b with x (n, f), w (out, f), b (out).
template <typename T>
Matrix<T> linear_apply(const Matrix<T>& x, const Matrix<T>& w, std::span<const T> b);

template <typename T>
LinearGrads<T> linear_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& grad_out);

template <typename T>
Matrix<T> softmax(const Matrix<T>& logits);

// Mean over the batch of -log softmax(logits)[label], log-sum-exp stable.
template <typename T>
LossResult<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const int> labels);

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts);

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& grad, std::span<const int> channels);

template <typename T>
Matrix<T> concat_features(const Matrix<T>& a, const Matrix<T>& b);

}  // namespace mdcn
