#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdcn/nn.hpp"
#include "mdcn/tensor.hpp"

namespace mdcn {

enum class StreamMode { rgb, flow, fusion };

std::string to_string(StreamMode mode);
// Throws UsageError for anything other than rgb, flow or fusion.
StreamMode parse_stream_mode(const std::string& text);

struct ModelConfig {
  StreamMode mode = StreamMode::rgb;
  int frames = 32;
  int input_size = 224;
  int stem_channels = 8;
  std::array<int, 4> block_channels{16, 32, 64, 128};
  std::array<int, 4> block_spatial_strides{2, 1, 2, 2};
  int classes = 2;
  bool skip_enabled = true;
  int rgb_channels = 3;
  int flow_channels = 2;

  void validate() const;
  bool uses_rgb() const { return mode != StreamMode::flow; }
  bool uses_flow() const { return mode != StreamMode::rgb; }
  int feature_dim() const {
    return block_channels.back() * (mode == StreamMode::fusion ? 2 : 1);
  }
  bool operator==(const ModelConfig&) const = default;
};

struct MDCBlockConfig {
  static constexpr int kt = 3;
  static constexpr int ks = 3;

  int c_in = 8;
  int c_out = 16;
  int spatial_pool_stride = 2;

  void validate() const;
  ConvSpec temporal_conv() const;  // kt x 1 x 1
  ConvSpec spatial_conv() const;   // 1 x ks x ks
  ConvSpec volume_conv() const;    // kt x ks x ks
  PoolSpec fuse_pool() const;
  ConvSpec reduce_conv(bool skip_enabled) const;
  ConvSpec skip_conv() const;
};

template <typename T>
struct MDCBlockParams {
  Tensor<T> w_1d;
  Tensor<T> w_2d;
  Tensor<T> w_3d;
  BNState<T> bn_1d;
  BNState<T> bn_2d;
  BNState<T> bn_3d;
  Tensor<T> w_reduce;
  Tensor<T> w_skip;  // empty when the skip path is disabled
};

template <typename T>
struct StreamParams {
  Tensor<T> stem_w;
  BNState<T> stem_bn;
  std::array<MDCBlockParams<T>, 4> blocks;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::optional<StreamParams<T>> rgb;
  std::optional<StreamParams<T>> flow;
  Matrix<T> fc_w;  // classes x feature_dim
  std::vector<T> fc_b;
};

// Stem and per-block layer specs for one stream.
ConvSpec stem_conv_spec(int in_channels, int out_channels);
PoolSpec stem_pool_spec();
std::array<MDCBlockConfig, 4> block_configs(const ModelConfig& config);

/// A named view over one tensor of a parameter tree. `dims` is the logical
/// shape (rank 1, 2 or 5).
template <typename T>
struct TensorRef {
  std::string name;
  std::span<T> values;
  std::vector<std::uint32_t> dims;
};

enum class TensorGroup { learnable, running_stats };

/// Visits every tensor of `group` in a fixed order. Works on const and
/// non-const trees; `fn` receives a TensorRef<T> or TensorRef<const T>.
template <typename T, typename Fn>
void for_each_tensor(ModelParams<T>& params, TensorGroup group, Fn&& fn);
template <typename T, typename Fn>
void for_each_tensor(const ModelParams<T>& params, TensorGroup group, Fn&& fn);

template <typename T>
std::vector<TensorRef<T>> learnable_tensors(ModelParams<T>& params);
template <typename T>
std::vector<TensorRef<const T>> learnable_tensors(const ModelParams<T>& params);

// Zero-filled tree with the same structure as `like` (gradients, velocities).
template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& like);

template <typename To, typename From>
ModelParams<To> convert_params(const ModelParams<From>& src);

// Fan-in scaled normal weights (variance 2 / fan_in), BN gamma 1 / beta 0, fc bias 0.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------- forward

template <typename T>
struct BlockCache {
  Tensor<T> x;
  std::array<BNCache<T>, 3> bn;
  std::array<BNState<T>, 3> bn_state;
  PoolResult<T> pool;  // pool.y is the reduce-conv input
  Tensor<T> pre_relu;
};

template <typename T>
struct BlockResult {
  Tensor<T> y;
  BlockCache<T> cache;
};

template <typename T>
BlockResult<T> mdc_block_forward(const Tensor<T>& x, const MDCBlockParams<T>& p,
                                 const MDCBlockConfig& cfg, bool skip_enabled, Mode mode);

template <typename T>
struct BlockGrads {
  Tensor<T> grad_x;
  MDCBlockParams<T> grads;  // BN running stats left empty
};

template <typename T>
BlockGrads<T> mdc_block_backward(const MDCBlockParams<T>& p, const MDCBlockConfig& cfg,
                                 bool skip_enabled, const BlockCache<T>& cache,
                                 const Tensor<T>& grad_y);

template <typename T>
struct StreamCache {
  Tensor<T> clip;
  BNCache<T> stem_bn;
  BNState<T> stem_bn_state;
  Tensor<T> stem_act;  // BN output, ReLU input
  PoolResult<T> stem_pool;
  std::array<BlockCache<T>, 4> blocks;
  Shape5 feature_map;  // pre-pool shape
};

template <typename T>
struct StreamResult {
  Matrix<T> features;
  Tensor<T> feature_map;  // kept only when requested
  StreamCache<T> cache;
};

template <typename T>
StreamResult<T> stream_forward(const Tensor<T>& clip, const StreamParams<T>& p,
                               const ModelConfig& config, int in_channels, Mode mode,
                               bool keep_feature_map = false);

template <typename T>
struct ModelCache {
  Mode mode = Mode::infer;
  std::optional<StreamCache<T>> rgb;
  std::optional<StreamCache<T>> flow;
  Matrix<T> fc_input;
};

template <typename T>
struct ModelOutput {
  Matrix<T> logits;
  ModelCache<T> cache;
};

/// Logits (n x classes). Streams must be present exactly as config.mode
/// requires, otherwise UsageError.
template <typename T>
ModelOutput<T> model_forward(const Tensor<T>* rgb, const Tensor<T>* flow,
                             const ModelParams<T>& params, Mode mode);

/// Gradient tree mirroring `params` (running statistics zeroed).
template <typename T>
ModelParams<T> model_backward(const ModelParams<T>& params, const ModelCache<T>& cache,
                              const Matrix<T>& grad_logits);

// Copies the running statistics produced by a train-mode forward into params.
template <typename T>
void commit_running_stats(ModelParams<T>& params, const ModelCache<T>& cache);

// ----------------------------------------------------------------- audits

struct LayerCost {
  std::string name;
  std::string kind;  // conv, bn, relu, pool, gap, fc
  Shape5 output;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t element_ops = 0;
};

struct ComplexityReport {
  std::vector<LayerCost> layers;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t element_ops = 0;
};

// Closed-form per-layer account for a batch of one clip.
ComplexityReport audit_model(const ModelConfig& config);
std::int64_t audit_params(const ModelConfig& config);
std::int64_t audit_flops(const ModelConfig& config);

// Published reference figures for the default configuration.
struct ReferenceFigures {
  double params_millions;
  double gflops;
};
ReferenceFigures reference_figures(StreamMode mode);

// Activation shapes after stem conv, stem pool and each block (one stream).
std::vector<Shape5> stream_activation_shapes(const ModelConfig& config);

}  // namespace mdcn

#include "mdcn/model_visit.hpp"
