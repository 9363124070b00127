#include "mdcn/model.hpp"

#include <algorithm>
#include <cmath>

#include "mdcn/error.hpp"
#include "mdcn/rng.hpp"

namespace mdcn {

std::string to_string(StreamMode mode) {
  switch (mode) {
    case StreamMode::rgb: return "rgb";
    case StreamMode::flow: return "flow";
    case StreamMode::fusion: return "fusion";
  }
  return "unknown";
}

StreamMode parse_stream_mode(const std::string& text) {
  if (text == "rgb") return StreamMode::rgb;
  if (text == "flow") return StreamMode::flow;
  if (text == "fusion") return StreamMode::fusion;
  throw UsageError("unknown stream mode '" + text + "' (expected rgb, flow or fusion)");
}

void ModelConfig::validate() const {
  if (frames < 1) throw ConfigError("frames must be >= 1");
  if (input_size < 1) throw ConfigError("input_size must be >= 1");
  if (stem_channels < 1) throw ConfigError("stem_channels must be >= 1");
  if (classes < 1) throw ConfigError("classes must be >= 1");
  if (rgb_channels < 1 || flow_channels < 1) throw ConfigError("input channel counts must be >= 1");
  for (int c : block_channels) {
    if (c < 2 || c % 2 != 0) throw ConfigError("block channels must be even and >= 2");
  }
  for (int s : block_spatial_strides) {
    if (s != 1 && s != 2) throw ConfigError("block spatial strides must be 1 or 2");
  }
}

void MDCBlockConfig::validate() const {
  if (c_in < 1) throw ConfigError("MDC block input channels must be >= 1");
  if (c_out < 2 || c_out % 2 != 0) {
    throw ConfigError("MDC block output channels must be even, got " + std::to_string(c_out));
  }
  if (spatial_pool_stride != 1 && spatial_pool_stride != 2) {
    throw ConfigError("MDC block spatial stride must be 1 or 2");
  }
}

ConvSpec MDCBlockConfig::temporal_conv() const {
  return {c_in, c_out, {kt, 1, 1}, {1, 1, 1}, {kt / 2, 0, 0}};
}

ConvSpec MDCBlockConfig::spatial_conv() const {
  return {c_in, c_out, {1, ks, ks}, {1, 1, 1}, {0, ks / 2, ks / 2}};
}

ConvSpec MDCBlockConfig::volume_conv() const {
  return {c_in, c_out, {kt, ks, ks}, {1, 1, 1}, {kt / 2, ks / 2, ks / 2}};
}

PoolSpec MDCBlockConfig::fuse_pool() const {
  return {{1, 3, 3}, {1, spatial_pool_stride, spatial_pool_stride}, {0, 1, 1}};
}

ConvSpec MDCBlockConfig::reduce_conv(bool skip_enabled) const {
  return {3 * c_out, skip_enabled ? c_out / 2 : c_out, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}};
}

ConvSpec MDCBlockConfig::skip_conv() const {
  return {c_in, c_out / 2, {1, 1, 1}, {1, spatial_pool_stride, spatial_pool_stride}, {0, 0, 0}};
}

ConvSpec stem_conv_spec(int in_channels, int out_channels) {
  return {in_channels, out_channels, {5, 7, 7}, {1, 2, 2}, {2, 3, 3}};
}

PoolSpec stem_pool_spec() { return {{1, 3, 3}, {1, 2, 2}, {0, 1, 1}}; }

std::array<MDCBlockConfig, 4> block_configs(const ModelConfig& config) {
  std::array<MDCBlockConfig, 4> out;
  int c_in = config.stem_channels;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {c_in, config.block_channels[i], config.block_spatial_strides[i]};
    c_in = config.block_channels[i];
  }
  return out;
}

namespace {

template <typename T>
StreamParams<T> make_stream(const ModelConfig& config, int in_channels) {
  StreamParams<T> s;
  s.stem_w = Tensor<T>(stem_conv_spec(in_channels, config.stem_channels).weight_shape());
  s.stem_bn = BNState<T>::fresh(config.stem_channels);
  const auto cfgs = block_configs(config);
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const MDCBlockConfig& c = cfgs[i];
    MDCBlockParams<T>& b = s.blocks[i];
    b.w_1d = Tensor<T>(c.temporal_conv().weight_shape());
    b.w_2d = Tensor<T>(c.spatial_conv().weight_shape());
    b.w_3d = Tensor<T>(c.volume_conv().weight_shape());
    b.bn_1d = BNState<T>::fresh(c.c_out);
    b.bn_2d = BNState<T>::fresh(c.c_out);
    b.bn_3d = BNState<T>::fresh(c.c_out);
    b.w_reduce = Tensor<T>(c.reduce_conv(config.skip_enabled).weight_shape());
    if (config.skip_enabled) b.w_skip = Tensor<T>(c.skip_conv().weight_shape());
  }
  return s;
}

template <typename T>
ModelParams<T> make_params(const ModelConfig& config) {
  config.validate();
  ModelParams<T> p;
  p.config = config;
  if (config.uses_rgb()) p.rgb = make_stream<T>(config, config.rgb_channels);
  if (config.uses_flow()) p.flow = make_stream<T>(config, config.flow_channels);
  p.fc_w = Matrix<T>(config.classes, config.feature_dim());
  p.fc_b.assign(config.classes, T(0));
  return p;
}

template <typename T>
void zero_bn_stats(BNState<T>& bn) {
  std::fill(bn.running_mean.begin(), bn.running_mean.end(), T(0));
  std::fill(bn.running_var.begin(), bn.running_var.end(), T(0));
}

}  // namespace

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& like) {
  ModelParams<T> z = make_params<T>(like.config);
  for_each_tensor(z, TensorGroup::learnable,
                  [](TensorRef<T> r) { std::fill(r.values.begin(), r.values.end(), T(0)); });
  for_each_tensor(z, TensorGroup::running_stats,
                  [](TensorRef<T> r) { std::fill(r.values.begin(), r.values.end(), T(0)); });
  return z;
}

template <typename To, typename From>
ModelParams<To> convert_params(const ModelParams<From>& src) {
  ModelParams<To> dst = make_params<To>(src.config);
  for (TensorGroup g : {TensorGroup::learnable, TensorGroup::running_stats}) {
    std::vector<TensorRef<const From>> from;
    for_each_tensor(src, g, [&](TensorRef<const From> r) { from.push_back(std::move(r)); });
    std::size_t i = 0;
    for_each_tensor(dst, g, [&](TensorRef<To> r) {
      std::copy(from[i].values.begin(), from[i].values.end(), r.values.begin());
      ++i;
    });
  }
  return dst;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<T> p = make_params<T>(config);
  Rng rng(mix_seed(seed, 0x1417));
  for_each_tensor(p, TensorGroup::learnable, [&](TensorRef<T> r) {
    const bool is_bias = r.name.ends_with(".b") || r.name.ends_with(".beta");
    const bool is_gamma = r.name.ends_with(".gamma");
    if (is_bias) {
      std::fill(r.values.begin(), r.values.end(), T(0));
    } else if (is_gamma) {
      std::fill(r.values.begin(), r.values.end(), T(1));
    } else {
      std::uint64_t fan_in = 1;
      for (std::size_t d = 1; d < r.dims.size(); ++d) fan_in *= r.dims[d];
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (T& v : r.values) v = static_cast<T>(rng.normal() * stddev);
    }
  });
  return p;
}

// ------------------------------------------------------------------ blocks

template <typename T>
BlockResult<T> mdc_block_forward(const Tensor<T>& x, const MDCBlockParams<T>& p,
                                 const MDCBlockConfig& cfg, bool skip_enabled, Mode mode) {
  cfg.validate();
  if (x.shape().c != cfg.c_in) {
    throw ConfigError("MDC block expects " + std::to_string(cfg.c_in) + " channels, got " +
                      std::to_string(x.shape().c));
  }
  BlockResult<T> r;
  BNResult<T> b1 = batchnorm_apply(conv3d_forward(x, p.w_1d, cfg.temporal_conv()), p.bn_1d, mode);
  BNResult<T> b2 = batchnorm_apply(conv3d_forward(x, p.w_2d, cfg.spatial_conv()), p.bn_2d, mode);
  BNResult<T> b3 = batchnorm_apply(conv3d_forward(x, p.w_3d, cfg.volume_conv()), p.bn_3d, mode);
  const std::array<const Tensor<T>*, 3> branches{&b1.y, &b2.y, &b3.y};
  PoolResult<T> pooled = maxpool3d_apply(concat_channels<T>(branches), cfg.fuse_pool());
  Tensor<T> main = conv3d_forward(pooled.y, p.w_reduce, cfg.reduce_conv(skip_enabled));
  Tensor<T> pre;
  if (skip_enabled) {
    if (p.w_skip.empty()) throw ConfigError("skip path enabled but block has no skip weights");
    Tensor<T> skip = conv3d_forward(x, p.w_skip, cfg.skip_conv());
    const std::array<const Tensor<T>*, 2> parts{&main, &skip};
    pre = concat_channels<T>(parts);
  } else {
    pre = std::move(main);
  }
  r.y = relu_apply(pre);
  if (mode == Mode::train) {
    r.cache.x = x;
    r.cache.bn = {std::move(b1.cache), std::move(b2.cache), std::move(b3.cache)};
    r.cache.bn_state = {std::move(b1.state), std::move(b2.state), std::move(b3.state)};
    r.cache.pool = std::move(pooled);
    r.cache.pre_relu = std::move(pre);
  }
  return r;
}

namespace {

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& v) {
  T* a = acc.data();
  const T* b = v.data();
  for (std::int64_t i = 0; i < acc.size(); ++i) a[i] += b[i];
}

template <typename T>
void bn_grads_into(BNState<T>& dst, const BNGrads<T>& g) {
  dst.gamma = g.grad_gamma;
  dst.beta = g.grad_beta;
}

}  // namespace

template <typename T>
BlockGrads<T> mdc_block_backward(const MDCBlockParams<T>& p, const MDCBlockConfig& cfg,
                                 bool skip_enabled, const BlockCache<T>& cache,
                                 const Tensor<T>& grad_y) {
  if (cache.x.empty()) throw ConfigError("MDC block backward needs a train-mode cache");
  BlockGrads<T> out;
  out.grad_x = Tensor<T>(cache.x.shape());
  out.grads.bn_1d = BNState<T>::fresh(cfg.c_out);
  out.grads.bn_2d = BNState<T>::fresh(cfg.c_out);
  out.grads.bn_3d = BNState<T>::fresh(cfg.c_out);

  Tensor<T> g_pre = relu_backward(cache.pre_relu, grad_y);
  Tensor<T> g_main;
  if (skip_enabled) {
    const std::array<int, 2> halves{cfg.c_out / 2, cfg.c_out / 2};
    std::vector<Tensor<T>> parts = split_channels<T>(g_pre, halves);
    ConvGrads<T> sk = conv3d_backward(cache.x, p.w_skip, cfg.skip_conv(), parts[1]);
    out.grads.w_skip = std::move(sk.grad_w);
    add_into(out.grad_x, sk.grad_x);
    g_main = std::move(parts[0]);
  } else {
    g_main = std::move(g_pre);
  }
  ConvGrads<T> red = conv3d_backward(cache.pool.y, p.w_reduce, cfg.reduce_conv(skip_enabled), g_main);
  out.grads.w_reduce = std::move(red.grad_w);
  Tensor<T> g_fused = maxpool3d_backward(cache.pool, red.grad_x);
  const std::array<int, 3> widths{cfg.c_out, cfg.c_out, cfg.c_out};
  std::vector<Tensor<T>> branch = split_channels<T>(g_fused, widths);

  const std::array<const Tensor<T>*, 3> weights{&p.w_1d, &p.w_2d, &p.w_3d};
  const std::array<ConvSpec, 3> specs{cfg.temporal_conv(), cfg.spatial_conv(), cfg.volume_conv()};
  std::array<Tensor<T>*, 3> grad_w{&out.grads.w_1d, &out.grads.w_2d, &out.grads.w_3d};
  std::array<BNState<T>*, 3> grad_bn{&out.grads.bn_1d, &out.grads.bn_2d, &out.grads.bn_3d};
  for (int i = 0; i < 3; ++i) {
    BNGrads<T> bg = batchnorm_backward(cache.bn[i], branch[i]);
    bn_grads_into(*grad_bn[i], bg);
    ConvGrads<T> cg = conv3d_backward(cache.x, *weights[i], specs[i], bg.grad_x);
    *grad_w[i] = std::move(cg.grad_w);
    add_into(out.grad_x, cg.grad_x);
  }
  return out;
}

// ------------------------------------------------------------------ stream

template <typename T>
StreamResult<T> stream_forward(const Tensor<T>& clip, const StreamParams<T>& p,
                               const ModelConfig& config, int in_channels, Mode mode,
                               bool keep_feature_map) {
  if (clip.shape().c != in_channels) {
    throw ConfigError("stream expects " + std::to_string(in_channels) + " input channels, got " +
                      std::to_string(clip.shape().c));
  }
  StreamResult<T> r;
  BNResult<T> bn = batchnorm_apply(
      conv3d_forward(clip, p.stem_w, stem_conv_spec(in_channels, config.stem_channels)), p.stem_bn,
      mode);
  PoolResult<T> pool = maxpool3d_apply(relu_apply(bn.y), stem_pool_spec());
  Tensor<T> h = pool.y;
  const auto cfgs = block_configs(config);
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    BlockResult<T> b = mdc_block_forward(h, p.blocks[i], cfgs[i], config.skip_enabled, mode);
    h = std::move(b.y);
    if (mode == Mode::train) r.cache.blocks[i] = std::move(b.cache);
  }
  r.features = global_avg_pool(h);
  r.cache.feature_map = h.shape();
  if (keep_feature_map) r.feature_map = h;
  if (mode == Mode::train) {
    r.cache.clip = clip;
    r.cache.stem_bn = std::move(bn.cache);
    r.cache.stem_bn_state = std::move(bn.state);
    r.cache.stem_act = std::move(bn.y);
    r.cache.stem_pool = std::move(pool);
  }
  return r;
}

namespace {

template <typename T>
StreamParams<T> stream_backward(const StreamParams<T>& p, const ModelConfig& config,
                                int in_channels, const StreamCache<T>& cache,
                                const Matrix<T>& grad_features) {
  StreamParams<T> g;
  Tensor<T> grad = global_avg_pool_backward(cache.feature_map, grad_features);
  const auto cfgs = block_configs(config);
  for (int i = static_cast<int>(cfgs.size()) - 1; i >= 0; --i) {
    BlockGrads<T> bg =
        mdc_block_backward(p.blocks[i], cfgs[i], config.skip_enabled, cache.blocks[i], grad);
    g.blocks[i] = std::move(bg.grads);
    grad = std::move(bg.grad_x);
  }
  Tensor<T> g_act = maxpool3d_backward(cache.stem_pool, grad);
  Tensor<T> g_bn = relu_backward(cache.stem_act, g_act);
  BNGrads<T> bng = batchnorm_backward(cache.stem_bn, g_bn);
  g.stem_bn = BNState<T>::fresh(config.stem_channels);
  g.stem_bn.gamma = std::move(bng.grad_gamma);
  g.stem_bn.beta = std::move(bng.grad_beta);
  g.stem_w = conv3d_backward(cache.clip, p.stem_w,
                             stem_conv_spec(in_channels, config.stem_channels), bng.grad_x)
                 .grad_w;
  return g;
}

template <typename T>
void clear_stats(StreamParams<T>& s) {
  zero_bn_stats(s.stem_bn);
  for (auto& b : s.blocks) {
    zero_bn_stats(b.bn_1d);
    zero_bn_stats(b.bn_2d);
    zero_bn_stats(b.bn_3d);
  }
}

template <typename T>
void commit_stream(StreamParams<T>& s, const StreamCache<T>& c) {
  s.stem_bn.running_mean = c.stem_bn_state.running_mean;
  s.stem_bn.running_var = c.stem_bn_state.running_var;
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    std::array<BNState<T>*, 3> dst{&s.blocks[i].bn_1d, &s.blocks[i].bn_2d, &s.blocks[i].bn_3d};
    for (int k = 0; k < 3; ++k) {
      dst[k]->running_mean = c.blocks[i].bn_state[k].running_mean;
      dst[k]->running_var = c.blocks[i].bn_state[k].running_var;
    }
  }
}

}  // namespace

template <typename T>
ModelOutput<T> model_forward(const Tensor<T>* rgb, const Tensor<T>* flow,
                             const ModelParams<T>& params, Mode mode) {
  const ModelConfig& cfg = params.config;
  const bool has_rgb = rgb != nullptr && !rgb->empty();
  const bool has_flow = flow != nullptr && !flow->empty();
  if (cfg.uses_rgb() != has_rgb || cfg.uses_flow() != has_flow) {
    throw UsageError("mode " + to_string(cfg.mode) + " requires " +
                     (cfg.mode == StreamMode::fusion ? std::string("rgb and flow inputs")
                                                     : to_string(cfg.mode) + " input only"));
  }
  if (has_rgb && has_flow && rgb->shape().n != flow->shape().n) {
    throw ConfigError("rgb and flow batches differ in size");
  }
  ModelOutput<T> out;
  out.cache.mode = mode;
  Matrix<T> features;
  if (has_rgb) {
    StreamResult<T> s = stream_forward(*rgb, *params.rgb, cfg, cfg.rgb_channels, mode);
    features = std::move(s.features);
    if (mode == Mode::train) out.cache.rgb = std::move(s.cache);
  }
  if (has_flow) {
    StreamResult<T> s = stream_forward(*flow, *params.flow, cfg, cfg.flow_channels, mode);
    features = has_rgb ? concat_features(features, s.features) : std::move(s.features);
    if (mode == Mode::train) out.cache.flow = std::move(s.cache);
  }
  out.logits = linear_apply(features, params.fc_w, std::span<const T>(params.fc_b));
  out.cache.fc_input = std::move(features);
  return out;
}

template <typename T>
ModelParams<T> model_backward(const ModelParams<T>& params, const ModelCache<T>& cache,
                              const Matrix<T>& grad_logits) {
  if (cache.mode != Mode::train) throw ConfigError("model_backward needs a train-mode cache");
  const ModelConfig& cfg = params.config;
  ModelParams<T> g;
  g.config = cfg;
  LinearGrads<T> lg = linear_backward(cache.fc_input, params.fc_w, grad_logits);
  g.fc_w = std::move(lg.grad_w);
  g.fc_b = std::move(lg.grad_b);
  const int per_stream = cfg.block_channels.back();
  auto columns = [&](int c0) {
    Matrix<T> m(lg.grad_x.rows, per_stream);
    for (int n = 0; n < m.rows; ++n) {
      std::copy(lg.grad_x.row(n) + c0, lg.grad_x.row(n) + c0 + per_stream, m.row(n));
    }
    return m;
  };
  int offset = 0;
  if (params.rgb) {
    g.rgb = stream_backward(*params.rgb, cfg, cfg.rgb_channels, *cache.rgb, columns(offset));
    clear_stats(*g.rgb);
    offset += per_stream;
  }
  if (params.flow) {
    g.flow = stream_backward(*params.flow, cfg, cfg.flow_channels, *cache.flow, columns(offset));
    clear_stats(*g.flow);
  }
  return g;
}

template <typename T>
void commit_running_stats(ModelParams<T>& params, const ModelCache<T>& cache) {
  if (cache.mode != Mode::train) return;
  if (params.rgb && cache.rgb) commit_stream(*params.rgb, *cache.rgb);
  if (params.flow && cache.flow) commit_stream(*params.flow, *cache.flow);
}

#define MDCN_INSTANTIATE_MODEL(T)                                                              \
  template ModelParams<T> zeros_like(const ModelParams<T>&);                                   \
  template ModelParams<T> init_params(const ModelConfig&, std::uint64_t);                      \
  template BlockResult<T> mdc_block_forward(const Tensor<T>&, const MDCBlockParams<T>&,        \
                                            const MDCBlockConfig&, bool, Mode);                \
  template BlockGrads<T> mdc_block_backward(const MDCBlockParams<T>&, const MDCBlockConfig&,   \
                                            bool, const BlockCache<T>&, const Tensor<T>&);     \
  template StreamResult<T> stream_forward(const Tensor<T>&, const StreamParams<T>&,            \
                                          const ModelConfig&, int, Mode, bool);                \
  template ModelOutput<T> model_forward(const Tensor<T>*, const Tensor<T>*,                    \
                                        const ModelParams<T>&, Mode);                          \
  template ModelParams<T> model_backward(const ModelParams<T>&, const ModelCache<T>&,          \
                                         const Matrix<T>&);                                    \
  template void commit_running_stats(ModelParams<T>&, const ModelCache<T>&);

MDCN_INSTANTIATE_MODEL(float)
MDCN_INSTANTIATE_MODEL(double)

#undef MDCN_INSTANTIATE_MODEL

template ModelParams<double> convert_params(const ModelParams<float>&);
template ModelParams<float> convert_params(const ModelParams<double>&);
template ModelParams<float> convert_params(const ModelParams<float>&);
template ModelParams<double> convert_params(const ModelParams<double>&);

}  // namespace mdcn
