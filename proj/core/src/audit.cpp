#include "mdcn/error.hpp"
#include "mdcn/model.hpp"

namespace mdcn {
namespace {

class Auditor {
 public:
  explicit Auditor(ComplexityReport& report) : report_(report) {}

  Shape5 conv(const std::string& name, const Shape5& in, const ConvSpec& spec) {
    const Shape5 out = spec.output_shape(in);
    const std::int64_t weights = spec.weight_shape().volume();
    add({name, "conv", out, weights, out.volume() * spec.in_channels * spec.kernel_volume(), 0});
    return out;
  }

  Shape5 bn(const std::string& name, const Shape5& in) {
    add({name, "bn", in, 2 * static_cast<std::int64_t>(in.c), 0, in.volume()});
    return in;
  }

  Shape5 relu(const std::string& name, const Shape5& in) {
    add({name, "relu", in, 0, 0, in.volume()});
    return in;
  }

  Shape5 pool(const std::string& name, const Shape5& in, const PoolSpec& spec) {
    const Shape5 out = spec.output_shape(in);
    const std::int64_t window =
        static_cast<std::int64_t>(spec.kernel.t) * spec.kernel.h * spec.kernel.w;
    add({name, "pool", out, 0, 0, out.volume() * window});
    return out;
  }

  Shape5 gap(const std::string& name, const Shape5& in) {
    const Shape5 out{in.n, in.c, 1, 1, 1};
    add({name, "gap", out, 0, 0, in.volume()});
    return out;
  }

  void fc(const std::string& name, int batch, int in_features, int out_features) {
    const std::int64_t weights = static_cast<std::int64_t>(in_features) * out_features;
    add({name, "fc", Shape5{batch, out_features, 1, 1, 1}, weights + out_features,
         batch * weights, 0});
  }

 private:
  void add(LayerCost cost) {
    report_.params += cost.params;
    report_.macs += cost.macs;
    report_.element_ops += cost.element_ops;
    report_.layers.push_back(std::move(cost));
  }

  ComplexityReport& report_;
};

std::vector<Shape5> audit_stream(Auditor& a, const ModelConfig& config, const std::string& prefix,
                                 int in_channels) {
  std::vector<Shape5> shapes;
  Shape5 x{1, in_channels, config.frames, config.input_size, config.input_size};
  x = a.conv(prefix + ".stem.conv", x, stem_conv_spec(in_channels, config.stem_channels));
  shapes.push_back(x);
  a.bn(prefix + ".stem.bn", x);
  a.relu(prefix + ".stem.relu", x);
  x = a.pool(prefix + ".stem.pool", x, stem_pool_spec());
  shapes.push_back(x);
  const auto cfgs = block_configs(config);
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const MDCBlockConfig& c = cfgs[i];
    const std::string bp = prefix + ".block" + std::to_string(i + 1);
    Shape5 b1 = a.conv(bp + ".conv_1d", x, c.temporal_conv());
    a.bn(bp + ".bn_1d", b1);
    Shape5 b2 = a.conv(bp + ".conv_2d", x, c.spatial_conv());
    a.bn(bp + ".bn_2d", b2);
    Shape5 b3 = a.conv(bp + ".conv_3d", x, c.volume_conv());
    a.bn(bp + ".bn_3d", b3);
    if (b1.d != b2.d || b1.h != b2.h || b2.d != b3.d || b2.h != b3.h || b2.w != b3.w) {
      throw ConfigError(bp + ": branch outputs disagree in shape");
    }
    Shape5 fused = b1;
    fused.c = 3 * c.c_out;
    Shape5 pooled = a.pool(bp + ".pool", fused, c.fuse_pool());
    Shape5 main = a.conv(bp + ".reduce", pooled, c.reduce_conv(config.skip_enabled));
    Shape5 out = main;
    if (config.skip_enabled) {
      Shape5 skip = a.conv(bp + ".skip", x, c.skip_conv());
      if (skip.d != main.d || skip.h != main.h || skip.w != main.w) {
        throw ConfigError(bp + ": skip path shape " + skip.str() + " != main path " + main.str());
      }
      out.c = main.c + skip.c;
    }
    x = a.relu(bp + ".relu", out);
    shapes.push_back(x);
  }
  a.gap(prefix + ".gap", x);
  return shapes;
}

}  // namespace

ComplexityReport audit_model(const ModelConfig& config) {
  config.validate();
  ComplexityReport report;
  Auditor a(report);
  if (config.uses_rgb()) audit_stream(a, config, "rgb", config.rgb_channels);
  if (config.uses_flow()) audit_stream(a, config, "flow", config.flow_channels);
  a.fc("head.fc", 1, config.feature_dim(), config.classes);
  return report;
}

std::int64_t audit_params(const ModelConfig& config) { return audit_model(config).params; }

std::int64_t audit_flops(const ModelConfig& config) { return audit_model(config).macs; }

ReferenceFigures reference_figures(StreamMode mode) {
  if (mode == StreamMode::fusion) return {0.94, 8.16};
  return {0.47, 4.47};
}

std::vector<Shape5> stream_activation_shapes(const ModelConfig& config) {
  config.validate();
  ComplexityReport scratch;
  Auditor a(scratch);
  const bool rgb = config.uses_rgb();
  return audit_stream(a, config, rgb ? "rgb" : "flow",
                      rgb ? config.rgb_channels : config.flow_channels);
}

}  // namespace mdcn
