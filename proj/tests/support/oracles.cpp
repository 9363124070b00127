#include "oracles.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unistd.h>
#include <numbers>
#include <numeric>

namespace mdcn::oracle {

Tensor<double> distinct_tensor(const Shape5& shape, Rng& rng, double gap) {
  Tensor<double> t(shape);
  const std::int64_t n = t.size();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (std::int64_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i) + 1))]);
  }
  const double offset = -0.5 * gap * static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    // Keep values off zero so ReLU never sits on its kink.
    t.values()[i] = offset + gap * (static_cast<double>(order[i]) + 0.25);
  }
  return t;
}

Tensor<double> naive_conv3d(const Tensor<double>& x, const Tensor<double>& w, const ConvSpec& spec) {
  const Shape5 xs = x.shape();
  const int od = enumerated_extent(xs.d, spec.kernel.t, spec.stride.t, spec.padding.t);
  const int oh = enumerated_extent(xs.h, spec.kernel.h, spec.stride.h, spec.padding.h);
  const int ow = enumerated_extent(xs.w, spec.kernel.w, spec.stride.w, spec.padding.w);
  Tensor<double> y(Shape5{xs.n, spec.out_channels, od, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < spec.out_channels; ++o)
      for (int z = 0; z < od; ++z)
        for (int r = 0; r < oh; ++r)
          for (int c = 0; c < ow; ++c) {
            double acc = 0.0;
            for (int i = 0; i < spec.in_channels; ++i)
              for (int kt = 0; kt < spec.kernel.t; ++kt)
                for (int kh = 0; kh < spec.kernel.h; ++kh)
                  for (int kw = 0; kw < spec.kernel.w; ++kw) {
                    const int t = z * spec.stride.t - spec.padding.t + kt;
                    const int h = r * spec.stride.h - spec.padding.h + kh;
                    const int ww = c * spec.stride.w - spec.padding.w + kw;
                    if (t < 0 || t >= xs.d || h < 0 || h >= xs.h || ww < 0 || ww >= xs.w) continue;
                    acc += x.at(n, i, t, h, ww) * w.at(o, i, kt, kh, kw);
                  }
            y.at(n, o, z, r, c) = acc;
          }
  return y;
}

int enumerated_extent(int in, int kernel, int stride, int pad) {
  int count = 0;
  for (int start = -pad; start + kernel <= in + pad; start += stride) ++count;
  return count;
}

double central_difference(const std::function<double()>& f, double& value, double step) {
  const double saved = value;
  value = saved + step;
  const double plus = f();
  value = saved - step;
  const double minus = f();
  value = saved;
  return (plus - minus) / (2.0 * step);
}

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

Frame periodic_pattern(int n, Rng& rng) {
  struct Wave {
    int kx, ky;
    double amp, phase;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 6; ++i) {
    waves.push_back({static_cast<int>(rng.below(4)) + 1, static_cast<int>(rng.below(4)),
                     rng.uniform(0.03, 0.08), rng.uniform(0.0, 2.0 * std::numbers::pi)});
  }
  Frame f(n, n, 1);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double v = 0.5;
      for (const Wave& w : waves) {
        v += w.amp * std::cos(2.0 * std::numbers::pi * (w.kx * x + w.ky * y) / n + w.phase);
      }
      f.at(y, x) = static_cast<float>(v);
    }
  }
  return f;
}

Frame translate_wrap(const Frame& frame, int dx, int dy) {
  Frame out(frame.height, frame.width, frame.channels);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const int sy = ((y - dy) % frame.height + frame.height) % frame.height;
      const int sx = ((x - dx) % frame.width + frame.width) % frame.width;
      for (int c = 0; c < frame.channels; ++c) out.at(y, x, c) = frame.at(sy, sx, c);
    }
  }
  return out;
}

Frame warp_by_flow(const Frame& next, const FlowField& flow) {
  Frame out(next.height, next.width, 1);
  for (int y = 0; y < next.height; ++y) {
    for (int x = 0; x < next.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * next.width + x;
      const double sx = std::clamp(x + static_cast<double>(flow.u[i]), 0.0, next.width - 1.0);
      const double sy = std::clamp(y + static_cast<double>(flow.v[i]), 0.0, next.height - 1.0);
      const int x0 = static_cast<int>(sx);
      const int y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, next.width - 1);
      const int y1 = std::min(y0 + 1, next.height - 1);
      const double ax = sx - x0;
      const double ay = sy - y0;
      const double top = next.at(y0, x0) * (1 - ax) + next.at(y0, x1) * ax;
      const double bot = next.at(y1, x0) * (1 - ax) + next.at(y1, x1) * ax;
      out.at(y, x) = static_cast<float>(top * (1 - ay) + bot * ay);
    }
  }
  return out;
}

double mean_squared_difference(const Frame& a, const Frame& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.data.size());
}

std::int64_t hand_param_count(const ModelConfig& c) {
  const auto stream = [&](std::int64_t in_ch) {
    std::int64_t p = c.stem_channels * in_ch * 5 * 7 * 7 + 2 * c.stem_channels;
    std::int64_t prev = c.stem_channels;
    for (int co : c.block_channels) {
      p += co * prev * 3;      // 3x1x1
      p += co * prev * 9;      // 1x3x3
      p += co * prev * 27;     // 3x3x3
      p += 3 * 2 * co;         // three BN layers
      if (c.skip_enabled) {
        p += (co / 2) * 3 * co;  // reduction to half width
        p += (co / 2) * prev;    // skip projection
      } else {
        p += co * 3 * co;
      }
      prev = co;
    }
    return p;
  };
  std::int64_t total = 0;
  std::int64_t features = 0;
  if (c.mode != StreamMode::flow) {
    total += stream(c.rgb_channels);
    features += c.block_channels[3];
  }
  if (c.mode != StreamMode::rgb) {
    total += stream(c.flow_channels);
    features += c.block_channels[3];
  }
  return total + features * c.classes + c.classes;
}

std::vector<Shape5> hand_stream_shapes(const ModelConfig& c, int batch) {
  std::vector<Shape5> shapes;
  int d = enumerated_extent(c.frames, 5, 1, 2);
  int h = enumerated_extent(c.input_size, 7, 2, 3);
  shapes.push_back({batch, c.stem_channels, d, h, h});
  h = enumerated_extent(h, 3, 2, 1);
  shapes.push_back({batch, c.stem_channels, d, h, h});
  for (int i = 0; i < 4; ++i) {
    h = enumerated_extent(h, 3, c.block_spatial_strides[i], 1);
    shapes.push_back({batch, c.block_channels[i], d, h, h});
  }
  return shapes;
}

ScratchDir::ScratchDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("mdcn-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

ScratchDir::~ScratchDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::vector<std::pair<std::string, std::string>> tree_contents(const std::filesystem::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    out.emplace_back(std::filesystem::relative(e.path(), root).string(), bytes.str());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mdcn::oracle
