#include "mdcn/optflow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mdcn/error.hpp"
#include "mdcn/parallel.hpp"

namespace mdcn {
namespace {

constexpr float kIntensityScale = 255.0f;
constexpr float kEdgeWeight = 1.0f / 6.0f;
constexpr float kCornerWeight = 1.0f / 12.0f;

// 3x3 box blur, replicate border. Sums are grouped symmetrically so that a
// horizontally mirrored input gives the exactly mirrored output.
std::vector<float> box_blur(const std::vector<float>& src, int h, int w) {
  std::vector<float> rows(src.size());
  std::vector<float> out(src.size());
  for (int y = 0; y < h; ++y) {
    const float* s = src.data() + static_cast<std::size_t>(y) * w;
    float* d = rows.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      const float l = s[std::max(x - 1, 0)];
      const float r = s[std::min(x + 1, w - 1)];
      d[x] = (l + r) + s[x];
    }
  }
  for (int y = 0; y < h; ++y) {
    const float* up = rows.data() + static_cast<std::size_t>(std::max(y - 1, 0)) * w;
    const float* mid = rows.data() + static_cast<std::size_t>(y) * w;
    const float* dn = rows.data() + static_cast<std::size_t>(std::min(y + 1, h - 1)) * w;
    float* d = out.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) d[x] = ((up[x] + dn[x]) + mid[x]) * (1.0f / 9.0f);
  }
  return out;
}

struct Derivatives {
  int h = 0;
  int w = 0;
  std::vector<float> ix, iy, it;
};

Derivatives derivatives(const Frame& prev, const Frame& next, const HSConfig& cfg) {
  if (prev.channels != 1 || next.channels != 1) {
    throw ConfigError("horn_schunck expects single-channel luminance frames");
  }
  if (prev.height != next.height || prev.width != next.width) {
    throw ConfigError("horn_schunck frames differ in size");
  }
  if (prev.height < 2 || prev.width < 2) {
    throw ConfigError("horn_schunck needs frames of at least 2x2, got " +
                      std::to_string(prev.height) + "x" + std::to_string(prev.width));
  }
  const int h = prev.height;
  const int w = prev.width;
  std::vector<float> p(prev.data.size());
  std::vector<float> n(next.data.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = prev.data[i] * kIntensityScale;
    n[i] = next.data[i] * kIntensityScale;
  }
  for (int pass = 0; pass < cfg.presmooth; ++pass) {
    p = box_blur(p, h, w);
    n = box_blur(n, h, w);
  }
  Derivatives d;
  d.h = h;
  d.w = w;
  d.ix.resize(p.size());
  d.iy.resize(p.size());
  d.it.resize(p.size());
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(y - 1, 0);
    const int y1 = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(x - 1, 0);
      const int x1 = std::min(x + 1, w - 1);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const auto at = [w](const std::vector<float>& img, int yy, int xx) {
        return img[static_cast<std::size_t>(yy) * w + xx];
      };
      d.ix[i] = 0.25f * ((at(p, y, x1) - at(p, y, x0)) + (at(n, y, x1) - at(n, y, x0)));
      d.iy[i] = 0.25f * ((at(p, y1, x) - at(p, y0, x)) + (at(n, y1, x) - at(n, y0, x)));
      d.it[i] = n[i] - p[i];
    }
  }
  return d;
}

// Weighted neighbour sum and total in-image weight at (y, x).
inline void neighbour_sum(const std::vector<float>& f, int h, int w, int y, int x, float& sum,
                          float& weight) {
  const auto get = [&](int yy, int xx, bool& ok) -> float {
    ok = yy >= 0 && yy < h && xx >= 0 && xx < w;
    return ok ? f[static_cast<std::size_t>(yy) * w + xx] : 0.0f;
  };
  bool ol, orr, ou, od, oul, our, odl, odr;
  const float l = get(y, x - 1, ol), r = get(y, x + 1, orr);
  const float u = get(y - 1, x, ou), d = get(y + 1, x, od);
  const float ul = get(y - 1, x - 1, oul), ur = get(y - 1, x + 1, our);
  const float dl = get(y + 1, x - 1, odl), dr = get(y + 1, x + 1, odr);
  sum = ((l + r) + (u + d)) * kEdgeWeight + ((ul + ur) + (dl + dr)) * kCornerWeight;
  const int edges = (ol ? 1 : 0) + (orr ? 1 : 0) + (ou ? 1 : 0) + (od ? 1 : 0);
  const int corners = (oul ? 1 : 0) + (our ? 1 : 0) + (odl ? 1 : 0) + (odr ? 1 : 0);
  weight = static_cast<float>(edges) * kEdgeWeight + static_cast<float>(corners) * kCornerWeight;
}

}  // namespace

void HSConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("horn_schunck alpha must be > 0");
  if (iterations < 1) throw ConfigError("horn_schunck iterations must be >= 1");
  if (presmooth < 0) throw ConfigError("horn_schunck presmooth passes must be >= 0");
}

Frame to_grayscale(const Frame& rgb) {
  if (rgb.channels != 3) {
    throw ConfigError("to_grayscale expects 3 channels, got " + std::to_string(rgb.channels));
  }
  Frame out(rgb.height, rgb.width, 1);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const float* px = rgb.data.data() + i * 3;
    out.data[i] = 0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2];
  }
  return out;
}

FlowField horn_schunck(const Frame& prev, const Frame& next, const HSConfig& cfg) {
  cfg.validate();
  const Derivatives d = derivatives(prev, next, cfg);
  const int h = d.h;
  const int w = d.w;
  const float alpha2 = static_cast<float>(cfg.alpha * cfg.alpha);
  FlowField flow(h, w);
  FlowField next_flow(h, w);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        float su, sv, wt;
        neighbour_sum(flow.u, h, w, y, x, su, wt);
        neighbour_sum(flow.v, h, w, y, x, sv, wt);
        const float ubar = su / wt;
        const float vbar = sv / wt;
        const float ix = d.ix[i];
        const float iy = d.iy[i];
        const float t = (ix * ubar + iy * vbar + d.it[i]) / (alpha2 * wt + ix * ix + iy * iy);
        next_flow.u[i] = ubar - ix * t;
        next_flow.v[i] = vbar - iy * t;
      }
    }
    std::swap(flow, next_flow);
  }
  return flow;
}

double horn_schunck_energy(const Frame& prev, const Frame& next, const FlowField& flow,
                           const HSConfig& cfg) {
  cfg.validate();
  const Derivatives d = derivatives(prev, next, cfg);
  if (flow.height != d.h || flow.width != d.w) throw ConfigError("flow field size mismatch");
  const int h = d.h;
  const int w = d.w;
  const double alpha2 = cfg.alpha * cfg.alpha;
  double data = 0.0;
  double smooth = 0.0;
  const auto idx = [w](int y, int x) { return static_cast<std::size_t>(y) * w + x; };
  const auto edge = [&](std::size_t a, std::size_t b, double weight) {
    const double du = static_cast<double>(flow.u[a]) - flow.u[b];
    const double dv = static_cast<double>(flow.v[a]) - flow.v[b];
    smooth += weight * (du * du + dv * dv);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = idx(y, x);
      const double r = static_cast<double>(d.ix[i]) * flow.u[i] +
                       static_cast<double>(d.iy[i]) * flow.v[i] + d.it[i];
      data += r * r;
      // Each undirected edge once: right, down, down-right, down-left.
      if (x + 1 < w) edge(i, idx(y, x + 1), kEdgeWeight);
      if (y + 1 < h) edge(i, idx(y + 1, x), kEdgeWeight);
      if (x + 1 < w && y + 1 < h) edge(i, idx(y + 1, x + 1), kCornerWeight);
      if (x > 0 && y + 1 < h) edge(i, idx(y + 1, x - 1), kCornerWeight);
    }
  }
  return data + alpha2 * smooth;
}

VideoTensor clip_to_flowstack(std::span<const Frame> frames, const HSConfig& cfg) {
  const int count = static_cast<int>(frames.size());
  if (count < 2) {
    throw DataError("flow stack needs at least 2 frames, got " + std::to_string(count));
  }
  std::vector<Frame> luma(frames.size());
  for (int i = 0; i < count; ++i) {
    luma[i] = frames[i].channels == 3 ? to_grayscale(frames[i]) : frames[i];
  }
  const int h = luma[0].height;
  const int w = luma[0].width;
  VideoTensor stack(Shape5{1, 2, count, h, w});
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  parallel_for(count - 1, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) {
      const FlowField f = horn_schunck(luma[i], luma[i + 1], cfg);
      std::copy(f.u.begin(), f.u.end(), stack.slice(0, 0) + i * hw);
      std::copy(f.v.begin(), f.v.end(), stack.slice(0, 1) + i * hw);
    }
  });
  for (int c = 0; c < 2; ++c) {
    float* plane = stack.slice(0, c);
    std::copy(plane + (count - 2) * hw, plane + (count - 1) * hw, plane + (count - 1) * hw);
  }
  return stack;
}

VideoTensor normalize_flow(VideoTensor stack) {
  for (float& v : stack.values()) v = std::clamp(v, -kFlowClamp, kFlowClamp) / kFlowClamp;
  return stack;
}

}  // namespace mdcn
