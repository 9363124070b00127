#include <algorithm>
#include <cmath>
#include <numbers>

#include "mdcn/datapipe.hpp"
#include "mdcn/error.hpp"

namespace mdcn {

std::vector<int> sample_frame_indices(int clip_len, int count) {
  if (clip_len < 1 || count < 1) throw ConfigError("sample_frame_indices needs clip_len, count >= 1");
  std::vector<int> idx(count);
  for (int i = 0; i < count; ++i) {
    idx[i] = static_cast<int>((static_cast<std::int64_t>(i) * clip_len) / count);
  }
  return idx;
}

Frame resize_bilinear(const Frame& frame, int height, int width) {
  if (frame.height < 1 || frame.width < 1) throw ConfigError("resize source must be >= 1x1");
  if (height < 1 || width < 1) throw ConfigError("resize target must be >= 1x1");
  if (frame.height == height && frame.width == width) return frame;
  Frame out(height, width, frame.channels);
  const double sy = static_cast<double>(frame.height) / height;
  const double sx = static_cast<double>(frame.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(frame.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, frame.height - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(frame.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, frame.width - 1);
      const float wx = static_cast<float>(fx - x0);
      for (int c = 0; c < frame.channels; ++c) {
        const float top = frame.at(y0, x0, c) * (1.0f - wx) + frame.at(y0, x1, c) * wx;
        const float bot = frame.at(y1, x0, c) * (1.0f - wx) + frame.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1.0f - wy) + bot * wy;
      }
    }
  }
  return out;
}

VideoTensor normalize_rgb_clip(const std::vector<Frame>& frames) {
  if (frames.empty()) throw DataError("normalize_rgb_clip: no frames");
  const Frame& f0 = frames.front();
  VideoTensor t(Shape5{1, f0.channels, static_cast<int>(frames.size()), f0.height, f0.width});
  const std::int64_t hw = static_cast<std::int64_t>(f0.height) * f0.width;
  for (int d = 0; d < static_cast<int>(frames.size()); ++d) {
    const Frame& f = frames[d];
    if (f.height != f0.height || f.width != f0.width || f.channels != f0.channels) {
      throw DataError("normalize_rgb_clip: frames differ in shape");
    }
    for (int c = 0; c < f.channels; ++c) {
      float* dst = t.slice(0, c) + d * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = (f.data[i * f.channels + c] - 0.5f) / 0.5f;
    }
  }
  return t;
}

VideoTensor normalize_rgb_clip(const RawClip& clip) {
  if (clip.dtype != PixelType::u8) throw DataError("normalize_rgb_clip expects a u8 clip");
  std::vector<Frame> frames;
  frames.reserve(clip.frames);
  for (std::uint32_t i = 0; i < clip.frames; ++i) frames.push_back(clip.frame(i));
  return normalize_rgb_clip(frames);
}

Frame tensor_frame(const VideoTensor& clip, int d, int n) {
  const Shape5& s = clip.shape();
  Frame f(s.h, s.w, s.c);
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  for (int c = 0; c < s.c; ++c) {
    const float* src = clip.slice(n, c) + d * hw;
    for (std::int64_t i = 0; i < hw; ++i) f.data[i * s.c + c] = src[i] * 0.5f + 0.5f;
  }
  return f;
}

void AugmentConfig::validate() const {
  if (!(brightness_lo > 0.0) || brightness_hi < brightness_lo) {
    throw ConfigError("brightness factors must satisfy 0 < lo <= hi");
  }
  if (!std::isfinite(rotation_deg) || rotation_deg < 0.0) {
    throw ConfigError("rotation bound must be finite and >= 0");
  }
}

VideoTensor apply_brightness(VideoTensor clip, double factor) {
  if (!(factor > 0.0)) throw ConfigError("brightness factor must be > 0");
  if (factor == 1.0) return clip;
  const float f = static_cast<float>(factor);
  for (float& v : clip.values()) {
    const float unit = std::clamp((v * 0.5f + 0.5f) * f, 0.0f, 1.0f);
    v = (unit - 0.5f) / 0.5f;
  }
  return clip;
}

VideoTensor augment_brightness(VideoTensor clip, Rng& rng, const AugmentConfig& cfg) {
  cfg.validate();
  const double factor = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
  return apply_brightness(std::move(clip), factor);
}

VideoTensor apply_rotation(VideoTensor clip, double degrees) {
  if (degrees == 0.0) return clip;
  const Shape5 s = clip.shape();
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad);
  const double sn = std::sin(rad);
  const double cy = (s.h - 1) * 0.5;
  const double cx = (s.w - 1) * 0.5;
  constexpr float kFill = -1.0f;
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  std::vector<float> plane(static_cast<std::size_t>(hw));
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int d = 0; d < s.d; ++d) {
        float* p = clip.slice(n, c) + d * hw;
        std::copy(p, p + hw, plane.begin());
        for (int y = 0; y < s.h; ++y) {
          for (int x = 0; x < s.w; ++x) {
            // Inverse map: rotate the output coordinate by -angle.
            const double dx = x - cx;
            const double dy = y - cy;
            const double sx = cs * dx + sn * dy + cx;
            const double sy = -sn * dx + cs * dy + cy;
            float value = kFill;
            if (sx >= 0.0 && sy >= 0.0 && sx <= s.w - 1 && sy <= s.h - 1) {
              const int x0 = static_cast<int>(sx);
              const int y0 = static_cast<int>(sy);
              const int x1 = std::min(x0 + 1, s.w - 1);
              const int y1 = std::min(y0 + 1, s.h - 1);
              const float wx = static_cast<float>(sx - x0);
              const float wy = static_cast<float>(sy - y0);
              const auto at = [&](int yy, int xx) { return plane[static_cast<std::size_t>(yy) * s.w + xx]; };
              const float top = at(y0, x0) * (1.0f - wx) + at(y0, x1) * wx;
              const float bot = at(y1, x0) * (1.0f - wx) + at(y1, x1) * wx;
              value = top * (1.0f - wy) + bot * wy;
            }
            p[static_cast<std::int64_t>(y) * s.w + x] = value;
          }
        }
      }
    }
  }
  return clip;
}

VideoTensor augment_rotation(VideoTensor clip, Rng& rng, const AugmentConfig& cfg) {
  cfg.validate();
  const double angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
  return apply_rotation(std::move(clip), angle);
}

std::string to_string(Split split) { return split == Split::train ? "train" : "val"; }

DatasetIndex load_dataset_index(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  DatasetIndex index;
  index.root = root;
  for (Split split : {Split::train, Split::val}) {
    std::vector<ClipEntry>& entries = split == Split::train ? index.train : index.val;
    const fs::path split_dir = root / to_string(split);
    if (!fs::is_directory(split_dir)) {
      throw DataError("dataset split directory missing: " + split_dir.string());
    }
    for (const auto& [name, label] : {std::pair<const char*, int>{"nonviolent", 0}, {"violent", 1}}) {
      const fs::path dir = split_dir / name;
      if (!fs::is_directory(dir)) continue;
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".rvc") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (auto& f : files) entries.push_back({std::move(f), label});
    }
  }
  return index;
}

}  // namespace mdcn
