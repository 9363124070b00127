#pragma once

#include <cstddef>
#include <vector>

namespace mdcn {

// One image, row-major with interleaved channels, float samples.
struct Frame {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Frame() = default;
  Frame(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int ch = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  float at(int y, int x, int ch = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  bool operator==(const Frame&) const = default;
};

}  // namespace mdcn
