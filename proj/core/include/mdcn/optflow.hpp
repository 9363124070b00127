#pragma once

#include <span>
#include <vector>

#include "mdcn/frame.hpp"
#include "mdcn/tensor.hpp"

namespace mdcn {

// Displacement in pixels per frame; u horizontal, v vertical, planar (2, h, w).
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<float> u;
  std::vector<float> v;

  FlowField() = default;
  FlowField(int h, int w)
      : height(h), width(w), u(static_cast<std::size_t>(h) * w, 0.0f),
        v(static_cast<std::size_t>(h) * w, 0.0f) {}
};

struct HSConfig {
  double alpha = 1.0;  // smoothness weight, in 8-bit intensity units
  int iterations = 100;
  int presmooth = 1;  // 3x3 box blur passes applied to both frames

  void validate() const;
};

// Rec. 601 luma of an h x w x 3 frame in [0, 1].
Frame to_grayscale(const Frame& rgb);

/// Horn-Schunck flow from `prev` to `next` (single-channel luminance in
/// [0, 1], scaled internally to 8-bit units). Block-Jacobi relaxation of
/// brightness constancy plus alpha^2 times an 8-neighbour smoothness term.
FlowField horn_schunck(const Frame& prev, const Frame& next, const HSConfig& cfg);

// The discrete energy the relaxation minimizes, evaluated for `flow`.
double horn_schunck_energy(const Frame& prev, const Frame& next, const FlowField& flow,
                           const HSConfig& cfg);

/// (1, 2, D, h, w) stack: field i is the flow from frame i to i+1, and the
/// last field repeats field D-2. Frames may be luminance or RGB.
VideoTensor clip_to_flowstack(std::span<const Frame> frames, const HSConfig& cfg);

// Clamp to [-20, 20] px/frame, then scale to [-1, 1].
VideoTensor normalize_flow(VideoTensor stack);

inline constexpr float kFlowClamp = 20.0f;

}  // namespace mdcn
