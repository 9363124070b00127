#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mdcn/frame.hpp"
#include "mdcn/rng.hpp"
#include "mdcn/tensor.hpp"

namespace mdcn {

// ---------------------------------------------------------------- RVC files

enum class PixelType : std::uint8_t { u8 = 0, f32 = 1 };

std::size_t pixel_size(PixelType type);

/// Decoded clip: frame-major, row-major, channel-interleaved raw bytes
/// (f32 samples stored little-endian).
struct RawClip {
  std::uint32_t frames = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  PixelType dtype = PixelType::u8;
  std::vector<std::uint8_t> payload;

  std::size_t frame_bytes() const {
    return static_cast<std::size_t>(height) * width * channels * pixel_size(dtype);
  }
  std::size_t expected_bytes() const { return frame_bytes() * frames; }
  void validate() const;

  // Frame `index` as floats: u8 samples are scaled to [0, 1], f32 copied as-is.
  Frame frame(std::uint32_t index) const;

  static RawClip from_u8_frames(const std::vector<Frame>& frames);    // expects [0, 1]
  static RawClip from_f32_frames(const std::vector<Frame>& frames);
  bool operator==(const RawClip&) const = default;
};

inline constexpr char kRvcMagic[4] = {'R', 'V', 'C', '1'};
inline constexpr std::size_t kRvcHeaderBytes = 21;

// Layout (little-endian): "RVC1", u32 frames, u32 height, u32 width,
// u32 channels, u8 dtype, payload.
std::vector<std::uint8_t> encode_rvc(const RawClip& clip);
RawClip decode_rvc(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");
void write_rvc(const RawClip& clip, const std::filesystem::path& path);
RawClip read_rvc(const std::filesystem::path& path);

// ----------------------------------------------------------- preprocessing

// i -> floor(i * clip_len / count)
std::vector<int> sample_frame_indices(int clip_len, int count);

// Bilinear, half-pixel centres, edge clamped; channels independent.
Frame resize_bilinear(const Frame& frame, int height, int width);

/// Frames in [0, 1] (u8 samples divided by 255, possibly resized) to a
/// (1, c, d, h, w) tensor in [-1, 1] via (v - 0.5) / 0.5.
VideoTensor normalize_rgb_clip(const std::vector<Frame>& frames);
// Whole u8 clip; DataError for any other dtype.
VideoTensor normalize_rgb_clip(const RawClip& clip);

// Inverse of the normalization: tensor frame `d` back to [0, 1] h x w x c.
Frame tensor_frame(const VideoTensor& clip, int d, int n = 0);

struct AugmentConfig {
  bool brightness = true;
  bool rotation = true;
  double brightness_lo = 0.8;
  double brightness_hi = 1.2;
  double rotation_deg = 10.0;  // angles in [-rotation_deg, +rotation_deg]

  void validate() const;
};

// One factor for the whole clip, applied in [0, 1] space and clamped.
VideoTensor apply_brightness(VideoTensor clip, double factor);
VideoTensor augment_brightness(VideoTensor clip, Rng& rng, const AugmentConfig& cfg = {});

// Rotation about the frame centre; out-of-frame samples take the minimum value (-1).
VideoTensor apply_rotation(VideoTensor clip, double degrees);
VideoTensor augment_rotation(VideoTensor clip, Rng& rng, const AugmentConfig& cfg = {});

// ----------------------------------------------------------------- dataset

enum class Split { train, val };
std::string to_string(Split split);

struct ClipEntry {
  std::filesystem::path path;
  int label = 0;  // 0 nonviolent, 1 violent
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<ClipEntry> train;
  std::vector<ClipEntry> val;

  const std::vector<ClipEntry>& split(Split s) const { return s == Split::train ? train : val; }
};

/// Scans <root>/{train,val}/{violent,nonviolent}/*.rvc in sorted order.
/// Missing split directories raise DataError.
DatasetIndex load_dataset_index(const std::filesystem::path& root);

struct SynthConfig {
  int train_per_class = 160;
  int val_per_class = 40;
  int frames = 64;
  int size = 112;
  int min_blobs = 2;
  int max_blobs = 3;
  double min_sigma = 5.0;  // blob radius scale in pixels at size 112
  double max_sigma = 9.0;
  double calm_speed = 1.0;  // px/frame upper bound for nonviolent motion
  double violent_speed_lo = 3.0;
  double violent_speed_hi = 6.0;
  double jitter = 1.5;  // per-frame velocity perturbation for violent clips
  // Nonviolent clips also carry a fast straight-line passer-by, so speed
  // alone no longer separates the classes.
  bool motion_ambiguity = false;
  std::uint64_t seed = 7;

  void validate() const;
};

// Renders one clip of the given class; fully determined by (cfg.seed, split, index, label).
RawClip render_synthetic_clip(const SynthConfig& cfg, int label, std::uint64_t stream);

DatasetIndex generate_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& root);

}  // namespace mdcn
