#include <cmath>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "mdcn/datapipe.hpp"
#include "mdcn/error.hpp"
#include "mdcn/optflow.hpp"
#include "oracles.hpp"

using namespace mdcn;

namespace {

RawClip random_clip(Rng& rng, std::uint32_t frames, std::uint32_t h, std::uint32_t w, std::uint32_t c,
                    PixelType type) {
  RawClip clip{frames, h, w, c, type, {}};
  clip.payload.resize(clip.expected_bytes());
  if (type == PixelType::u8) {
    for (auto& b : clip.payload) b = static_cast<std::uint8_t>(rng.below(256));
  } else {
    for (std::size_t i = 0; i < clip.payload.size(); i += 4) {
      const float v = static_cast<float>(rng.uniform(-50.0, 50.0));
      std::memcpy(clip.payload.data() + i, &v, 4);
    }
  }
  return clip;
}

VideoTensor smooth_clip(int frames, int size) {
  VideoTensor t(Shape5{1, 3, frames, size, size});
  for (int c = 0; c < 3; ++c) {
    for (int d = 0; d < frames; ++d) {
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          t.at(0, c, d, y, x) = static_cast<float>(0.5 * std::sin(0.11 * x + 0.3 * c) *
                                                   std::cos(0.07 * y + 0.2 * d));
        }
      }
    }
  }
  return t;
}

double mean_abs_diff_inner(const VideoTensor& a, const VideoTensor& b, int margin) {
  const Shape5 s = a.shape();
  double sum = 0.0;
  std::int64_t n = 0;
  for (int c = 0; c < s.c; ++c) {
    for (int d = 0; d < s.d; ++d) {
      for (int y = margin; y < s.h - margin; ++y) {
        for (int x = margin; x < s.w - margin; ++x) {
          sum += std::abs(a.at(0, c, d, y, x) - b.at(0, c, d, y, x));
          ++n;
        }
      }
    }
  }
  return sum / static_cast<double>(n);
}

double mean_flow_magnitude(const RawClip& clip) {
  HSConfig cfg;
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::uint32_t f = 0; f + 1 < clip.frames; ++f) {
    const FlowField flow = horn_schunck(to_grayscale(clip.frame(f)), to_grayscale(clip.frame(f + 1)), cfg);
    for (std::size_t i = 0; i < flow.u.size(); ++i) {
      sum += std::hypot(flow.u[i], flow.v[i]);
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("datapipe") {

TEST_CASE("rvc round trip for every dtype and channel count") {
  Rng rng(1);
  oracle::ScratchDir dir("rvc");
  for (PixelType type : {PixelType::u8, PixelType::f32}) {
    for (std::uint32_t c : {1u, 2u, 3u}) {
      const RawClip clip = random_clip(rng, 3, 5, 7, c, type);
      const auto path = dir.path() / ("clip" + std::to_string(c) + ".rvc");
      write_rvc(clip, path);
      CHECK(read_rvc(path) == clip);
      CHECK(decode_rvc(encode_rvc(clip)) == clip);
    }
  }
}

TEST_CASE("rvc header layout") {
  RawClip clip{64, 112, 112, 3, PixelType::u8, {}};
  clip.payload.assign(clip.expected_bytes(), 0);
  const std::vector<std::uint8_t> bytes = encode_rvc(clip);
  const std::vector<std::uint8_t> header{'R', 'V', 'C', '1', 64, 0, 0, 0, 112, 0, 0, 0,
                                         112, 0,  0,  0,  3,  0, 0, 0, 0};
  REQUIRE(bytes.size() == header.size() + clip.expected_bytes());
  CHECK(std::equal(header.begin(), header.end(), bytes.begin()));
}

TEST_CASE("rvc decoding errors") {
  Rng rng(2);
  std::vector<std::uint8_t> bytes = encode_rvc(random_clip(rng, 2, 3, 3, 1, PixelType::u8));
  std::vector<std::uint8_t> bad = bytes;
  std::memcpy(bad.data(), "XXXX", 4);
  try {
    decode_rvc(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("XXXX") != std::string::npos);
  }
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 1);
  CHECK_THROWS_AS(decode_rvc(truncated), DataError);
  std::vector<std::uint8_t> dtype = bytes;
  dtype[20] = 7;
  CHECK_THROWS_AS(decode_rvc(dtype), DataError);
  CHECK_THROWS_AS(decode_rvc(std::vector<std::uint8_t>(10, 0)), DataError);
  CHECK_THROWS_AS(read_rvc("/nonexistent/clip.rvc"), DataError);
}

TEST_CASE("frame index sampling") {
  std::vector<int> evens;
  for (int i = 0; i < 32; ++i) evens.push_back(2 * i);
  CHECK(sample_frame_indices(64, 32) == evens);
  std::vector<int> identity(32);
  for (int i = 0; i < 32; ++i) identity[i] = i;
  CHECK(sample_frame_indices(32, 32) == identity);
  std::vector<int> repeated;
  for (int i = 0; i < 8; ++i) repeated.insert(repeated.end(), 4, i);
  CHECK(sample_frame_indices(8, 32) == repeated);

  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const int len = 1 + static_cast<int>(rng.below(100));
    const int n = 1 + static_cast<int>(rng.below(100));
    const std::vector<int> idx = sample_frame_indices(len, n);
    REQUIRE(static_cast<int>(idx.size()) == n);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      REQUIRE(idx[i] >= 0);
      REQUIRE(idx[i] < len);
      if (i > 0) REQUIRE(idx[i] >= idx[i - 1]);
    }
  }
}

TEST_CASE("bilinear resize") {
  const Frame flat(5, 7, 3, 0.4f);
  for (auto [h, w] : {std::pair{1, 1}, std::pair{9, 4}, std::pair{224, 224}}) {
    const Frame r = resize_bilinear(flat, h, w);
    CHECK(r.height == h);
    CHECK(r.width == w);
    for (float v : r.data) REQUIRE(v == doctest::Approx(0.4f));
  }
  Rng rng(4);
  Frame any(6, 5, 2);
  for (float& v : any.data) v = static_cast<float>(rng.uniform());
  CHECK(resize_bilinear(any, 6, 5) == any);

  Frame ramp(2, 2, 1);
  ramp.data = {0, 0, 1, 1};
  CHECK(resize_bilinear(ramp, 2, 2) == ramp);
  CHECK(resize_bilinear(ramp, 1, 1).data[0] == doctest::Approx(0.5f));
}

TEST_CASE("rgb normalization") {
  std::vector<Frame> frames(2, Frame(1, 3, 3));
  frames[0].data = {1.0f, 0.0f, 128.0f / 255.0f, 0, 0, 0, 0, 0, 0};
  const VideoTensor t = normalize_rgb_clip(frames);
  CHECK(t.shape() == Shape5{1, 3, 2, 1, 3});
  CHECK(t.at(0, 0, 0, 0, 0) == doctest::Approx(1.0f));
  CHECK(t.at(0, 1, 0, 0, 0) == doctest::Approx(-1.0f));
  CHECK(t.at(0, 2, 0, 0, 0) == doctest::Approx((128.0 / 255.0 - 0.5) / 0.5).epsilon(1e-6));
  CHECK(t.at(0, 2, 0, 0, 0) == doctest::Approx(0.00392).epsilon(1e-2));

  Rng rng(5);
  const RawClip clip = random_clip(rng, 32, 224, 224, 3, PixelType::u8);
  const VideoTensor big = normalize_rgb_clip(clip);
  CHECK(big.shape() == Shape5{1, 3, 32, 224, 224});
  for (float v : big.values()) {
    REQUIRE(v >= -1.0f);
    REQUIRE(v <= 1.0f);
  }
  CHECK(big.at(0, 1, 3, 10, 20) ==
        doctest::Approx((clip.payload[((3 * 224 + 10) * 224 + 20) * 3 + 1] / 255.0 - 0.5) / 0.5));
  CHECK_THROWS_AS(normalize_rgb_clip(random_clip(rng, 1, 2, 2, 3, PixelType::f32)), DataError);
}

TEST_CASE("brightness augmentation") {
  const VideoTensor clip = smooth_clip(3, 16);
  CHECK(apply_brightness(clip, 1.0) == clip);
  VideoTensor saturated(Shape5{1, 3, 2, 2, 2}, 1.0f);
  const VideoTensor brighter = apply_brightness(saturated, 1.2);
  for (float v : brighter.values()) CHECK(v == 1.0f);

  Rng a(9), b(9);
  const VideoTensor ya = augment_brightness(clip, a);
  const VideoTensor yb = augment_brightness(clip, b);
  CHECK(ya == yb);

  // One factor per clip: every pixel maps through the same affine rule.
  const double f = ((ya.at(0, 0, 0, 3, 3) + 1.0) / 2.0) / ((clip.at(0, 0, 0, 3, 3) + 1.0) / 2.0);
  CHECK(f >= 0.8 - 1e-6);
  CHECK(f <= 1.2 + 1e-6);
  for (int d = 0; d < 3; ++d) {
    for (int x = 0; x < 16; x += 5) {
      const double expected = std::clamp((clip.at(0, 2, d, 7, x) + 1.0) / 2.0 * f, 0.0, 1.0) * 2.0 - 1.0;
      CHECK(ya.at(0, 2, d, 7, x) == doctest::Approx(expected).epsilon(1e-4));
    }
  }
}

TEST_CASE("rotation augmentation") {
  const VideoTensor clip = smooth_clip(4, 48);
  CHECK(apply_rotation(clip, 0.0) == clip);
  const VideoTensor back = apply_rotation(apply_rotation(clip, 7.5), -7.5);
  CHECK(mean_abs_diff_inner(back, clip, 8) <= 0.05);

  // Corners leave the frame under rotation and take the minimum value.
  const VideoTensor turned = apply_rotation(VideoTensor(Shape5{1, 1, 1, 20, 20}, 0.5f), 10.0);
  CHECK(turned.at(0, 0, 0, 0, 0) == -1.0f);
  CHECK(turned.at(0, 0, 0, 10, 10) == doctest::Approx(0.5f));

  // Every frame of a clip receives the same angle.
  VideoTensor same(Shape5{1, 1, 3, 24, 24});
  for (int d = 0; d < 3; ++d) {
    for (int y = 0; y < 24; ++y) {
      for (int x = 0; x < 24; ++x) same.at(0, 0, d, y, x) = static_cast<float>(std::sin(0.4 * x + 0.1 * y));
    }
  }
  Rng rng(12);
  AugmentConfig only_rotation;
  only_rotation.brightness = false;
  const VideoTensor r = augment_rotation(same, rng, only_rotation);
  for (int d = 1; d < 3; ++d) {
    for (int i = 0; i < 24 * 24; ++i) REQUIRE(r.slice(0, 0)[i + d * 24 * 24] == r.slice(0, 0)[i]);
  }
}

TEST_CASE("synthetic dataset counts and determinism") {
  SynthConfig cfg;
  cfg.train_per_class = 3;
  cfg.val_per_class = 2;
  cfg.frames = 6;
  cfg.size = 32;
  oracle::ScratchDir a("synth-a"), b("synth-b");
  const DatasetIndex ia = generate_synthetic_dataset(cfg, a.path());
  generate_synthetic_dataset(cfg, b.path());
  CHECK(ia.train.size() == 6);
  CHECK(ia.val.size() == 4);
  CHECK(oracle::tree_contents(a.path()) == oracle::tree_contents(b.path()));

  const DatasetIndex loaded = load_dataset_index(a.path());
  CHECK(loaded.train.size() == 6);
  int violent = 0;
  for (const ClipEntry& e : loaded.train) {
    violent += e.label;
    CHECK(e.path.parent_path().filename() == (e.label == 1 ? "violent" : "nonviolent"));
    const RawClip clip = read_rvc(e.path);
    CHECK(clip.frames == 6);
    CHECK(clip.height == 32);
    CHECK(clip.channels == 3);
  }
  CHECK(violent == 3);

  cfg.seed = 8;
  oracle::ScratchDir c("synth-c");
  generate_synthetic_dataset(cfg, c.path());
  CHECK(oracle::tree_contents(a.path()) != oracle::tree_contents(c.path()));

  CHECK_THROWS_AS(load_dataset_index(a.path() / "missing"), DataError);
  SynthConfig empty = cfg;
  empty.train_per_class = 0;
  CHECK_THROWS_AS(empty.validate(), ConfigError);
}

TEST_CASE("violent clips move more than nonviolent clips") {
  SynthConfig cfg;
  cfg.frames = 8;
  double calm = 0.0, violent = 0.0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    calm += mean_flow_magnitude(render_synthetic_clip(cfg, 0, 1000 + i));
    violent += mean_flow_magnitude(render_synthetic_clip(cfg, 1, 2000 + i));
  }
  MESSAGE("mean flow magnitude calm " << calm / 10 << " violent " << violent / 10);
  CHECK(violent > calm);
}

}  // TEST_SUITE
