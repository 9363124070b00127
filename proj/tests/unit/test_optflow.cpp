#include <cmath>

#include "doctest.h"
#include "mdcn/error.hpp"
#include "mdcn/optflow.hpp"
#include "oracles.hpp"

using namespace mdcn;

namespace {

Frame mirror_x(const Frame& f) {
  Frame out(f.height, f.width, f.channels);
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) {
      for (int c = 0; c < f.channels; ++c) out.at(y, x, c) = f.at(y, f.width - 1 - x, c);
    }
  }
  return out;
}

bool all_finite(const FlowField& f) {
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    if (!std::isfinite(f.u[i]) || !std::isfinite(f.v[i])) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("optflow") {

TEST_CASE("grayscale conversion") {
  Frame white(1, 1, 3, 1.0f);
  CHECK(to_grayscale(white).at(0, 0) == doctest::Approx(1.0));
  Frame red(1, 1, 3);
  red.at(0, 0, 0) = 1.0f;
  CHECK(to_grayscale(red).at(0, 0) == doctest::Approx(0.299));
  for (float g : {0.0f, 0.2f, 0.73f}) {
    CHECK(to_grayscale(Frame(2, 2, 3, g)).at(1, 1) == doctest::Approx(g).epsilon(1e-6));
  }
}

TEST_CASE("identical frames give zero flow") {
  Rng rng(1);
  const Frame a = oracle::periodic_pattern(32, rng);
  const FlowField f = horn_schunck(a, a, HSConfig{});
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    REQUIRE(std::abs(f.u[i]) <= 1e-6f);
    REQUIRE(std::abs(f.v[i]) <= 1e-6f);
  }
}

TEST_CASE("translation is recovered well enough to align the frames") {
  Rng rng(2);
  const Frame prev = oracle::periodic_pattern(64, rng);
  const Frame next = oracle::translate_wrap(prev, 2, 0);
  const FlowField f = horn_schunck(prev, next, HSConfig{});
  const double before = oracle::mean_squared_difference(prev, next);
  const double after = oracle::mean_squared_difference(prev, oracle::warp_by_flow(next, f));
  MESSAGE("warp mse " << before << " -> " << after);
  CHECK(after <= 0.3 * before);
}

TEST_CASE("more iterations never raise the energy") {
  Rng rng(3);
  const Frame prev = oracle::periodic_pattern(48, rng);
  const Frame next = oracle::translate_wrap(prev, 1, 1);
  double last = HUGE_VAL;
  for (int iters : {1, 2, 4, 8, 16, 32, 64, 128}) {
    HSConfig cfg;
    cfg.iterations = iters;
    const double e = horn_schunck_energy(prev, next, horn_schunck(prev, next, cfg), cfg);
    CHECK(e <= last);
    last = e;
  }
}

TEST_CASE("mirrored inputs give mirrored flow") {
  Rng rng(4);
  Frame prev(24, 31, 1), next(24, 31, 1);
  for (float& v : prev.data) v = static_cast<float>(rng.uniform());
  for (float& v : next.data) v = static_cast<float>(rng.uniform());
  HSConfig cfg;
  cfg.iterations = 40;
  const FlowField f = horn_schunck(prev, next, cfg);
  const FlowField m = horn_schunck(mirror_x(prev), mirror_x(next), cfg);
  for (int y = 0; y < 24; ++y) {
    for (int x = 0; x < 31; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * 31 + x;
      const std::size_t j = static_cast<std::size_t>(y) * 31 + (30 - x);
      REQUIRE(std::abs(m.u[j] + f.u[i]) <= 1e-5f);
      REQUIRE(std::abs(m.v[j] - f.v[i]) <= 1e-5f);
    }
  }
}

TEST_CASE("flow stays finite on extreme inputs") {
  Rng rng(5);
  Frame black(16, 16, 1, 0.0f), white(16, 16, 1, 1.0f), noise(16, 16, 1);
  for (float& v : noise.data) v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
  CHECK(all_finite(horn_schunck(black, white, HSConfig{})));
  CHECK(all_finite(horn_schunck(noise, black, HSConfig{})));
  HSConfig sharp;
  sharp.alpha = 1e-6;
  sharp.presmooth = 0;
  CHECK(all_finite(horn_schunck(noise, white, sharp)));
}

TEST_CASE("horn-schunck argument checks") {
  CHECK_THROWS_AS(horn_schunck(Frame(1, 1, 1), Frame(1, 1, 1), HSConfig{}), ConfigError);
  CHECK_THROWS_AS(horn_schunck(Frame(4, 4, 1), Frame(4, 5, 1), HSConfig{}), ConfigError);
  HSConfig bad;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.alpha = 1.0;
  bad.iterations = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("flow stacks") {
  Rng rng(6);
  std::vector<Frame> frames;
  for (int i = 0; i < 5; ++i) {
    Frame f(12, 14, 3);
    for (float& v : f.data) v = static_cast<float>(rng.uniform());
    frames.push_back(f);
  }
  HSConfig cfg;
  cfg.iterations = 10;
  const VideoTensor stack = clip_to_flowstack(frames, cfg);
  CHECK(stack.shape() == Shape5{1, 2, 5, 12, 14});
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 12; ++y) {
      for (int x = 0; x < 14; ++x) REQUIRE(stack.at(0, c, 4, y, x) == stack.at(0, c, 3, y, x));
    }
  }
  const FlowField first = horn_schunck(to_grayscale(frames[0]), to_grayscale(frames[1]), cfg);
  CHECK(stack.at(0, 0, 0, 3, 5) == first.u[3 * 14 + 5]);
  CHECK(stack.at(0, 1, 0, 3, 5) == first.v[3 * 14 + 5]);

  const std::vector<Frame> still(6, frames[0]);
  const VideoTensor zero = clip_to_flowstack(still, cfg);
  for (float v : zero.values()) REQUIRE(std::abs(v) <= 1e-6f);

  const std::vector<Frame> one(1, frames[0]);
  CHECK_THROWS_AS(clip_to_flowstack(one, cfg), DataError);
}

TEST_CASE("flow normalization") {
  const VideoTensor raw(Shape5{1, 2, 1, 1, 3}, std::vector<float>{10, 100, 0, -10, -100, 20});
  const VideoTensor n = normalize_flow(raw);
  CHECK(n.values() == std::vector<float>{0.5f, 1.0f, 0.0f, -0.5f, -1.0f, 1.0f});
}

}  // TEST_SUITE
