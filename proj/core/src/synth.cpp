#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "mdcn/datapipe.hpp"
#include "mdcn/error.hpp"

namespace mdcn {
namespace {

struct Blob {
  double x = 0, y = 0;
  double vx = 0, vy = 0;
  double sigma = 6;
  std::array<double, 3> color{1, 1, 1};
  double amplitude = 0.5;
  // Motion confined to [lo_x, hi_x) horizontally; used to keep calm blobs apart.
  double lo_x = 0, hi_x = 0;
};

struct Background {
  double level = 0.35;
  std::array<double, 3> tint{1, 1, 1};
  std::array<double, 3> fx{}, fy{}, phase{};
};

double speed_of(const Blob& b) { return std::hypot(b.vx, b.vy); }

void set_speed(Blob& b, double speed) {
  const double s = speed_of(b);
  if (s < 1e-9) {
    b.vx = speed;
    b.vy = 0;
    return;
  }
  b.vx *= speed / s;
  b.vy *= speed / s;
}

void random_velocity(Blob& b, Rng& rng, double speed) {
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  b.vx = speed * std::cos(angle);
  b.vy = speed * std::sin(angle);
}

Blob random_blob(Rng& rng, const SynthConfig& cfg, double scale) {
  Blob b;
  b.sigma = rng.uniform(cfg.min_sigma, cfg.max_sigma) * scale;
  for (double& c : b.color) c = rng.uniform(0.3, 1.0);
  b.amplitude = rng.uniform(0.4, 0.6);
  return b;
}

// Reflect off [lo, hi] with the position mirrored back inside.
void bounce(double& pos, double& vel, double lo, double hi) {
  if (hi <= lo) {
    pos = lo;
    return;
  }
  if (pos < lo) {
    pos = 2 * lo - pos;
    vel = std::abs(vel);
  }
  if (pos > hi) {
    pos = 2 * hi - pos;
    vel = -std::abs(vel);
  }
  pos = std::clamp(pos, lo, hi);
}

void render_frame(const Background& bg, const std::vector<Blob>& blobs, int size, Rng& rng,
                  Frame& out) {
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double texture = 0.0;
      for (int k = 0; k < 3; ++k) texture += 0.03 * std::cos(bg.fx[k] * x + bg.fy[k] * y + bg.phase[k]);
      const double noise = (rng.uniform() - 0.5) * 0.02;
      for (int c = 0; c < 3; ++c) {
        double v = (bg.level + texture) * bg.tint[c] + noise;
        for (const Blob& b : blobs) {
          const double dx = x - b.x;
          const double dy = y - b.y;
          const double r2 = (dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma);
          if (r2 < 12.0) v += b.amplitude * b.color[c] * std::exp(-r2);
        }
        out.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (train_per_class < 1 || val_per_class < 1) {
    throw ConfigError("synthetic dataset needs >= 1 clip per class per split");
  }
  if (frames < 2) throw ConfigError("synthetic clips need >= 2 frames");
  if (size < 16) throw ConfigError("synthetic frame size must be >= 16");
  if (min_blobs < 2 || max_blobs < min_blobs) throw ConfigError("invalid blob count range");
  if (!(min_sigma > 0) || max_sigma < min_sigma) throw ConfigError("invalid blob size range");
  if (calm_speed < 0 || violent_speed_lo <= calm_speed || violent_speed_hi < violent_speed_lo) {
    throw ConfigError("violent speeds must exceed the calm speed bound");
  }
}

RawClip render_synthetic_clip(const SynthConfig& cfg, int label, std::uint64_t stream) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, stream, static_cast<std::uint64_t>(label)));
  const int size = cfg.size;
  const double scale = size / 112.0;

  Background bg;
  bg.level = rng.uniform(0.25, 0.45);
  for (double& t : bg.tint) t = rng.uniform(0.85, 1.15);
  for (int k = 0; k < 3; ++k) {
    bg.fx[k] = rng.uniform(-0.15, 0.15) / scale;
    bg.fy[k] = rng.uniform(-0.15, 0.15) / scale;
    bg.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  const int count = cfg.min_blobs + static_cast<int>(rng.below(cfg.max_blobs - cfg.min_blobs + 1));
  std::vector<Blob> calm;
  std::vector<Blob> active;  // fighters or passer-by
  const double lo_speed = cfg.violent_speed_lo * scale;
  const double hi_speed = cfg.violent_speed_hi * scale;

  const int calm_count = label == 1 ? count - 2 : count;
  for (int i = 0; i < calm_count; ++i) {
    Blob b = random_blob(rng, cfg, scale);
    // Each calm blob lives in its own vertical strip so calm blobs never touch.
    const double strip = static_cast<double>(size) / calm_count;
    b.lo_x = i * strip + b.sigma;
    b.hi_x = (i + 1) * strip - b.sigma;
    if (b.hi_x < b.lo_x) b.lo_x = b.hi_x = (i + 0.5) * strip;
    b.x = rng.uniform(b.lo_x, b.hi_x);
    b.y = rng.uniform(b.sigma, size - b.sigma);
    random_velocity(b, rng, rng.uniform(0.0, cfg.calm_speed) * scale);
    calm.push_back(b);
  }

  if (label == 1) {
    // Two blobs start apart, approach fast, meet near the centre, then scatter.
    const double cx = size * rng.uniform(0.4, 0.6);
    const double cy = size * rng.uniform(0.4, 0.6);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double half_gap = size * rng.uniform(0.25, 0.35);
    for (int side = 0; side < 2; ++side) {
      Blob b = random_blob(rng, cfg, scale);
      const double dir = side == 0 ? -1.0 : 1.0;
      b.x = cx + dir * half_gap * std::cos(angle);
      b.y = cy + dir * half_gap * std::sin(angle);
      const double speed = rng.uniform(lo_speed, hi_speed);
      b.vx = -dir * speed * std::cos(angle);
      b.vy = -dir * speed * std::sin(angle);
      b.lo_x = 0;
      b.hi_x = size - 1;
      active.push_back(b);
    }
  } else if (cfg.motion_ambiguity) {
    Blob b = random_blob(rng, cfg, scale);
    b.x = rng.uniform(0.0, size - 1.0);
    b.y = rng.uniform(0.0, size - 1.0);
    random_velocity(b, rng, rng.uniform(lo_speed, hi_speed));
    b.lo_x = 0;
    b.hi_x = size - 1;
    active.push_back(b);
  }

  bool contact = false;
  std::vector<Frame> frames;
  frames.reserve(cfg.frames);
  std::vector<Blob> all;
  for (int f = 0; f < cfg.frames; ++f) {
    all.clear();
    all.insert(all.end(), calm.begin(), calm.end());
    all.insert(all.end(), active.begin(), active.end());
    Frame frame(size, size, 3);
    render_frame(bg, all, size, rng, frame);
    frames.push_back(std::move(frame));

    for (Blob& b : calm) {
      b.x += b.vx;
      b.y += b.vy;
      bounce(b.x, b.vx, b.lo_x, b.hi_x);
      bounce(b.y, b.vy, b.sigma, size - b.sigma);
    }
    if (label == 1) {
      Blob& a = active[0];
      Blob& b = active[1];
      if (!contact && std::hypot(a.x - b.x, a.y - b.y) < 0.8 * (a.sigma + b.sigma)) contact = true;
      for (Blob& blob : active) {
        if (contact) {
          blob.vx += rng.normal() * cfg.jitter * scale;
          blob.vy += rng.normal() * cfg.jitter * scale;
          set_speed(blob, std::clamp(speed_of(blob), lo_speed, hi_speed));
        }
        blob.x += blob.vx;
        blob.y += blob.vy;
        bounce(blob.x, blob.vx, 0.0, size - 1.0);
        bounce(blob.y, blob.vy, 0.0, size - 1.0);
      }
    } else {
      for (Blob& blob : active) {
        blob.x += blob.vx;
        blob.y += blob.vy;
        bounce(blob.x, blob.vx, 0.0, size - 1.0);
        bounce(blob.y, blob.vy, 0.0, size - 1.0);
      }
    }
  }
  return RawClip::from_u8_frames(frames);
}

DatasetIndex generate_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  cfg.validate();
  DatasetIndex index;
  index.root = root;
  std::error_code ec;
  for (Split split : {Split::train, Split::val}) {
    const int per_class = split == Split::train ? cfg.train_per_class : cfg.val_per_class;
    std::vector<ClipEntry>& entries = split == Split::train ? index.train : index.val;
    for (int label : {0, 1}) {
      const fs::path dir = root / to_string(split) / (label == 1 ? "violent" : "nonviolent");
      fs::create_directories(dir, ec);
      if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
      for (int i = 0; i < per_class; ++i) {
        const std::uint64_t stream =
            (split == Split::train ? 0ull : 1ull) << 32 | static_cast<std::uint64_t>(i);
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%05d.rvc", i);
        const fs::path path = dir / name;
        write_rvc(render_synthetic_clip(cfg, label, stream), path);
        entries.push_back({path, label});
      }
    }
  }
  return index;
}

}  // namespace mdcn
