#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mdcn/datapipe.hpp"
#include "mdcn/error.hpp"

namespace mdcn {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float f32_at(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace

std::size_t pixel_size(PixelType type) { return type == PixelType::u8 ? 1 : 4; }

void RawClip::validate() const {
  if (frames < 1 || height < 1 || width < 1) throw DataError("RVC clip dimensions must be >= 1");
  if (channels < 1 || channels > 3) {
    throw DataError("RVC channels must be 1, 2 or 3, got " + std::to_string(channels));
  }
  if (dtype != PixelType::u8 && dtype != PixelType::f32) throw DataError("unsupported RVC dtype");
  if (payload.size() != expected_bytes()) {
    throw DataError("RVC payload holds " + std::to_string(payload.size()) + " bytes, expected " +
                    std::to_string(expected_bytes()));
  }
}

Frame RawClip::frame(std::uint32_t index) const {
  if (index >= frames) throw DataError("frame index " + std::to_string(index) + " out of range");
  Frame f(static_cast<int>(height), static_cast<int>(width), static_cast<int>(channels));
  const std::size_t samples = f.data.size();
  const std::uint8_t* base = payload.data() + frame_bytes() * index;
  if (dtype == PixelType::u8) {
    for (std::size_t i = 0; i < samples; ++i) f.data[i] = static_cast<float>(base[i]) / 255.0f;
  } else {
    for (std::size_t i = 0; i < samples; ++i) f.data[i] = f32_at(base + 4 * i);
  }
  return f;
}

RawClip RawClip::from_u8_frames(const std::vector<Frame>& frames) {
  if (frames.empty()) throw DataError("cannot build a clip from zero frames");
  RawClip clip;
  clip.frames = static_cast<std::uint32_t>(frames.size());
  clip.height = static_cast<std::uint32_t>(frames[0].height);
  clip.width = static_cast<std::uint32_t>(frames[0].width);
  clip.channels = static_cast<std::uint32_t>(frames[0].channels);
  clip.dtype = PixelType::u8;
  clip.payload.reserve(clip.expected_bytes());
  for (const Frame& f : frames) {
    if (f.height != frames[0].height || f.width != frames[0].width ||
        f.channels != frames[0].channels) {
      throw DataError("clip frames differ in shape");
    }
    for (float v : f.data) {
      const float q = std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f;
      clip.payload.push_back(static_cast<std::uint8_t>(q));
    }
  }
  return clip;
}

RawClip RawClip::from_f32_frames(const std::vector<Frame>& frames) {
  if (frames.empty()) throw DataError("cannot build a clip from zero frames");
  RawClip clip;
  clip.frames = static_cast<std::uint32_t>(frames.size());
  clip.height = static_cast<std::uint32_t>(frames[0].height);
  clip.width = static_cast<std::uint32_t>(frames[0].width);
  clip.channels = static_cast<std::uint32_t>(frames[0].channels);
  clip.dtype = PixelType::f32;
  clip.payload.reserve(clip.expected_bytes());
  for (const Frame& f : frames) {
    if (f.height != frames[0].height || f.width != frames[0].width ||
        f.channels != frames[0].channels) {
      throw DataError("clip frames differ in shape");
    }
    for (float v : f.data) put_u32(clip.payload, std::bit_cast<std::uint32_t>(v));
  }
  return clip;
}

std::vector<std::uint8_t> encode_rvc(const RawClip& clip) {
  clip.validate();
  std::vector<std::uint8_t> out;
  out.reserve(kRvcHeaderBytes + clip.payload.size());
  out.insert(out.end(), std::begin(kRvcMagic), std::end(kRvcMagic));
  put_u32(out, clip.frames);
  put_u32(out, clip.height);
  put_u32(out, clip.width);
  put_u32(out, clip.channels);
  out.push_back(static_cast<std::uint8_t>(clip.dtype));
  out.insert(out.end(), clip.payload.begin(), clip.payload.end());
  return out;
}

RawClip decode_rvc(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  const auto fail = [&](std::size_t offset, const std::string& what) {
    return DataError(origin + ": " + what + " at byte offset " + std::to_string(offset));
  };
  if (bytes.size() < 4) throw fail(bytes.size(), "truncated header (missing magic)");
  if (std::memcmp(bytes.data(), kRvcMagic, 4) != 0) {
    std::string got(reinterpret_cast<const char*>(bytes.data()), 4);
    for (char& c : got) {
      if (c < 32 || c > 126) c = '?';
    }
    throw fail(0, "magic mismatch: expected \"RVC1\", found \"" + got + "\"");
  }
  if (bytes.size() < kRvcHeaderBytes) throw fail(bytes.size(), "truncated header");
  RawClip clip;
  clip.frames = get_u32(bytes.data() + 4);
  clip.height = get_u32(bytes.data() + 8);
  clip.width = get_u32(bytes.data() + 12);
  clip.channels = get_u32(bytes.data() + 16);
  const std::uint8_t dtype = bytes[20];
  if (dtype > 1) throw fail(20, "unsupported dtype " + std::to_string(dtype));
  clip.dtype = static_cast<PixelType>(dtype);
  if (clip.frames < 1 || clip.height < 1 || clip.width < 1) throw fail(4, "zero clip dimension");
  if (clip.channels < 1 || clip.channels > 3) {
    throw fail(16, "unsupported channel count " + std::to_string(clip.channels));
  }
  const std::size_t need = clip.expected_bytes();
  const std::size_t have = bytes.size() - kRvcHeaderBytes;
  if (have < need) {
    throw fail(bytes.size(), "truncated payload (expected " + std::to_string(need) +
                                 " bytes, found " + std::to_string(have) + ")");
  }
  if (have > need) throw fail(kRvcHeaderBytes + need, "trailing bytes after payload");
  clip.payload.assign(bytes.begin() + kRvcHeaderBytes, bytes.end());
  return clip;
}

void write_rvc(const RawClip& clip, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_rvc(clip);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

RawClip read_rvc(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_rvc(bytes, path.string());
}

}  // namespace mdcn
