#include "mdcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mdcn/error.hpp"

namespace mdcn {
namespace {

enum class FieldKind : std::uint8_t { u32 = 0, u64 = 1, f64 = 2 };

enum FieldTag : std::uint16_t {
  kTagMode = 1,
  kTagFrames = 2,
  kTagInputSize = 3,
  kTagStem = 4,
  kTagClasses = 5,
  kTagSkip = 6,
  kTagRgbChannels = 7,
  kTagFlowChannels = 8,
  kTagBlockChannels = 10,  // 10..13
  kTagBlockStrides = 20,   // 20..23
  kTagEpoch = 100,
  kTagSeed = 101,
  kTagBestAcc = 102,
  kTagMetricEpoch = 103,
  kTagLr = 104,
  kTagTrainLoss = 105,
  kTagTrainAcc = 106,
  kTagValLoss = 107,
  kTagValAcc = 108,
  kTagHasVelocity = 109,
};

const std::string kVelocityPrefix = "velocity.";

class Writer {
 public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  DataError error(const std::string& what) const {
    return DataError(origin_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw error("truncated checkpoint");
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(uint(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(uint(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(std::span<float> out) {
    need(out.size() * 4);
    for (float& f : out) f = std::bit_cast<float>(u32());
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

struct Field {
  std::uint16_t tag;
  FieldKind kind;
  std::uint64_t bits;
};

Field u32_field(std::uint16_t tag, std::uint32_t v) { return {tag, FieldKind::u32, v}; }
Field u64_field(std::uint16_t tag, std::uint64_t v) { return {tag, FieldKind::u64, v}; }
Field f64_field(std::uint16_t tag, double v) {
  return {tag, FieldKind::f64, std::bit_cast<std::uint64_t>(v)};
}

std::vector<Field> fields_of(const Checkpoint& ck) {
  const ModelConfig& c = ck.params.config;
  std::vector<Field> f;
  f.push_back(u32_field(kTagMode, static_cast<std::uint32_t>(c.mode)));
  f.push_back(u32_field(kTagFrames, static_cast<std::uint32_t>(c.frames)));
  f.push_back(u32_field(kTagInputSize, static_cast<std::uint32_t>(c.input_size)));
  f.push_back(u32_field(kTagStem, static_cast<std::uint32_t>(c.stem_channels)));
  f.push_back(u32_field(kTagClasses, static_cast<std::uint32_t>(c.classes)));
  f.push_back(u32_field(kTagSkip, c.skip_enabled ? 1u : 0u));
  f.push_back(u32_field(kTagRgbChannels, static_cast<std::uint32_t>(c.rgb_channels)));
  f.push_back(u32_field(kTagFlowChannels, static_cast<std::uint32_t>(c.flow_channels)));
  for (int i = 0; i < 4; ++i) {
    f.push_back(u32_field(static_cast<std::uint16_t>(kTagBlockChannels + i),
                          static_cast<std::uint32_t>(c.block_channels[i])));
    f.push_back(u32_field(static_cast<std::uint16_t>(kTagBlockStrides + i),
                          static_cast<std::uint32_t>(c.block_spatial_strides[i])));
  }
  const CheckpointMeta& m = ck.meta;
  f.push_back(u32_field(kTagEpoch, static_cast<std::uint32_t>(m.epoch)));
  f.push_back(u64_field(kTagSeed, m.seed));
  f.push_back(f64_field(kTagBestAcc, m.best_val_acc));
  f.push_back(u32_field(kTagMetricEpoch, static_cast<std::uint32_t>(m.metrics.epoch)));
  f.push_back(f64_field(kTagLr, m.metrics.lr));
  f.push_back(f64_field(kTagTrainLoss, m.metrics.train_loss));
  f.push_back(f64_field(kTagTrainAcc, m.metrics.train_acc));
  f.push_back(f64_field(kTagValLoss, m.metrics.val_loss));
  f.push_back(f64_field(kTagValAcc, m.metrics.val_acc));
  f.push_back(u32_field(kTagHasVelocity, ck.velocity ? 1u : 0u));
  return f;
}

void apply_field(const Field& f, ModelConfig& c, CheckpointMeta& m, bool& has_velocity) {
  const auto i32 = [&] { return static_cast<int>(static_cast<std::uint32_t>(f.bits)); };
  const auto f64 = [&] { return std::bit_cast<double>(f.bits); };
  if (f.tag >= kTagBlockChannels && f.tag < kTagBlockChannels + 4) {
    c.block_channels[f.tag - kTagBlockChannels] = i32();
    return;
  }
  if (f.tag >= kTagBlockStrides && f.tag < kTagBlockStrides + 4) {
    c.block_spatial_strides[f.tag - kTagBlockStrides] = i32();
    return;
  }
  switch (f.tag) {
    case kTagMode:
      if (f.bits > 2) throw DataError("checkpoint stores an unknown stream mode");
      c.mode = static_cast<StreamMode>(f.bits);
      break;
    case kTagFrames: c.frames = i32(); break;
    case kTagInputSize: c.input_size = i32(); break;
    case kTagStem: c.stem_channels = i32(); break;
    case kTagClasses: c.classes = i32(); break;
    case kTagSkip: c.skip_enabled = f.bits != 0; break;
    case kTagRgbChannels: c.rgb_channels = i32(); break;
    case kTagFlowChannels: c.flow_channels = i32(); break;
    case kTagEpoch: m.epoch = i32(); break;
    case kTagSeed: m.seed = f.bits; break;
    case kTagBestAcc: m.best_val_acc = f64(); break;
    case kTagMetricEpoch: m.metrics.epoch = i32(); break;
    case kTagLr: m.metrics.lr = f64(); break;
    case kTagTrainLoss: m.metrics.train_loss = f64(); break;
    case kTagTrainAcc: m.metrics.train_acc = f64(); break;
    case kTagValLoss: m.metrics.val_loss = f64(); break;
    case kTagValAcc: m.metrics.val_acc = f64(); break;
    case kTagHasVelocity: has_velocity = f.bits != 0; break;
    default: break;  // unknown tags from newer writers are skipped
  }
}

template <typename Ref>
void write_tensor(Writer& w, const std::string& name, const Ref& ref) {
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.raw(name.data(), name.size());
  w.u8(static_cast<std::uint8_t>(ref.dims.size()));
  for (std::uint32_t d : ref.dims) w.u32(d);
  for (float v : ref.values) w.u32(std::bit_cast<std::uint32_t>(v));
}

// Expected tensors in file order, as mutable views into the output trees.
std::vector<TensorRef<float>> expected_tensors(ModelParams<float>& params,
                                               ModelParams<float>* velocity) {
  std::vector<TensorRef<float>> out;
  const auto push = [&](TensorRef<float> r) { out.push_back(std::move(r)); };
  for_each_tensor(params, TensorGroup::learnable, push);
  for_each_tensor(params, TensorGroup::running_stats, push);
  if (velocity != nullptr) {
    for_each_tensor(*velocity, TensorGroup::learnable, [&](TensorRef<float> r) {
      r.name = kVelocityPrefix + r.name;
      out.push_back(std::move(r));
    });
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const std::vector<Field> fields = fields_of(ck);
  w.u16(static_cast<std::uint16_t>(fields.size()));
  for (const Field& f : fields) {
    w.u16(f.tag);
    w.u8(static_cast<std::uint8_t>(f.kind));
    if (f.kind == FieldKind::u32) {
      w.u32(static_cast<std::uint32_t>(f.bits));
    } else {
      w.u64(f.bits);
    }
  }
  std::vector<std::pair<std::string, TensorRef<const float>>> tensors;
  const auto push = [&](TensorRef<const float> r) {
    std::string name = r.name;
    tensors.emplace_back(std::move(name), std::move(r));
  };
  for_each_tensor(ck.params, TensorGroup::learnable, push);
  for_each_tensor(ck.params, TensorGroup::running_stats, push);
  if (ck.velocity) {
    for_each_tensor(*ck.velocity, TensorGroup::learnable, [&](TensorRef<const float> r) {
      tensors.emplace_back(kVelocityPrefix + r.name, std::move(r));
    });
  }
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, ref] : tensors) write_tensor(w, name, ref);
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  const std::string magic = r.str(4);
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw DataError(origin + ": not a checkpoint (magic mismatch) at byte offset 0");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError(origin + ": unsupported checkpoint version " + std::to_string(version) +
                    " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig config;
  CheckpointMeta meta;
  bool has_velocity = false;
  const std::uint16_t field_count = r.u16();
  for (std::uint16_t i = 0; i < field_count; ++i) {
    Field f{};
    f.tag = r.u16();
    const std::uint8_t kind = r.u8();
    if (kind > 2) throw r.error("unknown field kind " + std::to_string(kind));
    f.kind = static_cast<FieldKind>(kind);
    f.bits = f.kind == FieldKind::u32 ? r.u32() : r.u64();
    apply_field(f, config, meta, has_velocity);
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw DataError(origin + ": stored model configuration is invalid: " + e.what());
  }

  Checkpoint ck;
  ck.params = zeros_like(init_params<float>(config, 0));
  if (has_velocity) ck.velocity = zeros_like(ck.params);
  ck.meta = meta;
  std::vector<TensorRef<float>> expected =
      expected_tensors(ck.params, ck.velocity ? &*ck.velocity : nullptr);

  const std::uint32_t count = r.u32();
  if (count != expected.size()) {
    throw DataError(origin + ": tensor-count mismatch (file has " + std::to_string(count) +
                    ", configuration needs " + std::to_string(expected.size()) + ")");
  }
  for (TensorRef<float>& ref : expected) {
    const std::size_t at = r.pos();
    const std::string name = r.str(r.u16());
    if (name != ref.name) throw r.error("expected tensor \"" + ref.name + "\", found \"" + name + "\"");
    const std::uint8_t rank = r.u8();
    std::vector<std::uint32_t> dims(rank);
    for (std::uint32_t& d : dims) d = r.u32();
    if (dims != ref.dims) {
      throw DataError(origin + ": tensor \"" + name + "\" has unexpected dimensions at byte offset " +
                      std::to_string(at));
    }
    r.floats(ref.values);
  }
  if (!r.done()) throw r.error("trailing bytes after tensors");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, StreamMode expected) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.params.config.mode != expected) {
    throw ConfigError(path.string() + ": checkpoint was trained in " +
                      to_string(ck.params.config.mode) + " mode but " + to_string(expected) +
                      " mode was requested");
  }
  return ck;
}

}  // namespace mdcn
