#include "mdcn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mdcn/checkpoint.hpp"
#include "mdcn/error.hpp"

namespace mdcn {
namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kAugmentStream = 0xA06;

std::string cache_key(const ClipEntry& entry, const PipelineConfig& cfg) {
  return entry.path.string() + "#" + std::to_string(cfg.frames) + "x" + std::to_string(cfg.size);
}

// Decoded, sampled, resized and normalized RGB clip; no randomness involved.
VideoTensor load_base(const ClipEntry& entry, const PipelineConfig& cfg) {
  const RawClip raw = read_rvc(entry.path);
  if (raw.dtype != PixelType::u8 || raw.channels != 3) {
    throw DataError(entry.path.string() + ": expected an 8-bit RGB clip");
  }
  const std::vector<int> idx = sample_frame_indices(static_cast<int>(raw.frames), cfg.frames);
  std::vector<Frame> frames;
  frames.reserve(idx.size());
  for (int i : idx) frames.push_back(resize_bilinear(raw.frame(i), cfg.size, cfg.size));
  return normalize_rgb_clip(frames);
}

VideoTensor augment(VideoTensor clip, const PipelineConfig& cfg, Rng& rng) {
  if (cfg.augment.brightness) clip = augment_brightness(std::move(clip), rng, cfg.augment);
  if (cfg.augment.rotation) clip = augment_rotation(std::move(clip), rng, cfg.augment);
  return clip;
}

VideoTensor flow_from_rgb(const VideoTensor& rgb, const HSConfig& hs) {
  std::vector<Frame> frames;
  frames.reserve(rgb.shape().d);
  for (int d = 0; d < rgb.shape().d; ++d) frames.push_back(tensor_frame(rgb, d));
  return normalize_flow(clip_to_flowstack(frames, hs));
}

PreparedClip finish_clip(const VideoTensor& base, int label, StreamMode mode,
                         const PipelineConfig& cfg, Rng* rng, const VideoTensor* cached_flow,
                         VideoTensor* flow_out) {
  PreparedClip out;
  out.label = label;
  const bool augmenting = rng != nullptr && cfg.augment_enabled;
  VideoTensor rgb = augmenting ? augment(base, cfg, *rng) : base;
  if (mode != StreamMode::rgb) {
    if (!augmenting && cached_flow != nullptr) {
      out.flow = *cached_flow;
    } else {
      out.flow = flow_from_rgb(rgb, cfg.flow);
      if (!augmenting && flow_out != nullptr) *flow_out = out.flow;
    }
  }
  if (mode != StreamMode::flow) out.rgb = std::move(rgb);
  return out;
}

struct Batch {
  VideoTensor rgb;
  VideoTensor flow;
  std::vector<int> labels;
};

Batch stack_clips(std::vector<PreparedClip>& clips) {
  Batch b;
  std::vector<VideoTensor> rgb;
  std::vector<VideoTensor> flow;
  for (PreparedClip& c : clips) {
    b.labels.push_back(c.label);
    if (!c.rgb.empty()) rgb.push_back(std::move(c.rgb));
    if (!c.flow.empty()) flow.push_back(std::move(c.flow));
  }
  if (!rgb.empty()) b.rgb = stack_batch<float>(rgb);
  if (!flow.empty()) b.flow = stack_batch<float>(flow);
  return b;
}

PreparedClip fetch(const ClipEntry& entry, StreamMode mode, const PipelineConfig& cfg, Rng* rng,
                   ClipCache* cache) {
  return cache != nullptr ? cache->get(entry, mode, cfg, rng) : prepare_clip(entry, mode, cfg, rng);
}

int count_correct(const Matrix<float>& logits, const std::vector<int>& labels) {
  const std::vector<int> pred = predict(logits);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  return correct;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

// ---------------------------------------------------------------- optimizer

void SGDConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (!(drop_factor > 0.0)) throw ConfigError("drop factor must be > 0");
  for (std::size_t i = 0; i < drop_epochs.size(); ++i) {
    if (drop_epochs[i] < 0 || (i > 0 && drop_epochs[i] <= drop_epochs[i - 1])) {
      throw ConfigError("drop epochs must be non-negative and strictly increasing");
    }
  }
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
}

SGDConfig SGDConfig::scaled_to(int new_epochs) const {
  validate();
  if (new_epochs < 1) throw ConfigError("epochs must be >= 1");
  SGDConfig out = *this;
  out.epochs = new_epochs;
  for (std::size_t i = 0; i < out.drop_epochs.size(); ++i) {
    int e = static_cast<int>(std::lround(static_cast<double>(drop_epochs[i]) * new_epochs / epochs));
    if (i > 0) e = std::max(e, out.drop_epochs[i - 1] + 1);
    out.drop_epochs[i] = e;
  }
  return out;
}

double lr_at_epoch(int epoch, const SGDConfig& cfg) {
  double lr = cfg.lr0;
  for (int drop : cfg.drop_epochs) {
    if (epoch >= drop) lr /= cfg.drop_factor;
  }
  return lr;
}

template <typename T>
void sgd_nesterov_step(ModelParams<T>& params, const ModelParams<T>& grads,
                       ModelParams<T>& velocity, double lr, const SGDConfig& cfg) {
  std::vector<TensorRef<T>> p = learnable_tensors(params);
  std::vector<TensorRef<const T>> g = learnable_tensors(grads);
  std::vector<TensorRef<T>> v = learnable_tensors(velocity);
  if (p.size() != g.size() || p.size() != v.size()) {
    throw ConfigError("optimizer trees differ in tensor count");
  }
  const T mu = static_cast<T>(cfg.momentum);
  const T wd = static_cast<T>(cfg.weight_decay);
  const T step = static_cast<T>(lr);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].name != g[i].name || p[i].name != v[i].name ||
        p[i].values.size() != g[i].values.size() || p[i].values.size() != v[i].values.size()) {
      throw ConfigError("optimizer trees differ at " + p[i].name);
    }
    T* theta = p[i].values.data();
    const T* grad = g[i].values.data();
    T* vel = v[i].values.data();
    for (std::size_t k = 0; k < p[i].values.size(); ++k) {
      const T gk = grad[k] + wd * theta[k];
      vel[k] = mu * vel[k] + gk;
      theta[k] -= step * (gk + mu * vel[k]);
    }
  }
}

template void sgd_nesterov_step(ModelParams<float>&, const ModelParams<float>&,
                                ModelParams<float>&, double, const SGDConfig&);
template void sgd_nesterov_step(ModelParams<double>&, const ModelParams<double>&,
                                ModelParams<double>&, double, const SGDConfig&);

TrainState fresh_train_state(const ModelParams<float>& params, std::uint64_t seed) {
  TrainState state;
  state.velocity = zeros_like(params);
  state.seed = seed;
  return state;
}

std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6f,%.6f,%.6f,%.6f", m.epoch, m.lr, m.train_loss,
                m.train_acc, m.val_loss, m.val_acc);
  return buf;
}

std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw DataError(path.string() + ": unexpected metrics header");
  }
  std::vector<EpochMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochMetrics m;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf", &m.epoch, &m.lr, &m.train_loss,
                    &m.train_acc, &m.val_loss, &m.val_acc) != 6) {
      throw DataError(path.string() + ": malformed metrics row \"" + line + "\"");
    }
    rows.push_back(m);
  }
  return rows;
}

// ------------------------------------------------------------ clip pipeline

void PipelineConfig::validate() const {
  if (frames < 1) throw ConfigError("frames must be >= 1");
  if (size < 1) throw ConfigError("frame size must be >= 1");
  augment.validate();
  flow.validate();
}

PreparedClip prepare_clip(const ClipEntry& entry, StreamMode mode, const PipelineConfig& cfg,
                          Rng* rng) {
  return finish_clip(load_base(entry, cfg), entry.label, mode, cfg, rng, nullptr, nullptr);
}

PreparedClip ClipCache::get(const ClipEntry& entry, StreamMode mode, const PipelineConfig& cfg,
                            Rng* rng) {
  const std::string key = cache_key(entry, cfg);
  auto it = base_.find(key);
  if (it == base_.end()) it = base_.emplace(key, load_base(entry, cfg)).first;
  auto fit = flow_.find(key);
  VideoTensor computed;
  PreparedClip out = finish_clip(it->second, entry.label, mode, cfg, rng,
                                 fit == flow_.end() ? nullptr : &fit->second, &computed);
  if (!computed.empty()) flow_.emplace(key, std::move(computed));
  return out;
}

std::vector<int> predict(const Matrix<float>& logits) {
  std::vector<int> out(logits.rows);
  for (int r = 0; r < logits.rows; ++r) {
    const float* row = logits.row(r);
    out[r] = static_cast<int>(std::max_element(row, row + logits.cols) - row);
  }
  return out;
}

BatchStats train_epoch(ModelParams<float>& params, TrainState& state,
                       const std::vector<ClipEntry>& clips, const TrainConfig& cfg,
                       ClipCache* cache) {
  if (clips.empty()) throw DataError("training split is empty");
  cfg.sgd.validate();
  cfg.pipeline.validate();
  const StreamMode mode = params.config.mode;
  const int n = static_cast<int>(clips.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(mix_seed(state.seed, static_cast<std::uint64_t>(state.epoch), kShuffleStream));
  for (int i = n - 1; i > 0; --i) {
    std::swap(order[i], order[static_cast<int>(shuffle.below(static_cast<std::uint64_t>(i) + 1))]);
  }

  const double lr = lr_at_epoch(state.epoch, cfg.sgd);
  const std::uint64_t epoch_seed =
      mix_seed(state.seed, static_cast<std::uint64_t>(state.epoch), kAugmentStream);
  double loss_sum = 0.0;
  int correct = 0;
  for (int start = 0; start < n; start += cfg.sgd.batch_size) {
    const int stop = std::min(n, start + cfg.sgd.batch_size);
    std::vector<PreparedClip> prepared;
    for (int i = start; i < stop; ++i) {
      Rng rng(mix_seed(epoch_seed, static_cast<std::uint64_t>(order[i])));
      prepared.push_back(fetch(clips[order[i]], mode, cfg.pipeline, &rng, cache));
    }
    Batch batch = stack_clips(prepared);
    ModelOutput<float> out = model_forward(batch.rgb.empty() ? nullptr : &batch.rgb,
                                           batch.flow.empty() ? nullptr : &batch.flow, params,
                                           Mode::train);
    LossResult<float> loss = softmax_cross_entropy<float>(out.logits, batch.labels);
    loss_sum += static_cast<double>(loss.loss) * (stop - start);
    correct += count_correct(out.logits, batch.labels);
    ModelParams<float> grads = model_backward(params, out.cache, loss.grad_logits);
    commit_running_stats(params, out.cache);
    sgd_nesterov_step(params, grads, state.velocity, lr, cfg.sgd);
  }
  ++state.epoch;
  return {loss_sum / n, static_cast<double>(correct) / n, n};
}

BatchStats evaluate(const ModelParams<float>& params, const std::vector<ClipEntry>& clips,
                    const PipelineConfig& cfg, int batch_size, ClipCache* cache) {
  if (clips.empty()) throw DataError("evaluation split is empty");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  cfg.validate();
  const StreamMode mode = params.config.mode;
  const int n = static_cast<int>(clips.size());
  double loss_sum = 0.0;
  int correct = 0;
  for (int start = 0; start < n; start += batch_size) {
    const int stop = std::min(n, start + batch_size);
    std::vector<PreparedClip> prepared;
    for (int i = start; i < stop; ++i) prepared.push_back(fetch(clips[i], mode, cfg, nullptr, cache));
    Batch batch = stack_clips(prepared);
    ModelOutput<float> out = model_forward(batch.rgb.empty() ? nullptr : &batch.rgb,
                                           batch.flow.empty() ? nullptr : &batch.flow, params,
                                           Mode::infer);
    LossResult<float> loss = softmax_cross_entropy<float>(out.logits, batch.labels);
    loss_sum += static_cast<double>(loss.loss) * (stop - start);
    correct += count_correct(out.logits, batch.labels);
  }
  return {loss_sum / n, static_cast<double>(correct) / n, n};
}

// --------------------------------------------------------------- full runs

RunSummary run_training(const TrainConfig& cfg, const DatasetIndex& data, const RunOptions& opts) {
  namespace fs = std::filesystem;
  cfg.model.validate();
  cfg.sgd.validate();
  cfg.pipeline.validate();
  if (cfg.pipeline.frames != cfg.model.frames || cfg.pipeline.size != cfg.model.input_size) {
    throw ConfigError("pipeline frames/size must match the model configuration");
  }
  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) throw DataError("cannot create " + opts.out_dir.string() + ": " + ec.message());
  const fs::path last_path = opts.out_dir / "last.ckpt";
  const fs::path csv_path = opts.out_dir / "metrics.csv";

  RunSummary summary;
  ModelParams<float> params;
  TrainState state;
  if (opts.resume && fs::exists(last_path)) {
    Checkpoint ck = load_checkpoint(last_path, cfg.model.mode);
    if (!(ck.params.config == cfg.model)) {
      throw ConfigError(last_path.string() + ": stored model configuration differs from the request");
    }
    params = std::move(ck.params);
    state.velocity = ck.velocity ? std::move(*ck.velocity) : zeros_like(params);
    state.epoch = ck.meta.epoch;
    state.seed = ck.meta.seed;
    state.best_val_acc = ck.meta.best_val_acc;
    if (fs::exists(csv_path)) {
      for (const EpochMetrics& m : read_metrics_csv(csv_path)) {
        if (m.epoch < state.epoch) summary.history.push_back(m);
      }
    }
  } else {
    params = init_params<float>(cfg.model, opts.seed);
    state = fresh_train_state(params, opts.seed);
  }

  std::string csv = std::string(kMetricsHeader) + "\n";
  for (const EpochMetrics& m : summary.history) csv += metrics_csv_row(m) + "\n";
  write_text(csv_path, csv);

  ClipCache train_cache;
  ClipCache val_cache;
  while (state.epoch < cfg.sgd.epochs) {
    EpochMetrics m;
    m.epoch = state.epoch;
    m.lr = lr_at_epoch(state.epoch, cfg.sgd);
    const BatchStats tr = train_epoch(params, state, data.train, cfg, &train_cache);
    const BatchStats ev = evaluate(params, data.val, cfg.pipeline, cfg.sgd.batch_size, &val_cache);
    m.train_loss = tr.loss;
    m.train_acc = tr.accuracy;
    m.val_loss = ev.loss;
    m.val_acc = ev.accuracy;
    summary.history.push_back(m);
    csv += metrics_csv_row(m) + "\n";
    write_text(csv_path, csv);

    Checkpoint ck{params, state.velocity, {state.epoch, state.seed, state.best_val_acc, m}};
    if (ev.accuracy > state.best_val_acc) {
      state.best_val_acc = ev.accuracy;
      ck.meta.best_val_acc = ev.accuracy;
      save_checkpoint(opts.out_dir / "best.ckpt", ck);
    }
    if (m.epoch == 0) save_checkpoint(opts.out_dir / "first.ckpt", ck);
    save_checkpoint(last_path, ck);
    if (opts.on_epoch) opts.on_epoch(m);
  }

  for (const EpochMetrics& m : summary.history) {
    if (summary.best_epoch < 0 || m.val_acc > summary.best_val_acc) {
      summary.best_val_acc = m.val_acc;
      summary.best_epoch = m.epoch;
    }
  }
  return summary;
}

}  // namespace mdcn
