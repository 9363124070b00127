#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mdcn/datapipe.hpp"
#include "mdcn/model.hpp"
#include "mdcn/optflow.hpp"

namespace mdcn {

struct SGDConfig {
  double lr0 = 0.1;
  double momentum = 0.9;  // Nesterov
  double weight_decay = 1e-3;
  std::vector<int> drop_epochs{25, 75};
  double drop_factor = 10.0;
  int epochs = 100;
  int batch_size = 16;

  void validate() const;

  // Same schedule compressed onto `epochs`: each drop epoch becomes
  // round(drop * epochs / 100), kept strictly increasing.
  SGDConfig scaled_to(int epochs) const;
};

// lr0 / drop_factor^(number of drop epochs <= epoch); epochs are 0-based.
double lr_at_epoch(int epoch, const SGDConfig& cfg);

/// g = grad + wd * theta; v = mu * v + g; theta -= lr * (g + mu * v).
/// Applies to every learnable tensor, BN affine terms included. Trees must
/// share structure, otherwise ConfigError.
template <typename T>
void sgd_nesterov_step(ModelParams<T>& params, const ModelParams<T>& grads,
                       ModelParams<T>& velocity, double lr, const SGDConfig& cfg);

struct TrainState {
  ModelParams<float> velocity;
  int epoch = 0;  // epochs completed
  std::uint64_t seed = 1;
  double best_val_acc = -1.0;
};

TrainState fresh_train_state(const ModelParams<float>& params, std::uint64_t seed);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,lr,train_loss,train_acc,val_loss,val_acc";
std::string metrics_csv_row(const EpochMetrics& m);

// ------------------------------------------------------------ clip pipeline

struct PipelineConfig {
  int frames = 32;
  int size = 224;
  AugmentConfig augment;
  bool augment_enabled = true;
  HSConfig flow;

  void validate() const;
};

struct PreparedClip {
  VideoTensor rgb;   // (1, 3, frames, size, size), empty in flow-only mode
  VideoTensor flow;  // (1, 2, frames, size, size), empty in rgb mode
  int label = 0;
};

/// read -> sample -> resize -> normalize -> augment -> flow from the
/// (augmented) frames. `rng` null means no augmentation.
PreparedClip prepare_clip(const ClipEntry& entry, StreamMode mode, const PipelineConfig& cfg,
                          Rng* rng);

/// Keeps resized, normalized clips in memory keyed by path so repeated
/// epochs skip decoding. Entries without augmentation also keep their flow.
class ClipCache {
 public:
  PreparedClip get(const ClipEntry& entry, StreamMode mode, const PipelineConfig& cfg, Rng* rng);
  std::size_t size() const { return base_.size(); }

 private:
  std::map<std::string, VideoTensor> base_;
  std::map<std::string, VideoTensor> flow_;
};

struct BatchStats {
  double loss = 0.0;
  double accuracy = 0.0;
  int clips = 0;
};

struct TrainConfig {
  ModelConfig model;
  SGDConfig sgd;
  PipelineConfig pipeline;
};

/// One pass over `clips` in an order shuffled from (seed, epoch); BN in
/// train mode; one optimizer step per batch at lr_at_epoch(state.epoch).
/// Increments state.epoch.
BatchStats train_epoch(ModelParams<float>& params, TrainState& state,
                       const std::vector<ClipEntry>& clips, const TrainConfig& cfg,
                       ClipCache* cache = nullptr);

// BN in infer mode, no augmentation; accuracy = correct / total.
BatchStats evaluate(const ModelParams<float>& params, const std::vector<ClipEntry>& clips,
                    const PipelineConfig& cfg, int batch_size = 16, ClipCache* cache = nullptr);

// Index of the largest logit per row; ties go to the lower class.
std::vector<int> predict(const Matrix<float>& logits);

// --------------------------------------------------------------- full runs

struct RunOptions {
  std::filesystem::path out_dir;
  std::uint64_t seed = 1;
  bool resume = false;  // continue from out_dir/last.ckpt when present
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct RunSummary {
  std::vector<EpochMetrics> history;  // every epoch, including resumed ones
  double best_val_acc = 0.0;
  int best_epoch = -1;
};

/// Trains for cfg.sgd.epochs epochs, evaluating on data.val after each one.
/// Writes metrics.csv, first.ckpt (after epoch 0), last.ckpt and best.ckpt
/// into out_dir.
RunSummary run_training(const TrainConfig& cfg, const DatasetIndex& data, const RunOptions& opts);

std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path);

}  // namespace mdcn
