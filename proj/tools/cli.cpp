#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdcn/checkpoint.hpp"
#include "mdcn/datapipe.hpp"
#include "mdcn/error.hpp"
#include "mdcn/model.hpp"
#include "mdcn/optflow.hpp"
#include "mdcn/parallel.hpp"
#include "mdcn/trainer.hpp"

namespace mdcn::cli {
namespace {

using json = nlohmann::ordered_json;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// Flag values are checked before any work starts; a ConfigError at that point
// is a usage error rather than a runtime failure.
template <typename Fn>
void check_flags(Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

void apply_threads(int threads) {
  if (threads > 0) set_num_threads(threads);
}

const std::vector<std::string> kModes{"rgb", "flow", "fusion"};

// ------------------------------------------------------------------ audit

struct AuditArgs {
  std::string mode = "rgb";
  int frames = 32;
  int size = 224;
  bool no_skip = false;
  bool json = false;
  bool layers = false;
};

int cmd_audit(const AuditArgs& a, std::ostream& out) {
  ModelConfig cfg;
  check_flags([&] {
    cfg.mode = parse_stream_mode(a.mode);
    cfg.frames = a.frames;
    cfg.input_size = a.size;
    cfg.skip_enabled = !a.no_skip;
    cfg.validate();
  });
  const ComplexityReport report = audit_model(cfg);
  const double gflops = static_cast<double>(report.macs) / 1e9;
  const ReferenceFigures ref = reference_figures(cfg.mode);
  std::int64_t stem_macs = 0;
  for (const LayerCost& l : report.layers) {
    if (l.kind == "conv" && l.name.find(".stem.") != std::string::npos) stem_macs += l.macs;
  }
  if (a.json) {
    json j;
    j["mode"] = to_string(cfg.mode);
    j["frames"] = cfg.frames;
    j["size"] = cfg.input_size;
    j["skip"] = cfg.skip_enabled;
    j["params"] = report.params;
    j["macs"] = report.macs;
    j["stem_macs"] = stem_macs;
    j["gflops"] = std::round(gflops * 100.0) / 100.0;
    j["reference"] = {{"params_millions", ref.params_millions}, {"gflops", ref.gflops}};
    if (a.layers) {
      json rows = json::array();
      for (const LayerCost& l : report.layers) {
        rows.push_back({{"name", l.name}, {"kind", l.kind}, {"output", l.output.str()},
                        {"params", l.params}, {"macs", l.macs}});
      }
      j["layers"] = rows;
    }
    out << j.dump(2) << "\n";
    return kExitOk;
  }
  out << "mode " << to_string(cfg.mode) << "  frames " << cfg.frames << "  size " << cfg.input_size
      << "  skip " << (cfg.skip_enabled ? "on" : "off") << "\n";
  if (a.layers) {
    for (const LayerCost& l : report.layers) {
      char line[200];
      std::snprintf(line, sizeof(line), "  %-22s %-5s %-20s %10lld %14lld\n", l.name.c_str(),
                    l.kind.c_str(), l.output.str().c_str(), static_cast<long long>(l.params),
                    static_cast<long long>(l.macs));
      out << line;
    }
  }
  out << "params      " << report.params << "\n";
  out << "macs        " << report.macs << "\n";
  out << "stem macs   " << stem_macs << "\n";
  out << "gflops      " << fixed(gflops, 2) << "\n";
  out << "reference   " << fixed(ref.params_millions, 2) << "M params, " << fixed(ref.gflops, 2)
      << " GFLOPs (published figures for the default 32x224 input)\n";
  return kExitOk;
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  std::string out_dir;
  int train = 160;
  int val = 40;
  int frames = 64;
  int size = 112;
  std::uint64_t seed = 7;
  bool motion_ambiguity = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthConfig cfg;
  check_flags([&] {
    cfg.train_per_class = a.train;
    cfg.val_per_class = a.val;
    cfg.frames = a.frames;
    cfg.size = a.size;
    cfg.seed = a.seed;
    cfg.motion_ambiguity = a.motion_ambiguity;
    cfg.validate();
  });
  const DatasetIndex index = generate_synthetic_dataset(cfg, a.out_dir);
  out << "wrote " << index.train.size() << " train + " << index.val.size() << " val clips ("
      << cfg.frames << " frames, " << cfg.size << "x" << cfg.size << ", seed " << cfg.seed
      << (cfg.motion_ambiguity ? ", motion ambiguity" : "") << ") to " << a.out_dir << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- flow

struct FlowArgs {
  std::string in;
  std::string out;
  int iters = 100;
  double alpha = 1.0;
  int presmooth = 1;
  int threads = 0;
};

int cmd_flow(const FlowArgs& a, std::ostream& out) {
  HSConfig hs;
  check_flags([&] {
    hs.iterations = a.iters;
    hs.alpha = a.alpha;
    hs.presmooth = a.presmooth;
    hs.validate();
  });
  apply_threads(a.threads);
  const RawClip clip = read_rvc(a.in);
  if (clip.channels == 2) throw DataError(a.in + ": expected luminance or RGB frames, got 2 channels");
  std::vector<Frame> frames;
  frames.reserve(clip.frames);
  for (std::uint32_t i = 0; i < clip.frames; ++i) frames.push_back(clip.frame(i));
  const VideoTensor stack = clip_to_flowstack(frames, hs);
  const Shape5 s = stack.shape();
  std::vector<Frame> fields;
  fields.reserve(s.d);
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  for (int d = 0; d < s.d; ++d) {
    Frame f(s.h, s.w, 2);
    for (std::int64_t i = 0; i < hw; ++i) {
      f.data[2 * i] = stack.slice(0, 0)[d * hw + i];
      f.data[2 * i + 1] = stack.slice(0, 1)[d * hw + i];
    }
    fields.push_back(std::move(f));
  }
  write_rvc(RawClip::from_f32_frames(fields), a.out);
  float peak = 0.0f;
  for (float v : stack.values()) peak = std::max(peak, std::abs(v));
  out << "wrote " << s.d << " flow fields " << s.h << "x" << s.w << " to " << a.out
      << " (max |flow| " << fixed(peak, 4) << " px/frame)\n";
  return kExitOk;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string data;
  std::string mode = "rgb";
  int epochs = 100;
  int batch = 16;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  std::vector<int> drops;
  int frames = 32;
  int size = 224;
  bool no_skip = false;
  bool no_augment = false;
  std::uint64_t seed = 1;
  std::string out_dir = "runs/mdcn";
  bool resume = false;
  int flow_iters = 100;
  int threads = 0;
};

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s.empty() ? "none" : s;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg;
  check_flags([&] {
    cfg.model.mode = parse_stream_mode(a.mode);
    cfg.model.frames = a.frames;
    cfg.model.input_size = a.size;
    cfg.model.skip_enabled = !a.no_skip;
    cfg.model.validate();
    SGDConfig sgd;
    sgd.lr0 = a.lr;
    sgd.momentum = a.momentum;
    sgd.weight_decay = a.weight_decay;
    sgd.batch_size = a.batch;
    sgd.validate();
    // The default drop epochs belong to a 100-epoch run; shorter or longer
    // runs keep them at the same fractions unless given explicitly.
    sgd = sgd.scaled_to(a.epochs);
    if (!a.drops.empty()) sgd.drop_epochs = a.drops;
    sgd.validate();
    cfg.sgd = sgd;
    cfg.pipeline.frames = a.frames;
    cfg.pipeline.size = a.size;
    cfg.pipeline.augment_enabled = !a.no_augment;
    cfg.pipeline.flow.iterations = a.flow_iters;
    cfg.pipeline.validate();
  });
  apply_threads(a.threads);
  const DatasetIndex data = load_dataset_index(a.data);
  if (data.train.empty()) throw DataError(a.data + ": train split holds no clips");
  if (data.val.empty()) throw DataError(a.data + ": val split holds no clips");

  const SGDConfig& s = cfg.sgd;
  out << "training " << to_string(cfg.model.mode) << " model  frames " << cfg.model.frames
      << "  size " << cfg.model.input_size << "  skip " << (cfg.model.skip_enabled ? "on" : "off")
      << "  params " << audit_params(cfg.model) << "\n";
  out << "optimizer SGD nesterov  lr " << s.lr0 << "  momentum " << s.momentum
      << "  weight decay " << s.weight_decay << "  lr drops at epochs " << join(s.drop_epochs)
      << " (/" << s.drop_factor << ")  batch " << s.batch_size << "  epochs " << s.epochs << "\n";
  out << "data " << data.train.size() << " train / " << data.val.size() << " val clips  seed "
      << a.seed << "  augmentation " << (cfg.pipeline.augment_enabled ? "on" : "off") << "\n";
  out.flush();

  RunOptions opts;
  opts.out_dir = a.out_dir;
  opts.seed = a.seed;
  opts.resume = a.resume;
  opts.on_epoch = [&](const EpochMetrics& m) {
    out << "epoch " << m.epoch + 1 << "/" << s.epochs << "  lr " << m.lr << "  train loss "
        << fixed(m.train_loss, 4) << " acc " << fixed(m.train_acc, 4) << "  val loss "
        << fixed(m.val_loss, 4) << " acc " << fixed(m.val_acc, 4) << "\n";
    out.flush();
  };
  const RunSummary summary = run_training(cfg, data, opts);
  out << "best val acc " << fixed(summary.best_val_acc, 4) << " at epoch " << summary.best_epoch + 1
      << "; checkpoints and metrics.csv in " << a.out_dir << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string split = "val";
  std::string mode;
  int batch = 16;
  bool json = false;
  int threads = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  std::optional<StreamMode> expected;
  check_flags([&] {
    if (!a.mode.empty()) expected = parse_stream_mode(a.mode);
    if (a.batch < 1) throw ConfigError("batch must be >= 1");
  });
  apply_threads(a.threads);
  const Checkpoint ck = expected ? load_checkpoint(a.ckpt, *expected) : load_checkpoint(a.ckpt);
  const DatasetIndex data = load_dataset_index(a.data);
  const Split split = a.split == "train" ? Split::train : Split::val;
  PipelineConfig pipe;
  pipe.frames = ck.params.config.frames;
  pipe.size = ck.params.config.input_size;
  pipe.augment_enabled = false;
  const BatchStats stats = evaluate(ck.params, data.split(split), pipe, a.batch);
  if (a.json) {
    json j;
    j["checkpoint"] = a.ckpt;
    j["mode"] = to_string(ck.params.config.mode);
    j["split"] = to_string(split);
    j["clips"] = stats.clips;
    j["accuracy"] = stats.accuracy;
    j["loss"] = stats.loss;
    j["epoch"] = ck.meta.epoch;
    out << j.dump(2) << "\n";
  } else {
    out << to_string(split) << " accuracy " << fixed(stats.accuracy, 4) << "  loss "
        << fixed(stats.loss, 6) << "  clips " << stats.clips << "  (" << to_string(ck.params.config.mode)
        << " model after " << ck.meta.epoch << " epochs)\n";
  }
  return kExitOk;
}

// ------------------------------------------------------------------ bench

struct BenchArgs {
  std::string mode = "rgb";
  int frames = 32;
  int size = 224;
  int reps = 5;
  int threads = 0;
  std::uint64_t seed = 1;
  std::string from_file;
  int flow_iters = 100;
  bool json = false;
};

std::vector<Frame> random_frames(int count, int size, Rng& rng) {
  std::vector<Frame> frames;
  for (int i = 0; i < count; ++i) {
    Frame f(size, size, 3);
    for (float& v : f.data) v = static_cast<float>(rng.uniform());
    frames.push_back(std::move(f));
  }
  return frames;
}

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  ModelConfig cfg;
  PipelineConfig pipe;
  check_flags([&] {
    cfg.mode = parse_stream_mode(a.mode);
    cfg.frames = a.frames;
    cfg.input_size = a.size;
    cfg.validate();
    if (a.reps < 1) throw ConfigError("reps must be >= 1");
    pipe.frames = a.frames;
    pipe.size = a.size;
    pipe.augment_enabled = false;
    pipe.flow.iterations = a.flow_iters;
    pipe.validate();
  });
  apply_threads(a.threads);
  const ModelParams<float> params = init_params<float>(cfg, a.seed);
  Rng rng(mix_seed(a.seed, 0xBE7C));
  const std::vector<Frame> frames =
      a.from_file.empty() ? random_frames(cfg.frames, cfg.input_size, rng) : std::vector<Frame>{};

  double flow_seconds = 0.0;
  const auto one_pass = [&] {
    VideoTensor rgb;
    VideoTensor flow;
    const auto t0 = std::chrono::steady_clock::now();
    if (!a.from_file.empty()) {
      PreparedClip clip = prepare_clip({a.from_file, 0}, cfg.mode, pipe, nullptr);
      rgb = std::move(clip.rgb);
      flow = std::move(clip.flow);
    } else {
      if (cfg.uses_rgb()) rgb = normalize_rgb_clip(frames);
      if (cfg.uses_flow()) flow = normalize_flow(clip_to_flowstack(frames, pipe.flow));
    }
    const auto t1 = std::chrono::steady_clock::now();
    const ModelOutput<float> o =
        model_forward(rgb.empty() ? nullptr : &rgb, flow.empty() ? nullptr : &flow, params, Mode::infer);
    (void)o;
    if (cfg.uses_flow()) flow_seconds += std::chrono::duration<double>(t1 - t0).count();
  };

  one_pass();  // warmup
  flow_seconds = 0.0;
  std::vector<double> fps;
  double wall = 0.0;
  for (int r = 0; r < a.reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    one_pass();
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    wall += dt;
    fps.push_back(cfg.frames / dt);
  }
  const std::int64_t total_frames = static_cast<std::int64_t>(a.reps) * cfg.frames;
  const double overall = static_cast<double>(total_frames) / wall;
  double mean = 0.0;
  for (double f : fps) mean += f;
  mean /= static_cast<double>(fps.size());
  double var = 0.0;
  for (double f : fps) var += (f - mean) * (f - mean);
  const double stddev = fps.size() > 1 ? std::sqrt(var / static_cast<double>(fps.size() - 1)) : 0.0;

  if (a.json) {
    json j;
    j["mode"] = to_string(cfg.mode);
    j["frames"] = cfg.frames;
    j["size"] = cfg.input_size;
    j["reps"] = a.reps;
    j["threads"] = num_threads();
    j["frames_processed"] = total_frames;
    j["wall_seconds"] = wall;
    j["fps"] = overall;
    j["fps_mean"] = mean;
    j["fps_std"] = stddev;
    j["flow_seconds"] = flow_seconds;
    j["input"] = a.from_file.empty() ? "synthetic" : a.from_file;
    out << j.dump(2) << "\n";
  } else {
    out << "mode " << to_string(cfg.mode) << "  frames " << cfg.frames << "  size "
        << cfg.input_size << "  reps " << a.reps << "  threads " << num_threads() << "\n";
    out << "frames processed " << total_frames << " in " << fixed(wall, 3) << " s\n";
    out << "fps " << fixed(overall, 2) << "  (per rep mean " << fixed(mean, 2) << ", std "
        << fixed(stddev, 2) << ")\n";
    if (cfg.uses_flow() || !a.from_file.empty()) {
      out << "input preparation " << fixed(flow_seconds, 3) << " s of the total\n";
    }
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"MDCN video violence classifier: audits, training, evaluation, benchmarks"};
  app.name("mdcn");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  AuditArgs audit;
  CLI::App* sc_audit = app.add_subcommand("audit", "Exact parameter and multiply-add counts");
  sc_audit->add_option("--mode", audit.mode, "rgb, flow or fusion")->check(CLI::IsMember(kModes));
  sc_audit->add_option("--frames", audit.frames, "Input frames")->check(CLI::PositiveNumber);
  sc_audit->add_option("--size", audit.size, "Input height and width")->check(CLI::PositiveNumber);
  sc_audit->add_flag("--no-skip", audit.no_skip, "Drop the concatenated skip paths");
  sc_audit->add_flag("--layers", audit.layers, "Per-layer breakdown");
  sc_audit->add_flag("--json", audit.json, "Machine-readable output");

  SynthArgs synth;
  CLI::App* sc_synth = app.add_subcommand("synth", "Write the synthetic violent/nonviolent dataset");
  sc_synth->add_option("--out", synth.out_dir, "Output root")->required();
  sc_synth->add_option("--train", synth.train, "Train clips per class")->check(CLI::PositiveNumber);
  sc_synth->add_option("--val", synth.val, "Val clips per class")->check(CLI::PositiveNumber);
  sc_synth->add_option("--frames", synth.frames, "Frames per clip")->check(CLI::Range(2, 100000));
  sc_synth->add_option("--size", synth.size, "Frame height and width")->check(CLI::Range(16, 4096));
  sc_synth->add_option("--seed", synth.seed, "Generator seed");
  sc_synth->add_flag("--motion-ambiguity", synth.motion_ambiguity,
                     "Add fast straight-line movers to nonviolent clips");

  FlowArgs flow;
  CLI::App* sc_flow = app.add_subcommand("flow", "Horn-Schunck flow stack of an RVC clip");
  sc_flow->add_option("--in", flow.in, "Input clip")->required();
  sc_flow->add_option("--out", flow.out, "Output flow clip (2-channel f32)")->required();
  sc_flow->add_option("--iters", flow.iters, "Jacobi iterations")->check(CLI::PositiveNumber);
  sc_flow->add_option("--alpha", flow.alpha, "Smoothness weight")->check(CLI::PositiveNumber);
  sc_flow->add_option("--presmooth", flow.presmooth, "3x3 box blur passes")->check(CLI::NonNegativeNumber);
  sc_flow->add_option("--threads", flow.threads, "Worker threads")->check(CLI::NonNegativeNumber);

  TrainArgs train;
  CLI::App* sc_train = app.add_subcommand("train", "Train a model on an RVC dataset");
  sc_train->add_option("--data", train.data, "Dataset root")->required();
  sc_train->add_option("--mode", train.mode, "rgb, flow or fusion")->check(CLI::IsMember(kModes));
  sc_train->add_option("--epochs", train.epochs, "Epochs")->check(CLI::PositiveNumber);
  sc_train->add_option("--batch", train.batch, "Batch size")->check(CLI::PositiveNumber);
  sc_train->add_option("--lr", train.lr, "Initial learning rate")->check(CLI::PositiveNumber);
  sc_train->add_option("--momentum", train.momentum, "Nesterov momentum");
  sc_train->add_option("--wd", train.weight_decay, "Weight decay")->check(CLI::NonNegativeNumber);
  sc_train->add_option("--drops", train.drops, "Epochs where the learning rate drops 10x")
      ->delimiter(',');
  sc_train->add_option("--frames", train.frames, "Frames per clip")->check(CLI::PositiveNumber);
  sc_train->add_option("--size", train.size, "Input height and width")->check(CLI::PositiveNumber);
  sc_train->add_flag("--no-skip", train.no_skip, "Drop the concatenated skip paths");
  sc_train->add_flag("--no-augment", train.no_augment, "Disable brightness and rotation augmentation");
  sc_train->add_option("--seed", train.seed, "Run seed");
  sc_train->add_option("--out", train.out_dir, "Directory for checkpoints and metrics.csv");
  sc_train->add_flag("--resume", train.resume, "Continue from <out>/last.ckpt");
  sc_train->add_option("--flow-iters", train.flow_iters, "Horn-Schunck iterations")
      ->check(CLI::PositiveNumber);
  sc_train->add_option("--threads", train.threads, "Worker threads")->check(CLI::NonNegativeNumber);

  EvalArgs eval;
  CLI::App* sc_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  sc_eval->add_option("--data", eval.data, "Dataset root")->required();
  sc_eval->add_option("--ckpt", eval.ckpt, "Checkpoint file")->required();
  sc_eval->add_option("--split", eval.split, "train or val")->check(CLI::IsMember({"train", "val"}));
  sc_eval->add_option("--mode", eval.mode, "Expected stream mode")->check(CLI::IsMember(kModes));
  sc_eval->add_option("--batch", eval.batch, "Batch size")->check(CLI::PositiveNumber);
  sc_eval->add_option("--threads", eval.threads, "Worker threads")->check(CLI::NonNegativeNumber);
  sc_eval->add_flag("--json", eval.json, "Machine-readable output");

  BenchArgs bench;
  CLI::App* sc_bench = app.add_subcommand("bench", "Inference throughput in frames per second");
  sc_bench->add_option("--mode", bench.mode, "rgb, flow or fusion")->check(CLI::IsMember(kModes));
  sc_bench->add_option("--frames", bench.frames, "Frames per clip")->check(CLI::PositiveNumber);
  sc_bench->add_option("--size", bench.size, "Input height and width")->check(CLI::PositiveNumber);
  sc_bench->add_option("--reps", bench.reps, "Timed passes after one warmup")->check(CLI::PositiveNumber);
  sc_bench->add_option("--threads", bench.threads, "Worker threads")->check(CLI::NonNegativeNumber);
  sc_bench->add_option("--seed", bench.seed, "Weight and input seed");
  sc_bench->add_option("--from-file", bench.from_file, "Time the full pipeline on this clip");
  sc_bench->add_option("--flow-iters", bench.flow_iters, "Horn-Schunck iterations")
      ->check(CLI::PositiveNumber);
  sc_bench->add_flag("--json", bench.json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sc_audit) return cmd_audit(audit, out);
    if (*sc_synth) return cmd_synth(synth, out);
    if (*sc_flow) return cmd_flow(flow, out);
    if (*sc_train) return cmd_train(train, out);
    if (*sc_eval) return cmd_eval(eval, out);
    if (*sc_bench) return cmd_bench(bench, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace mdcn::cli
