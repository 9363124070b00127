#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mdcn/checkpoint.hpp"
#include "mdcn/error.hpp"
#include "mdcn/trainer.hpp"
#include "oracles.hpp"

using namespace mdcn;

namespace {

ModelConfig tiny_model(StreamMode mode = StreamMode::rgb) {
  ModelConfig c;
  c.mode = mode;
  c.frames = 4;
  c.input_size = 32;
  return c;
}

void fill_all(ModelParams<float>& p, float value) {
  for (auto& t : learnable_tensors(p)) std::fill(t.values.begin(), t.values.end(), value);
}

std::string file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TrainConfig tiny_train_config(StreamMode mode = StreamMode::rgb) {
  TrainConfig cfg;
  cfg.model = tiny_model(mode);
  cfg.pipeline.frames = cfg.model.frames;
  cfg.pipeline.size = cfg.model.input_size;
  cfg.pipeline.flow.iterations = 10;
  cfg.sgd.batch_size = 2;
  cfg.sgd.lr0 = 0.01;
  return cfg;
}

DatasetIndex tiny_dataset(const std::filesystem::path& root, int train_per_class, int val_per_class) {
  SynthConfig s;
  s.train_per_class = train_per_class;
  s.val_per_class = val_per_class;
  s.frames = 8;
  s.size = 32;
  s.seed = 3;
  return generate_synthetic_dataset(s, root);
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("learning rate schedule") {
  const SGDConfig cfg;
  CHECK(lr_at_epoch(0, cfg) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(24, cfg) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(25, cfg) == doctest::Approx(0.01));
  CHECK(lr_at_epoch(74, cfg) == doctest::Approx(0.01));
  CHECK(lr_at_epoch(75, cfg) == doctest::Approx(0.001));
  CHECK(lr_at_epoch(99, cfg) == doctest::Approx(0.001));

  int jumps = 0;
  for (int e = 1; e < 100; ++e) {
    CHECK(lr_at_epoch(e, cfg) <= lr_at_epoch(e - 1, cfg));
    if (lr_at_epoch(e, cfg) != lr_at_epoch(e - 1, cfg)) ++jumps;
  }
  CHECK(jumps == 2);

  CHECK(cfg.scaled_to(30).drop_epochs == std::vector<int>{8, 23});
  CHECK(cfg.scaled_to(100).drop_epochs == cfg.drop_epochs);
  const SGDConfig squeezed = cfg.scaled_to(2);
  CHECK(squeezed.drop_epochs.size() == 2);
  CHECK(squeezed.drop_epochs[0] < squeezed.drop_epochs[1]);
}

TEST_CASE("optimizer config validation") {
  SGDConfig bad;
  bad.lr0 = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SGDConfig{};
  bad.momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SGDConfig{};
  bad.drop_epochs = {30, 30};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("nesterov step hand traces") {
  const ModelConfig mc = tiny_model();
  ModelParams<float> p = init_params<float>(mc, 1);
  ModelParams<float> g = zeros_like(p);
  ModelParams<float> v = zeros_like(p);
  fill_all(p, 1.0f);
  fill_all(g, 1.0f);
  SGDConfig cfg;
  cfg.weight_decay = 0.0;
  sgd_nesterov_step(p, g, v, 0.1, cfg);
  for (const auto& t : learnable_tensors(p)) {
    for (float x : t.values) REQUIRE(x == doctest::Approx(0.81f));
  }
  for (const auto& t : learnable_tensors(v)) {
    for (float x : t.values) REQUIRE(x == 1.0f);
  }

  ModelParams<float> q = init_params<float>(mc, 2);
  const ModelParams<float> before = q;
  ModelParams<float> zero = zeros_like(q);
  ModelParams<float> vz = zeros_like(q);
  sgd_nesterov_step(q, zero, vz, 0.1, cfg);
  const auto qa = learnable_tensors(q);
  const auto qb = learnable_tensors(before);
  for (std::size_t i = 0; i < qa.size(); ++i) CHECK(std::equal(qa[i].values.begin(), qa[i].values.end(), qb[i].values.begin()));

  SGDConfig plain = cfg;
  plain.momentum = 0.0;
  ModelParams<float> r = init_params<float>(mc, 3);
  const ModelParams<float> r0 = r;
  ModelParams<float> gr = init_params<float>(mc, 4);
  ModelParams<float> vr = zeros_like(r);
  sgd_nesterov_step(r, gr, vr, 0.05, plain);
  const auto ra = learnable_tensors(r);
  const auto rb = learnable_tensors(r0);
  const auto rg = learnable_tensors(gr);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    for (std::size_t k = 0; k < ra[i].values.size(); ++k) {
      REQUIRE(ra[i].values[k] == doctest::Approx(rb[i].values[k] - 0.05f * rg[i].values[k]));
    }
  }
}

TEST_CASE("nesterov step properties") {
  const ModelConfig mc = tiny_model();
  ModelParams<float> p = init_params<float>(mc, 5);
  const ModelParams<float> start = p;
  ModelParams<float> g = init_params<float>(mc, 6);
  ModelParams<float> v = zeros_like(p);
  SGDConfig cfg;
  sgd_nesterov_step(p, g, v, 0.0, cfg);
  const auto pa = learnable_tensors(p);
  const auto pb = learnable_tensors(start);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::equal(pa[i].values.begin(), pa[i].values.end(), pb[i].values.begin()));
  }
  bool velocity_moved = false;
  for (const auto& t : learnable_tensors(v)) {
    for (float x : t.values) velocity_moved = velocity_moved || x != 0.0f;
  }
  CHECK(velocity_moved);

  // Weight decay alone shrinks every nonzero parameter.
  ModelParams<float> d = init_params<float>(mc, 7);
  ModelParams<float> zero = zeros_like(d);
  ModelParams<float> vd = zeros_like(d);
  std::vector<double> prev;
  for (const auto& t : learnable_tensors(d)) {
    double s = 0.0;
    for (float x : t.values) s += std::abs(x);
    prev.push_back(s);
  }
  for (int step = 0; step < 5; ++step) {
    sgd_nesterov_step(d, zero, vd, 0.1, cfg);
    const auto dt = learnable_tensors(d);
    for (std::size_t i = 0; i < dt.size(); ++i) {
      double s = 0.0;
      for (float x : dt[i].values) s += std::abs(x);
      if (prev[i] > 0.0) CHECK(s < prev[i]);
      prev[i] = s;
    }
  }

  ModelParams<float> fusion = init_params<float>(tiny_model(StreamMode::fusion), 1);
  CHECK_THROWS_AS(sgd_nesterov_step(p, fusion, v, 0.1, cfg), ConfigError);
}

TEST_CASE("metrics csv schema") {
  CHECK(std::string(kMetricsHeader) == "epoch,lr,train_loss,train_acc,val_loss,val_acc");
  const EpochMetrics m{3, 0.01, 0.5, 0.75, 0.25, 0.875};
  const std::string row = metrics_csv_row(m);
  CHECK(row.rfind("3,0.01,0.5", 0) == 0);
  CHECK(std::count(row.begin(), row.end(), ',') == 5);
}

TEST_CASE("prediction tie-break") {
  Matrix<float> logits(3, 2);
  logits.data = {1, 1, 0, 2, 3, -1};
  CHECK(predict(logits) == std::vector<int>{0, 1, 0});
}

TEST_CASE("evaluation with a constant head") {
  oracle::ScratchDir dir("eval");
  const DatasetIndex data = tiny_dataset(dir.path(), 2, 2);
  TrainConfig cfg = tiny_train_config();
  ModelParams<float> p = init_params<float>(cfg.model, 1);
  p.fc_w = Matrix<float>(2, 128, 0.0f);
  p.fc_b = {1.0f, 0.0f};
  std::vector<ClipEntry> calm;
  for (const ClipEntry& e : data.val) {
    if (e.label == 0) calm.push_back(e);
  }
  CHECK(evaluate(p, calm, cfg.pipeline, 4).accuracy == 1.0);
  const BatchStats balanced = evaluate(p, data.val, cfg.pipeline, 3);
  CHECK(balanced.accuracy == 0.5);
  CHECK(balanced.clips == 4);
  const BatchStats again = evaluate(p, data.val, cfg.pipeline, 3);
  CHECK(again.loss == balanced.loss);

  std::vector<ClipEntry> broken{{dir.path() / "nope.rvc", 0}};
  try {
    evaluate(p, broken, cfg.pipeline);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("nope.rvc") != std::string::npos);
  }
}

TEST_CASE("training overfits a two-clip dataset") {
  oracle::ScratchDir dir("overfit");
  const DatasetIndex data = tiny_dataset(dir.path(), 1, 1);
  TrainConfig cfg = tiny_train_config();
  cfg.pipeline.augment_enabled = false;
  ModelParams<float> p = init_params<float>(cfg.model, 2);
  TrainState state = fresh_train_state(p, 2);
  ClipCache cache;
  const double first = train_epoch(p, state, data.train, cfg, &cache).loss;
  double last = first;
  for (int e = 1; e < 20; ++e) last = train_epoch(p, state, data.train, cfg, &cache).loss;
  MESSAGE("train loss " << first << " -> " << last);
  CHECK(last < first);
  CHECK(state.epoch == 20);
}

TEST_CASE("train_epoch is deterministic") {
  oracle::ScratchDir dir("determinism");
  const DatasetIndex data = tiny_dataset(dir.path(), 2, 1);
  for (StreamMode mode : {StreamMode::rgb, StreamMode::fusion}) {
    const TrainConfig cfg = tiny_train_config(mode);
    ModelParams<float> a = init_params<float>(cfg.model, 3);
    ModelParams<float> b = a;
    TrainState sa = fresh_train_state(a, 11);
    TrainState sb = fresh_train_state(b, 11);
    ClipCache cache;
    for (int e = 0; e < 2; ++e) {
      const BatchStats ma = train_epoch(a, sa, data.train, cfg);
      const BatchStats mb = train_epoch(b, sb, data.train, cfg, &cache);
      CHECK(ma.loss == mb.loss);
      CHECK(ma.accuracy == mb.accuracy);
    }
    const auto ta = learnable_tensors(a);
    const auto tb = learnable_tensors(b);
    for (std::size_t i = 0; i < ta.size(); ++i) {
      CHECK(std::equal(ta[i].values.begin(), ta[i].values.end(), tb[i].values.begin()));
    }
  }
}

TEST_CASE("checkpoint round trip") {
  oracle::ScratchDir dir("ckpt");
  Checkpoint c;
  c.params = init_params<float>(tiny_model(StreamMode::fusion), 4);
  c.params.rgb->blocks[2].bn_2d.running_var[3] = 2.5f;
  c.velocity = init_params<float>(tiny_model(StreamMode::fusion), 5);
  c.meta.epoch = 7;
  c.meta.seed = 99;
  c.meta.best_val_acc = 0.8125;
  c.meta.metrics = {6, 0.01, 0.4, 0.8, 0.3, 0.8125};
  const auto first = dir.path() / "a.ckpt";
  const auto second = dir.path() / "b.ckpt";
  save_checkpoint(first, c);
  const Checkpoint loaded = load_checkpoint(first);
  save_checkpoint(second, loaded);
  CHECK(file_bytes(first) == file_bytes(second));
  CHECK(loaded.params.config == c.params.config);
  CHECK(loaded.meta.epoch == 7);
  CHECK(loaded.meta.seed == 99);
  CHECK(loaded.meta.metrics.val_acc == 0.8125);
  CHECK(loaded.params.rgb->blocks[2].bn_2d.running_var[3] == 2.5f);
  REQUIRE(loaded.velocity.has_value());
  CHECK(loaded.velocity->flow->blocks[3].w_skip == c.velocity->flow->blocks[3].w_skip);

  const std::string bytes = file_bytes(first);
  CHECK(bytes.substr(0, 4) == "MDCN");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);

  try {
    load_checkpoint(first, StreamMode::rgb);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("fusion") != std::string::npos);
    CHECK(msg.find("rgb") != std::string::npos);
  }

  const std::vector<std::uint8_t> raw = encode_checkpoint(c);
  CHECK_THROWS_AS(decode_checkpoint({raw.begin(), raw.end() - 3}), DataError);
  std::vector<std::uint8_t> magic = raw;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), DataError);
  std::vector<std::uint8_t> version = raw;
  version[4] = 2;
  CHECK_THROWS_AS(decode_checkpoint(version), DataError);
  std::vector<std::uint8_t> trailing = raw;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), DataError);
}

TEST_CASE("full runs are reproducible and resumable") {
  oracle::ScratchDir dir("run");
  const DatasetIndex data = tiny_dataset(dir.path() / "data", 2, 1);
  TrainConfig cfg = tiny_train_config();
  cfg.sgd = cfg.sgd.scaled_to(3);

  RunOptions straight{dir.path() / "straight", 5, false, {}};
  const RunSummary full = run_training(cfg, data, straight);
  CHECK(full.history.size() == 3);
  RunOptions repeat{dir.path() / "repeat", 5, false, {}};
  run_training(cfg, data, repeat);
  CHECK(file_bytes(straight.out_dir / "metrics.csv") == file_bytes(repeat.out_dir / "metrics.csv"));
  CHECK(std::filesystem::exists(straight.out_dir / "first.ckpt"));
  CHECK(std::filesystem::exists(straight.out_dir / "best.ckpt"));
  CHECK(std::filesystem::exists(straight.out_dir / "last.ckpt"));

  TrainConfig part = cfg;
  part.sgd.epochs = 2;
  RunOptions split{dir.path() / "split", 5, false, {}};
  run_training(part, data, split);
  split.resume = true;
  const RunSummary resumed = run_training(cfg, data, split);
  CHECK(resumed.history.size() == 3);
  CHECK(file_bytes(straight.out_dir / "metrics.csv") == file_bytes(split.out_dir / "metrics.csv"));
  CHECK(file_bytes(straight.out_dir / "last.ckpt") == file_bytes(split.out_dir / "last.ckpt"));

  const std::vector<EpochMetrics> rows = read_metrics_csv(straight.out_dir / "metrics.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[2].epoch == 2);
}

}  // TEST_SUITE
