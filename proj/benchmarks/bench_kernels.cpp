#include <benchmark/benchmark.h>

#include "mdcn/model.hpp"
#include "mdcn/nn.hpp"
#include "mdcn/optflow.hpp"
#include "mdcn/rng.hpp"

using namespace mdcn;

namespace {

Tensor<float> noise(Shape5 shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(shape);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

Frame gray_noise(int size, std::uint64_t seed) {
  Rng rng(seed);
  Frame f(size, size, 1);
  for (float& v : f.data) v = static_cast<float>(rng.uniform());
  return f;
}

// args: channels, spatial size; 3x3x3 kernel, stride 1, frames 8
void BM_Conv3d(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  ConvSpec spec;
  spec.in_channels = c;
  spec.out_channels = c;
  spec.kernel = {3, 3, 3};
  spec.padding = {1, 1, 1};
  const Tensor<float> x = noise(Shape5{1, c, 8, s, s}, 1);
  const Tensor<float> w = noise(spec.weight_shape(), 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d_forward(x, w, spec));
  const Shape5 o = spec.output_shape(x.shape());
  state.counters["MAC/s"] = benchmark::Counter(
      static_cast<double>(o.volume()) * c * spec.kernel_volume(), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3d)->Args({8, 56})->Args({16, 28})->Args({64, 14})->Unit(benchmark::kMillisecond);

void BM_HornSchunck(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const Frame a = gray_noise(size, 3);
  const Frame b = gray_noise(size, 4);
  HSConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(horn_schunck(a, b, cfg));
}
BENCHMARK(BM_HornSchunck)->Arg(56)->Arg(112)->Arg(224)->Unit(benchmark::kMillisecond);

// args: frames, input size
void BM_StreamForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.frames = static_cast<int>(state.range(0));
  cfg.input_size = static_cast<int>(state.range(1));
  const ModelParams<float> p = init_params<float>(cfg, 5);
  const Tensor<float> clip = noise(Shape5{1, 3, cfg.frames, cfg.input_size, cfg.input_size}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(stream_forward(clip, *p.rgb, cfg, 3, Mode::infer));
  state.counters["frames/s"] =
      benchmark::Counter(static_cast<double>(cfg.frames), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_StreamForward)->Args({8, 56})->Args({32, 112})->Args({32, 224})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
