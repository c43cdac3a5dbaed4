// Microbenchmarks for the hot paths: encoder forward/backward, the
// contrastive loss kernel and exhaustive retrieval.

#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "iic/contrastive.hpp"
#include "iic/encoder.hpp"
#include "iic/retrieval.hpp"
#include "iic/rng.hpp"

namespace {

iic::EncoderConfig desk_config() {
  iic::EncoderConfig config;
  config.in_channels = 3;
  config.stage_channels = {8, 16, 32};
  config.embedding_dim = 64;
  config.clip_t = 8;
  config.clip_h = 32;
  config.clip_w = 32;
  return config;
}

iic::VideoClip random_clip(int t, int h, int w, int c, iic::Rng& rng) {
  iic::VideoClip clip;
  clip.frames = iic::Volume(t, h, w, c);
  for (auto& x : clip.frames.data) x = rng.uniform01();
  return clip;
}

void bench_encoder_forward(benchmark::State& state) {
  const auto config = desk_config();
  const iic::EncoderParams params = iic::init_params(config, 1);
  iic::Rng rng(2);
  const iic::VideoClip clip = random_clip(8, 32, 32, 3, rng);
  iic::ActivationCache cache;
  for (auto _ : state) {
    auto e = iic::forward(params, clip, &cache);
    benchmark::DoNotOptimize(e);
  }
}
BENCHMARK(bench_encoder_forward)->Unit(benchmark::kMillisecond);

void bench_encoder_backward(benchmark::State& state) {
  const auto config = desk_config();
  const iic::EncoderParams params = iic::init_params(config, 1);
  iic::Rng rng(2);
  const iic::VideoClip clip = random_clip(8, 32, 32, 3, rng);
  iic::ActivationCache cache;
  auto e = iic::forward(params, clip, &cache);
  std::vector<double> gembed(e.size(), 0.01), gparams;
  for (auto _ : state) {
    std::fill(gparams.begin(), gparams.end(), 0.0);
    iic::backward(params, cache, gembed, gparams);
    benchmark::DoNotOptimize(gparams);
  }
}
BENCHMARK(bench_encoder_backward)->Unit(benchmark::kMillisecond);

iic::EmbeddingVector random_unit(int d, iic::Rng& rng) {
  iic::EmbeddingVector v(d);
  double norm2 = 0;
  for (auto& x : v) {
    x = rng.normal();
    norm2 += x * x;
  }
  for (auto& x : v) x /= std::sqrt(norm2);
  return v;
}

void bench_loss_kernel(benchmark::State& state) {
  const int d = 64, k = 64, n = 200;
  iic::Rng rng(3);
  const auto banks = iic::init_banks(n, d, 5);
  const auto anchor = random_unit(d, rng), positive = random_unit(d, rng);
  const auto draw = [&] {
    iic::Rng draw_rng(7);
    return iic::sample_negatives(n, k, 3, draw_rng);
  }();
  for (auto _ : state) {
    auto out = iic::loss_one_direction(anchor, positive, banks.view2,
                                       banks.intra_neg, draw, 0.07);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(bench_loss_kernel);

void bench_knn(benchmark::State& state) {
  const int d = 128;
  iic::Rng rng(4);
  auto record = [&](std::uint32_t id) {
    iic::FeatureRecord r;
    r.video_id = id;
    r.class_label = id % 8;
    r.feature = random_unit(d, rng);
    return r;
  };
  std::vector<iic::FeatureRecord> gallery, queries;
  for (std::uint32_t i = 0; i < 160; ++i) gallery.push_back(record(i));
  for (std::uint32_t i = 0; i < 40; ++i) queries.push_back(record(1000 + i));
  for (auto _ : state) {
    auto report = iic::knn_retrieve(queries, gallery, {1, 5, 10, 20, 50});
    benchmark::DoNotOptimize(report);
  }
}
BENCHMARK(bench_knn);

}  // namespace

BENCHMARK_MAIN();
