#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <vector>

#include "helpers.hpp"
#include "iic/encoder.hpp"
#include "iic/errors.hpp"

using namespace iic;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig config;
  config.in_channels = 3;
  config.stage_channels = {4, 8};
  config.embedding_dim = 8;
  config.clip_t = 4;
  config.clip_h = 8;
  config.clip_w = 8;
  return config;
}

VideoClip random_clip(const EncoderConfig& config, std::uint64_t seed,
                      double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  VideoClip clip;
  clip.frames = testutil::random_volume(config.clip_t, config.clip_h,
                                        config.clip_w, config.in_channels, rng,
                                        lo, hi);
  return clip;
}

}  // namespace

TEST_CASE("forward emits unit-norm embeddings deterministically") {
  const EncoderConfig config = tiny_config();
  const EncoderParams params = init_params(config, 3);
  const VideoClip clip = random_clip(config, 4);
  const EmbeddingVector e1 = forward(params, clip, nullptr);
  const EmbeddingVector e2 = forward(params, clip, nullptr);
  CHECK(e1 == e2);
  CHECK(std::abs(testutil::norm(e1) - 1.0) <= 1e-6);
  ActivationCache cache;
  const EmbeddingVector e3 = forward(params, clip, &cache);
  CHECK(e3 == e1);
  CHECK(cache.embedding == e1);
}

TEST_CASE("forward rejects shape mismatches") {
  const EncoderConfig config = tiny_config();
  const EncoderParams params = init_params(config, 3);
  VideoClip clip = random_clip(config, 4);
  clip.frames = Volume(config.clip_t, config.clip_h, config.clip_w + 2,
                       config.in_channels);
  CHECK_THROWS_AS(forward(params, clip, nullptr), std::invalid_argument);
}

TEST_CASE("zero input with zero biases is reported as degenerate") {
  const EncoderConfig config = tiny_config();
  const EncoderParams params = init_params(config, 3);
  VideoClip clip;
  clip.frames = Volume(config.clip_t, config.clip_h, config.clip_w,
                       config.in_channels);
  CHECK_THROWS_AS(forward(params, clip, nullptr), NumericError);
}

TEST_CASE("config validation") {
  EncoderConfig config = tiny_config();
  config.embedding_dim = 1;
  CHECK_THROWS_AS(validate_config(config), std::invalid_argument);
  config = tiny_config();
  config.clip_h = 6;  // not divisible by 2^(stages-1) cleanly after pooling
  CHECK_NOTHROW(validate_config(config));
  config.clip_h = 7;
  CHECK_THROWS_AS(validate_config(config), std::invalid_argument);
  config = tiny_config();
  config.in_channels = 2;
  CHECK_THROWS_AS(validate_config(config), std::invalid_argument);
  config = tiny_config();
  config.stage_channels = {};
  CHECK_THROWS_AS(validate_config(config), std::invalid_argument);
}

TEST_CASE("plan accounts for every parameter once") {
  const EncoderConfig config = tiny_config();
  const EncoderPlan plan = make_plan(config);
  REQUIRE(plan.stages.size() == 2);
  // stage 1: 3 -> 4 with skip; stage 2: 4 -> 8 with skip
  const std::size_t expected = (27 * 3 * 4 + 4) + (27 * 4 * 4 + 4) + (3 * 4 + 4) +
                               (27 * 4 * 8 + 8) + (27 * 8 * 8 + 8) + (4 * 8 + 8) +
                               (8 * 8 + 8);
  CHECK(plan.total_params == expected);
  CHECK(plan.feature_dim == 8);
  CHECK(plan.stages[0].has_skip_proj);
  CHECK(plan.stages[1].has_skip_proj);
  CHECK_FALSE(plan.stages[1].pooled);
  // pooling halves H and W, halves even T
  CHECK(plan.stages[0].t_out == 2);
  CHECK(plan.stages[0].h_out == 4);
  CHECK(plan.stages[0].w_out == 4);
}

TEST_CASE("same-width stage skips the projection") {
  EncoderConfig config = tiny_config();
  config.stage_channels = {4, 4};
  const EncoderPlan plan = make_plan(config);
  CHECK(plan.stages[0].has_skip_proj);   // 3 -> 4
  CHECK_FALSE(plan.stages[1].has_skip_proj);  // 4 -> 4 identity skip
}

TEST_CASE("odd temporal extent is left unpooled") {
  EncoderConfig config = tiny_config();
  config.clip_t = 5;
  const EncoderPlan plan = make_plan(config);
  CHECK(plan.stages[0].pool_t == 1);
  CHECK(plan.stages[0].t_out == 5);
}

TEST_CASE("init is seeded, fan-in scaled and zero-dc") {
  const EncoderConfig config = tiny_config();
  const EncoderParams a = init_params(config, 10);
  const EncoderParams b = init_params(config, 10);
  const EncoderParams c = init_params(config, 11);
  CHECK(a.flat == b.flat);
  CHECK(a.flat != c.flat);

  const EncoderPlan plan = make_plan(config);
  auto block_variance = [&](std::size_t off, std::size_t n) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < n; ++i) mean += a.flat[off + i] / n;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = a.flat[off + i] - mean;
      var += d * d / n;
    }
    return var;
  };
  for (const auto& st : plan.stages) {
    const std::size_t na = 27u * st.cin * st.cout;
    const std::size_t nb = 27u * st.cout * st.cout;
    if (na >= 256)
      CHECK(block_variance(st.conv_a_w, na) ==
            doctest::Approx(2.0 / (27.0 * st.cin)).epsilon(0.2));
    if (nb >= 256)
      CHECK(block_variance(st.conv_b_w, nb) ==
            doctest::Approx(2.0 / (27.0 * st.cout)).epsilon(0.2));
    // zero-dc contract: each filter's taps sum to zero
    for (int ci = 0; ci < st.cin; ++ci)
      for (int co = 0; co < st.cout; ++co) {
        double tap_sum = 0;
        for (int p = 0; p < 27; ++p)
          tap_sum += a.flat[st.conv_a_w + (std::size_t(p) * st.cin + ci) * st.cout + co];
        CHECK(std::abs(tap_sum) <= 1e-12);
      }
    // biases zero
    for (int co = 0; co < st.cout; ++co) {
      CHECK(a.flat[st.conv_a_b + co] == 0.0);
      CHECK(a.flat[st.conv_b_b + co] == 0.0);
    }
  }
  const std::size_t np = std::size_t(plan.feature_dim) * config.embedding_dim;
  if (np >= 256)
    CHECK(block_variance(plan.proj_w, np) ==
          doctest::Approx(2.0 / plan.feature_dim).epsilon(0.2));
}

TEST_CASE("hand-computed scalar network") {
  // constant 2x2x2 input, one stage 1 -> 1, no pooling: with only center
  // taps set, every position computes the same scalar chain we can do by
  // hand, and pooling averages equal values.
  EncoderConfig config;
  config.in_channels = 1;
  config.stage_channels = {1};
  config.embedding_dim = 2;
  config.clip_t = 2;
  config.clip_h = 2;
  config.clip_w = 2;
  const EncoderPlan plan = make_plan(config);
  EncoderParams params;
  params.config = config;
  params.flat.assign(plan.total_params, 0.0);
  const auto& st = plan.stages[0];
  // center tap of a 3x3x3 kernel at [kt=1][kh=1][kw=1], cin = cout = 1
  const std::size_t center = (std::size_t(1) * 3 + 1) * 3 + 1;
  params.flat[st.conv_a_w + center] = 2.0;   // a_pre = 2x
  params.flat[st.conv_a_b] = -1.0;           // a_pre = 2x - 1
  params.flat[st.conv_b_w + center] = 3.0;   // b = 3 relu(2x - 1)
  params.flat[st.conv_b_b] = 0.5;
  REQUIRE_FALSE(st.has_skip_proj);           // identity skip, adds x
  params.flat[plan.proj_w + 0] = 1.0;        // z = (f, 2f) before bias
  params.flat[plan.proj_w + 1] = 2.0;
  params.flat[plan.proj_b + 0] = 0.0;
  params.flat[plan.proj_b + 1] = -1.0;

  VideoClip clip;
  clip.frames = Volume(2, 2, 2, 1);
  std::fill(clip.frames.data.begin(), clip.frames.data.end(), 0.8);
  // per position: a_pre = 0.6, relu = 0.6, b = 2.3, sum = 2.3 + 0.8 = 3.1
  // gap = 3.1; z = (3.1, 2 * 3.1 - 1) = (3.1, 5.2)
  const EmbeddingVector e = forward(params, clip, nullptr);
  const double norm = std::sqrt(3.1 * 3.1 + 5.2 * 5.2);
  CHECK(e[0] == doctest::Approx(3.1 / norm).epsilon(1e-12));
  CHECK(e[1] == doctest::Approx(5.2 / norm).epsilon(1e-12));

  // negative pre-activation: relu clamps, skip still passes the input
  std::fill(clip.frames.data.begin(), clip.frames.data.end(), 0.3);
  // a_pre = -0.4 -> relu 0, b = 0.5, sum = 0.8
  const EmbeddingVector e2 = forward(params, clip, nullptr);
  const double z0 = 0.8, z1 = 2 * 0.8 - 1;
  const double n2 = std::sqrt(z0 * z0 + z1 * z1);
  CHECK(e2[0] == doctest::Approx(z0 / n2).epsilon(1e-12));
  CHECK(e2[1] == doctest::Approx(z1 / n2).epsilon(1e-12));
}

TEST_CASE("backward matches central finite differences") {
  const EncoderConfig config = tiny_config();
  const EncoderParams params = init_params(config, 20);
  const VideoClip clip = random_clip(config, 21, 0.0, 1.0);

  // scalar loss: fixed random linear readout of the embedding, so the
  // normalization backward is exercised too
  Rng wrng(22);
  std::vector<double> readout(config.embedding_dim);
  for (auto& v : readout) v = wrng.normal();

  auto loss_at = [&](const EncoderParams& p) {
    const EmbeddingVector e = forward(p, clip, nullptr);
    return testutil::dot(readout, e);
  };

  ActivationCache cache;
  const EmbeddingVector e = forward(params, clip, &cache);
  (void)e;
  std::vector<double> grad;
  backward(params, cache, readout, grad);
  REQUIRE(grad.size() == params.flat.size());

  Rng pick(23);
  const double h = 1e-5;
  int checked = 0;
  double worst = 0;
  while (checked < 120) {
    const std::size_t i = pick.uniform_below(params.flat.size());
    EncoderParams pp = params;
    pp.flat[i] += h;
    const double up = loss_at(pp);
    pp.flat[i] -= 2 * h;
    const double down = loss_at(pp);
    const double fd = (up - down) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-3});
    worst = std::max(worst, std::abs(fd - grad[i]) / scale);
    ++checked;
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("backward accumulates into an existing gradient buffer") {
  const EncoderConfig config = tiny_config();
  const EncoderParams params = init_params(config, 30);
  const VideoClip clip = random_clip(config, 31);
  ActivationCache cache;
  forward(params, clip, &cache);
  std::vector<double> g(params.flat.size(), 0.0);
  std::vector<double> gembed(config.embedding_dim, 0.25);
  backward(params, cache, gembed, g);
  const std::vector<double> once = g;
  backward(params, cache, gembed, g);
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(g[i] == doctest::Approx(2 * once[i]).epsilon(1e-12));
  std::vector<double> wrong(params.flat.size() + 1, 0.0);
  CHECK_THROWS_AS(backward(params, cache, gembed, wrong),
                  std::invalid_argument);
}

TEST_CASE("stale caches are rejected") {
  const EncoderConfig config = tiny_config();
  EncoderParams params = init_params(config, 40);
  const VideoClip clip = random_clip(config, 41);
  ActivationCache cache;
  forward(params, clip, &cache);
  params.flat[0] += 0.5;
  std::vector<double> g, gembed(config.embedding_dim, 1.0);
  CHECK_THROWS_AS(backward(params, cache, gembed, g), std::invalid_argument);
}

TEST_CASE("checkpoint io round trips bitwise") {
  testutil::TempDir dir("ckpt");
  const EncoderConfig config = tiny_config();
  const EncoderParams params = init_params(config, 50);
  const auto path = dir.path() / "encoder.iicwgt";
  save_encoder(path, params);
  const EncoderParams loaded = load_encoder(path);
  CHECK(loaded.flat == params.flat);
  CHECK(loaded.config.stage_channels == config.stage_channels);
  CHECK(loaded.config.embedding_dim == config.embedding_dim);
  CHECK(loaded.config.clip_t == config.clip_t);

  // truncated file
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    std::ofstream out(dir.path() / "short.iicwgt", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_encoder(dir.path() / "short.iicwgt"), DataError);

  // wrong magic
  {
    std::ofstream out(dir.path() / "bad.iicwgt", std::ios::binary);
    out << "NOTMAGIC--------";
  }
  CHECK_THROWS_AS(load_encoder(dir.path() / "bad.iicwgt"), DataError);
  CHECK_THROWS_AS(load_encoder(dir.path() / "missing.iicwgt"), DataError);
}
