#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "iic/clip.hpp"
#include "iic/tensor.hpp"

namespace iic {

using EmbeddingVector = std::vector<double>;

// Small residual 3D conv encoder. Each stage is two 3x3x3 convolutions with
// a skip connection; stages (except the last) end in ReLU + average pooling
// that halves H and W and halves T while T stays even. The last stage's
// residual sum feeds global average pooling directly, keeping the pooled
// feature signed, then a linear projection and L2 normalization.
struct EncoderConfig {
  int in_channels = 3;
  std::vector<int> stage_channels = {8, 16, 32};
  int embedding_dim = 64;
  int clip_t = 8;
  int clip_h = 32;
  int clip_w = 32;
};

void validate_config(const EncoderConfig& config);

// Shapes and flat-parameter slice offsets resolved from a config. The skip
// projection exists only when a stage changes channel count.
struct StagePlan {
  int cin = 0, cout = 0;
  int t_in = 0, h_in = 0, w_in = 0;
  int t_out = 0, h_out = 0, w_out = 0;  // after this stage's pooling
  int pool_t = 1;                       // 1 or 2; spatial pool is always 2
  bool pooled = true;                   // false for the last stage
  bool has_skip_proj = false;
  std::size_t conv_a_w = 0, conv_a_b = 0;
  std::size_t conv_b_w = 0, conv_b_b = 0;
  std::size_t skip_w = 0, skip_b = 0;
};

struct EncoderPlan {
  std::vector<StagePlan> stages;
  int feature_dim = 0;  // channels entering global average pooling
  std::size_t proj_w = 0, proj_b = 0;
  std::size_t total_params = 0;
};

EncoderPlan make_plan(const EncoderConfig& config);

struct EncoderParams {
  EncoderConfig config;
  std::vector<double> flat;
};

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

struct StageCache {
  Volume x_in;   // stage input
  Volume a_pre;  // first conv pre-activation
  Volume a;      // relu(a_pre)
  Volume sum;    // second conv + skip, pre-ReLU
};

struct ActivationCache {
  std::vector<StageCache> stages;
  std::vector<double> gap;        // global average pooled feature
  std::vector<double> z;          // projection output, pre-normalization
  std::vector<double> embedding;  // z / |z|
  double z_norm = 0;
  std::uint64_t params_stamp = 0;
};

// Encode one clip. With cache == nullptr only the embedding is produced
// (inference path, no backward possible). Throws NumericError when the
// pre-normalization feature is degenerate (norm below 1e-12).
EmbeddingVector forward(const EncoderParams& params, const VideoClip& clip,
                        ActivationCache* cache);

// Accumulates d(loss)/d(params) into grad, given d(loss)/d(embedding).
// The cache must come from a forward call on the exact same params.
void backward(const EncoderParams& params, const ActivationCache& cache,
              const std::vector<double>& grad_embedding,
              std::vector<double>& grad);

std::uint64_t params_stamp(const EncoderParams& params);

void save_encoder(const std::filesystem::path& path,
                  const EncoderParams& params);
EncoderParams load_encoder(const std::filesystem::path& path);

}  // namespace iic
