#include "iic/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <string>

#include "iic/binary_io.hpp"
#include "iic/errors.hpp"
#include "iic/rng.hpp"

namespace iic {

void validate_config(const EncoderConfig& config) {
  if (config.in_channels != 1 && config.in_channels != 3)
    throw std::invalid_argument("in_channels must be 1 or 3");
  if (config.stage_channels.empty())
    throw std::invalid_argument("need at least one stage");
  for (int c : config.stage_channels)
    if (c < 1) throw std::invalid_argument("stage channels must be positive");
  if (config.embedding_dim < 2)
    throw std::invalid_argument("embedding_dim must be at least 2");
  if (config.clip_t < 2 || config.clip_h < 2 || config.clip_w < 2)
    throw std::invalid_argument("clip shape too small for the encoder");
  // Every stage except the last halves H and W exactly once.
  int h = config.clip_h, w = config.clip_w;
  const int pooled = static_cast<int>(config.stage_channels.size()) - 1;
  for (int s = 0; s < pooled; ++s) {
    if (h % 2 || w % 2)
      throw std::invalid_argument(
          "spatial dims must stay even through every pooling stage");
    h /= 2;
    w /= 2;
  }
}

EncoderPlan make_plan(const EncoderConfig& config) {
  validate_config(config);
  EncoderPlan plan;
  int t = config.clip_t, h = config.clip_h, w = config.clip_w;
  int cin = config.in_channels;
  std::size_t off = 0;
  const int n = static_cast<int>(config.stage_channels.size());
  for (int s = 0; s < n; ++s) {
    StagePlan st;
    st.cin = cin;
    st.cout = config.stage_channels[s];
    st.t_in = t;
    st.h_in = h;
    st.w_in = w;
    st.pooled = s + 1 < n;
    st.has_skip_proj = st.cin != st.cout;
    st.conv_a_w = off;
    off += 27u * static_cast<std::size_t>(st.cin) * st.cout;
    st.conv_a_b = off;
    off += st.cout;
    st.conv_b_w = off;
    off += 27u * static_cast<std::size_t>(st.cout) * st.cout;
    st.conv_b_b = off;
    off += st.cout;
    if (st.has_skip_proj) {
      st.skip_w = off;
      off += static_cast<std::size_t>(st.cin) * st.cout;
      st.skip_b = off;
      off += st.cout;
    }
    if (st.pooled) {
      st.pool_t = (t % 2 == 0 && t >= 2) ? 2 : 1;
      st.t_out = t / st.pool_t;
      st.h_out = h / 2;
      st.w_out = w / 2;
    } else {
      st.pool_t = 1;
      st.t_out = t;
      st.h_out = h;
      st.w_out = w;
    }
    t = st.t_out;
    h = st.h_out;
    w = st.w_out;
    cin = st.cout;
    plan.stages.push_back(st);
  }
  plan.feature_dim = cin;
  plan.proj_w = off;
  off += static_cast<std::size_t>(plan.feature_dim) * config.embedding_dim;
  plan.proj_b = off;
  off += config.embedding_dim;
  plan.total_params = off;
  return plan;
}

namespace {

// Remove each filter's mean over its 27 taps, per (cin, cout) pair. Layout
// [kt][kh][kw][cin][cout].
void center_conv_filters(std::vector<double>& flat, std::size_t off, int cin,
                         int cout) {
  for (int ci = 0; ci < cin; ++ci)
    for (int co = 0; co < cout; ++co) {
      double mean = 0;
      for (int p = 0; p < 27; ++p)
        mean += flat[off + (static_cast<std::size_t>(p) * cin + ci) * cout + co];
      mean /= 27.0;
      for (int p = 0; p < 27; ++p)
        flat[off + (static_cast<std::size_t>(p) * cin + ci) * cout + co] -= mean;
    }
}

// Remove each 1x1x1 output channel's mean over its input channels.
void center_skip_filters(std::vector<double>& flat, std::size_t off, int cin,
                         int cout) {
  for (int co = 0; co < cout; ++co) {
    double mean = 0;
    for (int ci = 0; ci < cin; ++ci)
      mean += flat[off + static_cast<std::size_t>(ci) * cout + co];
    mean /= cin;
    for (int ci = 0; ci < cin; ++ci)
      flat[off + static_cast<std::size_t>(ci) * cout + co] -= mean;
  }
}

}  // namespace

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  const EncoderPlan plan = make_plan(config);
  EncoderParams params;
  params.config = config;
  params.flat.assign(plan.total_params, 0.0);
  Rng rng(seed);
  auto fill = [&](std::size_t off, std::size_t n, double stddev) {
    for (std::size_t i = 0; i < n; ++i)
      params.flat[off + i] = stddev * rng.normal();
  };
  // He init on all weights; biases stay zero. Conv and skip filters are then
  // centered to zero DC response: without any normalization layers, filters
  // with nonzero tap sums turn the (nearly constant) background level into a
  // large shared component of every feature map, and global average pooling
  // amplifies it until all embeddings collapse into one narrow cone. The
  // centering costs a factor (1 - 1/taps) of variance, well inside the
  // fan-in scaling contract.
  for (const StagePlan& st : plan.stages) {
    const std::size_t na = 27u * static_cast<std::size_t>(st.cin) * st.cout;
    const std::size_t nb = 27u * static_cast<std::size_t>(st.cout) * st.cout;
    fill(st.conv_a_w, na, std::sqrt(2.0 / (27.0 * st.cin)));
    fill(st.conv_b_w, nb, std::sqrt(2.0 / (27.0 * st.cout)));
    center_conv_filters(params.flat, st.conv_a_w, st.cin, st.cout);
    center_conv_filters(params.flat, st.conv_b_w, st.cout, st.cout);
    if (st.has_skip_proj) {
      fill(st.skip_w, static_cast<std::size_t>(st.cin) * st.cout,
           std::sqrt(2.0 / st.cin));
      center_skip_filters(params.flat, st.skip_w, st.cin, st.cout);
    }
  }
  fill(plan.proj_w,
       static_cast<std::size_t>(plan.feature_dim) * config.embedding_dim,
       std::sqrt(2.0 / plan.feature_dim));
  return params;
}

namespace {

// 3x3x3 convolution, stride 1, zero padding 1. Kernel layout is
// [kt][kh][kw][cin][cout] so the innermost output-channel loop runs over
// contiguous memory.
void conv3x3x3(const Volume& in, const double* w, const double* b, int cout,
               Volume& out) {
  const int T = in.t, H = in.h, W = in.w, CI = in.c;
  for (int t = 0; t < T; ++t)
    for (int h = 0; h < H; ++h)
      for (int x = 0; x < W; ++x) {
        double* acc = &out.data[out.index(t, h, x, 0)];
        std::copy_n(b, cout, acc);
        for (int kt = 0; kt < 3; ++kt) {
          const int ti = t + kt - 1;
          if (ti < 0 || ti >= T) continue;
          for (int kh = 0; kh < 3; ++kh) {
            const int hi = h + kh - 1;
            if (hi < 0 || hi >= H) continue;
            for (int kw = 0; kw < 3; ++kw) {
              const int wi = x + kw - 1;
              if (wi < 0 || wi >= W) continue;
              const double* xrow = &in.data[in.index(ti, hi, wi, 0)];
              const double* wtap =
                  w + static_cast<std::size_t>((kt * 3 + kh) * 3 + kw) * CI *
                          cout;
              for (int ci = 0; ci < CI; ++ci) {
                const double xv = xrow[ci];
                const double* wr = wtap + static_cast<std::size_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) acc[co] += xv * wr[co];
              }
            }
          }
        }
      }
}

// Fused weight/bias/input gradient accumulation for conv3x3x3. gin may be
// null when the input gradient is not needed (first stage).
void conv3x3x3_backward(const Volume& in, const double* w, const Volume& gout,
                        int cout, double* gw, double* gb, Volume* gin) {
  const int T = in.t, H = in.h, W = in.w, CI = in.c;
  for (int t = 0; t < T; ++t)
    for (int h = 0; h < H; ++h)
      for (int x = 0; x < W; ++x) {
        const double* grow = &gout.data[gout.index(t, h, x, 0)];
        for (int co = 0; co < cout; ++co) gb[co] += grow[co];
        for (int kt = 0; kt < 3; ++kt) {
          const int ti = t + kt - 1;
          if (ti < 0 || ti >= T) continue;
          for (int kh = 0; kh < 3; ++kh) {
            const int hi = h + kh - 1;
            if (hi < 0 || hi >= H) continue;
            for (int kw = 0; kw < 3; ++kw) {
              const int wi = x + kw - 1;
              if (wi < 0 || wi >= W) continue;
              const double* xrow = &in.data[in.index(ti, hi, wi, 0)];
              double* ginrow =
                  gin ? &gin->data[gin->index(ti, hi, wi, 0)] : nullptr;
              const std::size_t base =
                  static_cast<std::size_t>((kt * 3 + kh) * 3 + kw) * CI * cout;
              for (int ci = 0; ci < CI; ++ci) {
                const double xv = xrow[ci];
                double* gwr = gw + base + static_cast<std::size_t>(ci) * cout;
                const double* wr =
                    w + base + static_cast<std::size_t>(ci) * cout;
                double acc = 0;
                for (int co = 0; co < cout; ++co) {
                  gwr[co] += xv * grow[co];
                  acc += wr[co] * grow[co];
                }
                if (ginrow) ginrow[ci] += acc;
              }
            }
          }
        }
      }
}

void conv1x1x1(const Volume& in, const double* w, const double* b, int cout,
               Volume& out) {
  const std::size_t n =
      static_cast<std::size_t>(in.t) * in.h * in.w;
  const int CI = in.c;
  for (std::size_t p = 0; p < n; ++p) {
    const double* xrow = &in.data[p * CI];
    double* acc = &out.data[p * cout];
    std::copy_n(b, cout, acc);
    for (int ci = 0; ci < CI; ++ci) {
      const double xv = xrow[ci];
      const double* wr = w + static_cast<std::size_t>(ci) * cout;
      for (int co = 0; co < cout; ++co) acc[co] += xv * wr[co];
    }
  }
}

void conv1x1x1_backward(const Volume& in, const double* w, const Volume& gout,
                        int cout, double* gw, double* gb, Volume* gin) {
  const std::size_t n =
      static_cast<std::size_t>(in.t) * in.h * in.w;
  const int CI = in.c;
  for (std::size_t p = 0; p < n; ++p) {
    const double* xrow = &in.data[p * CI];
    const double* grow = &gout.data[p * cout];
    double* ginrow = gin ? &gin->data[p * CI] : nullptr;
    for (int co = 0; co < cout; ++co) gb[co] += grow[co];
    for (int ci = 0; ci < CI; ++ci) {
      const double xv = xrow[ci];
      double* gwr = gw + static_cast<std::size_t>(ci) * cout;
      const double* wr = w + static_cast<std::size_t>(ci) * cout;
      double acc = 0;
      for (int co = 0; co < cout; ++co) {
        gwr[co] += xv * grow[co];
        acc += wr[co] * grow[co];
      }
      if (ginrow) ginrow[ci] += acc;
    }
  }
}

// Average pooling over non-overlapping (pt, 2, 2) windows; shapes are
// validated to tile exactly.
void avgpool(const Volume& in, int pt, Volume& out) {
  const double inv = 1.0 / (pt * 4);
  const int C = in.c;
  for (int to = 0; to < out.t; ++to)
    for (int ho = 0; ho < out.h; ++ho)
      for (int wo = 0; wo < out.w; ++wo) {
        double* acc = &out.data[out.index(to, ho, wo, 0)];
        std::fill_n(acc, C, 0.0);
        for (int dt = 0; dt < pt; ++dt)
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw) {
              const double* row = &in.data[in.index(to * pt + dt, ho * 2 + dh,
                                                    wo * 2 + dw, 0)];
              for (int c = 0; c < C; ++c) acc[c] += row[c];
            }
        for (int c = 0; c < C; ++c) acc[c] *= inv;
      }
}

void avgpool_backward(const Volume& gout, int pt, Volume& gin) {
  const double inv = 1.0 / (pt * 4);
  const int C = gin.c;
  for (int to = 0; to < gout.t; ++to)
    for (int ho = 0; ho < gout.h; ++ho)
      for (int wo = 0; wo < gout.w; ++wo) {
        const double* grow = &gout.data[gout.index(to, ho, wo, 0)];
        for (int dt = 0; dt < pt; ++dt)
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw) {
              double* row = &gin.data[gin.index(to * pt + dt, ho * 2 + dh,
                                                wo * 2 + dw, 0)];
              for (int c = 0; c < C; ++c) row[c] += grow[c] * inv;
            }
      }
}

void relu_inplace(Volume& v) {
  for (double& x : v.data)
    if (x < 0) x = 0;
}

}  // namespace

EmbeddingVector forward(const EncoderParams& params, const VideoClip& clip,
                        ActivationCache* cache) {
  const EncoderPlan plan = make_plan(params.config);
  if (params.flat.size() != plan.total_params)
    throw std::invalid_argument("parameter vector does not match config");
  const Volume& frames = clip.frames;
  if (frames.t != params.config.clip_t || frames.h != params.config.clip_h ||
      frames.w != params.config.clip_w || frames.c != params.config.in_channels)
    throw std::invalid_argument("clip shape does not match encoder config");

  if (cache) {
    cache->stages.clear();
    cache->stages.reserve(plan.stages.size());
  }

  const double* flat = params.flat.data();
  const int d = params.config.embedding_dim;
  std::vector<double> feat;

  Volume x = frames;
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const StagePlan& st = plan.stages[s];
    Volume a_pre(st.t_in, st.h_in, st.w_in, st.cout);
    conv3x3x3(x, flat + st.conv_a_w, flat + st.conv_a_b, st.cout, a_pre);
    Volume a = a_pre;
    relu_inplace(a);
    Volume sum(st.t_in, st.h_in, st.w_in, st.cout);
    conv3x3x3(a, flat + st.conv_b_w, flat + st.conv_b_b, st.cout, sum);
    if (st.has_skip_proj) {
      Volume skip(st.t_in, st.h_in, st.w_in, st.cout);
      conv1x1x1(x, flat + st.skip_w, flat + st.skip_b, st.cout, skip);
      for (std::size_t i = 0; i < sum.data.size(); ++i)
        sum.data[i] += skip.data[i];
    } else {
      for (std::size_t i = 0; i < sum.data.size(); ++i)
        sum.data[i] += x.data[i];
    }

    Volume next;
    if (st.pooled) {
      Volume y = sum;
      relu_inplace(y);
      next = Volume(st.t_out, st.h_out, st.w_out, st.cout);
      avgpool(y, st.pool_t, next);
    } else {
      // Global average pool over the residual sum itself. Staying ahead of
      // the ReLU keeps the pooled feature signed instead of collapsing all
      // embeddings into the positive orthant.
      feat.assign(st.cout, 0.0);
      const std::size_t positions =
          static_cast<std::size_t>(st.t_in) * st.h_in * st.w_in;
      for (std::size_t p = 0; p < positions; ++p) {
        const double* row = &sum.data[p * st.cout];
        for (int c = 0; c < st.cout; ++c) feat[c] += row[c];
      }
      for (double& v : feat) v /= static_cast<double>(positions);
    }

    if (cache)
      cache->stages.push_back(StageCache{std::move(x), std::move(a_pre),
                                         std::move(a), std::move(sum)});
    x = std::move(next);
  }

  const double* wp = flat + plan.proj_w;
  const double* bp = flat + plan.proj_b;
  std::vector<double> z(bp, bp + d);
  for (int f = 0; f < plan.feature_dim; ++f) {
    const double xv = feat[f];
    const double* wr = wp + static_cast<std::size_t>(f) * d;
    for (int j = 0; j < d; ++j) z[j] += xv * wr[j];
  }

  double norm2 = 0;
  for (double v : z) norm2 += v * v;
  const double norm = std::sqrt(norm2);
  if (!(norm > 1e-12))
    throw NumericError("degenerate embedding norm before normalization");
  EmbeddingVector e(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) e[j] = z[j] / norm;

  if (cache) {
    cache->gap = std::move(feat);
    cache->z = std::move(z);
    cache->embedding = e;
    cache->z_norm = norm;
    cache->params_stamp = params_stamp(params);
  }
  return e;
}

void backward(const EncoderParams& params, const ActivationCache& cache,
              const std::vector<double>& grad_embedding,
              std::vector<double>& grad) {
  const EncoderPlan plan = make_plan(params.config);
  if (grad.empty()) grad.assign(plan.total_params, 0.0);
  if (grad.size() != plan.total_params)
    throw std::invalid_argument("gradient buffer has wrong size");
  if (cache.params_stamp != params_stamp(params))
    throw std::invalid_argument("stale activation cache");
  if (cache.stages.size() != plan.stages.size() ||
      grad_embedding.size() != cache.embedding.size())
    throw std::invalid_argument("cache does not match config");

  const double* flat = params.flat.data();
  const int d = params.config.embedding_dim;
  const int F = plan.feature_dim;

  // Normalization: g_z = (g_e - (e . g_e) e) / |z|.
  double dot = 0;
  for (int j = 0; j < d; ++j) dot += cache.embedding[j] * grad_embedding[j];
  std::vector<double> gz(d);
  for (int j = 0; j < d; ++j)
    gz[j] = (grad_embedding[j] - dot * cache.embedding[j]) / cache.z_norm;

  // Projection layer.
  const double* wp = flat + plan.proj_w;
  double* gwp = grad.data() + plan.proj_w;
  double* gbp = grad.data() + plan.proj_b;
  for (int j = 0; j < d; ++j) gbp[j] += gz[j];
  std::vector<double> gfeat(F, 0.0);
  for (int f = 0; f < F; ++f) {
    const double xv = cache.gap[f];
    double* gwr = gwp + static_cast<std::size_t>(f) * d;
    const double* wr = wp + static_cast<std::size_t>(f) * d;
    double acc = 0;
    for (int j = 0; j < d; ++j) {
      gwr[j] += xv * gz[j];
      acc += wr[j] * gz[j];
    }
    gfeat[f] = acc;
  }

  const int n_stages = static_cast<int>(plan.stages.size());
  Volume gx_next;  // gradient wrt the input of stage s+1
  for (int s = n_stages - 1; s >= 0; --s) {
    const StagePlan& st = plan.stages[s];
    const StageCache& sc = cache.stages[s];

    Volume gsum;
    if (s == n_stages - 1) {
      // Global average pooling spreads the feature gradient uniformly.
      gsum = Volume(st.t_in, st.h_in, st.w_in, st.cout);
      const std::size_t positions =
          static_cast<std::size_t>(st.t_in) * st.h_in * st.w_in;
      const double inv = 1.0 / static_cast<double>(positions);
      for (std::size_t p = 0; p < positions; ++p) {
        double* row = &gsum.data[p * st.cout];
        for (int c = 0; c < st.cout; ++c) row[c] = gfeat[c] * inv;
      }
    } else {
      Volume gy(st.t_in, st.h_in, st.w_in, st.cout);
      avgpool_backward(gx_next, st.pool_t, gy);
      for (std::size_t i = 0; i < gy.data.size(); ++i)
        if (sc.sum.data[i] <= 0) gy.data[i] = 0;
      gsum = std::move(gy);
    }

    const bool need_gx = s > 0;
    Volume gx;
    if (need_gx) gx = Volume(st.t_in, st.h_in, st.w_in, st.cin);

    if (st.has_skip_proj) {
      conv1x1x1_backward(sc.x_in, flat + st.skip_w, gsum, st.cout,
                         grad.data() + st.skip_w, grad.data() + st.skip_b,
                         need_gx ? &gx : nullptr);
    } else if (need_gx) {
      for (std::size_t i = 0; i < gx.data.size(); ++i)
        gx.data[i] += gsum.data[i];
    }

    Volume ga(st.t_in, st.h_in, st.w_in, st.cout);
    conv3x3x3_backward(sc.a, flat + st.conv_b_w, gsum, st.cout,
                       grad.data() + st.conv_b_w, grad.data() + st.conv_b_b,
                       &ga);
    for (std::size_t i = 0; i < ga.data.size(); ++i)
      if (sc.a_pre.data[i] <= 0) ga.data[i] = 0;
    conv3x3x3_backward(sc.x_in, flat + st.conv_a_w, ga, st.cout,
                       grad.data() + st.conv_a_w, grad.data() + st.conv_a_b,
                       need_gx ? &gx : nullptr);

    gx_next = std::move(gx);
  }
}

std::uint64_t params_stamp(const EncoderParams& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  const std::size_t n = params.flat.size();
  mix(n);
  const std::size_t stride = std::max<std::size_t>(1, n / 64);
  for (std::size_t i = 0; i < n; i += stride)
    mix(std::bit_cast<std::uint64_t>(params.flat[i]));
  if (n) mix(std::bit_cast<std::uint64_t>(params.flat[n - 1]));
  return h;
}

namespace {
constexpr std::string_view kWeightsMagic = "IICWGT1";
}

void save_encoder(const std::filesystem::path& path,
                  const EncoderParams& params) {
  const EncoderPlan plan = make_plan(params.config);
  if (params.flat.size() != plan.total_params)
    throw std::invalid_argument("parameter vector does not match config");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  bin::write_magic(os, kWeightsMagic);
  const EncoderConfig& c = params.config;
  bin::write_u32(os, static_cast<std::uint32_t>(c.in_channels));
  bin::write_u32(os, static_cast<std::uint32_t>(c.stage_channels.size()));
  for (int ch : c.stage_channels)
    bin::write_u32(os, static_cast<std::uint32_t>(ch));
  bin::write_u32(os, static_cast<std::uint32_t>(c.embedding_dim));
  bin::write_u32(os, static_cast<std::uint32_t>(c.clip_t));
  bin::write_u32(os, static_cast<std::uint32_t>(c.clip_h));
  bin::write_u32(os, static_cast<std::uint32_t>(c.clip_w));
  bin::write_u64(os, params.flat.size());
  bin::write_f64_seq(os, params.flat.data(), params.flat.size());
  os.flush();
  if (!os) throw DataError("write failed: " + path.string());
}

EncoderParams load_encoder(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  bin::expect_magic(is, kWeightsMagic, "encoder checkpoint");
  EncoderConfig c;
  c.in_channels = static_cast<int>(bin::read_u32(is, "in_channels"));
  const std::uint32_t n_stages = bin::read_u32(is, "stage count");
  if (n_stages < 1 || n_stages > 64)
    throw DataError("encoder checkpoint has implausible stage count");
  c.stage_channels.resize(n_stages);
  for (std::uint32_t s = 0; s < n_stages; ++s)
    c.stage_channels[s] = static_cast<int>(bin::read_u32(is, "stage channels"));
  c.embedding_dim = static_cast<int>(bin::read_u32(is, "embedding_dim"));
  c.clip_t = static_cast<int>(bin::read_u32(is, "clip_t"));
  c.clip_h = static_cast<int>(bin::read_u32(is, "clip_h"));
  c.clip_w = static_cast<int>(bin::read_u32(is, "clip_w"));

  EncoderPlan plan;
  try {
    plan = make_plan(c);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("encoder checkpoint config invalid: ") +
                    e.what());
  }
  const std::uint64_t count = bin::read_u64(is, "parameter count");
  if (count != plan.total_params)
    throw DataError("encoder checkpoint parameter count mismatch");
  EncoderParams params;
  params.config = std::move(c);
  params.flat.resize(count);
  bin::read_f64_seq(is, params.flat.data(), params.flat.size(), "parameters");
  bin::expect_eof(is, "parameters");
  for (double v : params.flat)
    if (!std::isfinite(v))
      throw DataError("encoder checkpoint contains non-finite parameter");
  return params;
}

}  // namespace iic
