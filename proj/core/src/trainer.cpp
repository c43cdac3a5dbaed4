#include "iic/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "iic/clip_transforms.hpp"
#include "iic/config_file.hpp"
#include "iic/errors.hpp"

namespace iic {

namespace {

// Stream tags keep the derived seed spaces of unrelated draws disjoint.
constexpr std::uint64_t kTagParams = 0x70726d;   // encoder init
constexpr std::uint64_t kTagBanks = 0x626e6b;    // bank init
constexpr std::uint64_t kTagEpoch = 0x65706f;    // epoch shuffles
constexpr std::uint64_t kTagWindow = 0x77696e;   // window offsets
constexpr std::uint64_t kTagItem = 0x69746d;     // per-item transforms
constexpr std::uint64_t kTagHead = 0x686561;     // classifier head init
constexpr std::uint64_t kTagFtEpoch = 0x666570;  // fine-tune shuffles
constexpr std::uint64_t kTagFtWin = 0x667769;    // fine-tune windows

}  // namespace

void validate_train_config(const TrainConfig& config) {
  validate_config(config.encoder);
  if (config.batch_size < 1)
    throw std::invalid_argument("batch_size must be positive");
  if (config.epochs < 0)
    throw std::invalid_argument("epochs must be non-negative");
  if (!(config.base_lr > 0))
    throw std::invalid_argument("base_lr must be positive");
  if (!(config.lr_decay > 0 && config.lr_decay < 1))
    throw std::invalid_argument("lr_decay must lie in (0, 1)");
  for (std::size_t i = 1; i < config.lr_milestones.size(); ++i)
    if (config.lr_milestones[i] <= config.lr_milestones[i - 1])
      throw std::invalid_argument("lr_milestones must be strictly increasing");
  if (config.k < 1) throw std::invalid_argument("k must be at least 1");
  if (!(config.tau > 0))
    throw std::invalid_argument("temperature must be positive");
  if (config.neg_gen.kind == NegGenKind::shuffle &&
      (config.neg_gen.n_subclips < 2 ||
       config.encoder.clip_t % config.neg_gen.n_subclips != 0))
    throw std::invalid_argument(
        "shuffle sub-clip count must be >= 2 and divide the clip length");
  if (!(config.sgd_momentum >= 0 && config.sgd_momentum < 1))
    throw std::invalid_argument("sgd_momentum must lie in [0, 1)");
  if (config.weight_decay < 0)
    throw std::invalid_argument("weight_decay must be non-negative");
  if (!(config.bank_momentum >= 0 && config.bank_momentum < 1))
    throw std::invalid_argument("bank_momentum must lie in [0, 1)");
  if (config.checkpoint_every < 0)
    throw std::invalid_argument("checkpoint_every must be non-negative");
}

TrainConfig train_config_from(const KeyValueConfig& kv) {
  TrainConfig c;
  c.encoder.in_channels =
      static_cast<int>(kv.get_int("encoder.in_channels", c.encoder.in_channels));
  c.encoder.stage_channels =
      kv.get_int_list("encoder.stage_channels", c.encoder.stage_channels);
  c.encoder.embedding_dim = static_cast<int>(
      kv.get_int("encoder.embedding_dim", c.encoder.embedding_dim));
  c.encoder.clip_t =
      static_cast<int>(kv.get_int("encoder.clip_t", c.encoder.clip_t));
  c.encoder.clip_h =
      static_cast<int>(kv.get_int("encoder.clip_h", c.encoder.clip_h));
  c.encoder.clip_w =
      static_cast<int>(kv.get_int("encoder.clip_w", c.encoder.clip_w));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.lr_milestones = kv.get_int_list("lr_milestones", c.lr_milestones);
  c.lr_decay = kv.get_double("lr_decay", c.lr_decay);
  c.k = static_cast<int>(kv.get_int("k", c.k));
  c.tau = kv.get_double("tau", c.tau);
  const std::string kind = kv.get_string("neg_gen.kind", "shuffle");
  if (kind == "shuffle")
    c.neg_gen.kind = NegGenKind::shuffle;
  else if (kind == "repeat")
    c.neg_gen.kind = NegGenKind::repeat;
  else
    throw DataError("neg_gen.kind must be repeat or shuffle, got '" + kind +
                    "'");
  c.neg_gen.n_subclips =
      static_cast<int>(kv.get_int("neg_gen.n_subclips", c.neg_gen.n_subclips));
  c.neg_gen.seed = kv.get_u64("neg_gen.seed", c.neg_gen.seed);
  c.ablate_intra_neg = kv.get_bool("ablate_intra_neg", c.ablate_intra_neg);
  const std::string view2 = kv.get_string("view2", "residual");
  if (view2 == "residual")
    c.view2 = View2Mode::residual;
  else if (view2 == "external")
    c.view2 = View2Mode::external;
  else
    throw DataError("view2 must be residual or external, got '" + view2 + "'");
  c.sgd_momentum = kv.get_double("sgd_momentum", c.sgd_momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.bank_momentum = kv.get_double("bank_momentum", c.bank_momentum);
  c.seed = kv.get_u64("seed", c.seed);
  c.out_dir = kv.get_string("out_dir", c.out_dir);
  c.checkpoint_every =
      static_cast<int>(kv.get_int("checkpoint_every", c.checkpoint_every));

  const std::vector<std::string> stray = kv.unused_keys();
  if (!stray.empty()) {
    std::string msg = "unknown config keys:";
    for (const std::string& key : stray) msg += " " + key;
    throw DataError(msg);
  }
  try {
    validate_train_config(c);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid training config: ") + e.what());
  }
  return c;
}

std::string train_config_echo(const TrainConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  auto list = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
      s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  os << "encoder.in_channels = " << c.encoder.in_channels << '\n'
     << "encoder.stage_channels = " << list(c.encoder.stage_channels) << '\n'
     << "encoder.embedding_dim = " << c.encoder.embedding_dim << '\n'
     << "encoder.clip_t = " << c.encoder.clip_t << '\n'
     << "encoder.clip_h = " << c.encoder.clip_h << '\n'
     << "encoder.clip_w = " << c.encoder.clip_w << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "epochs = " << c.epochs << '\n'
     << "base_lr = " << c.base_lr << '\n'
     << "lr_milestones = " << list(c.lr_milestones) << '\n'
     << "lr_decay = " << c.lr_decay << '\n'
     << "k = " << c.k << '\n'
     << "tau = " << c.tau << '\n'
     << "neg_gen.kind = "
     << (c.neg_gen.kind == NegGenKind::shuffle ? "shuffle" : "repeat") << '\n'
     << "neg_gen.n_subclips = " << c.neg_gen.n_subclips << '\n'
     << "neg_gen.seed = " << c.neg_gen.seed << '\n'
     << "ablate_intra_neg = " << (c.ablate_intra_neg ? "true" : "false")
     << '\n'
     << "view2 = " << (c.view2 == View2Mode::residual ? "residual" : "external")
     << '\n'
     << "sgd_momentum = " << c.sgd_momentum << '\n'
     << "weight_decay = " << c.weight_decay << '\n'
     << "bank_momentum = " << c.bank_momentum << '\n'
     << "seed = " << c.seed << '\n'
     << "out_dir = " << c.out_dir << '\n'
     << "checkpoint_every = " << c.checkpoint_every << '\n';
  return os.str();
}

double lr_at(int epoch, const TrainConfig& config) {
  int passed = 0;
  for (int m : config.lr_milestones)
    if (m <= epoch) ++passed;
  return config.base_lr * std::pow(config.lr_decay, passed);
}

void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              std::vector<double>& velocity, double lr, double momentum,
              double weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw std::invalid_argument("optimizer buffers must share one size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i] + weight_decay * params[i];
    params[i] -= lr * velocity[i];
  }
}

TrainState make_train_state(int dataset_size, const TrainConfig& config) {
  validate_train_config(config);
  if (dataset_size < 1) throw DataError("dataset is empty");
  if (config.k > dataset_size - 1)
    throw std::invalid_argument("k must be at most dataset size minus one");
  TrainState state;
  state.params =
      init_params(config.encoder, derive_seed(config.seed, kTagParams));
  state.banks = init_banks(dataset_size, config.encoder.embedding_dim,
                           derive_seed(config.seed, kTagBanks));
  state.velocity.assign(state.params.flat.size(), 0.0);
  return state;
}

namespace {

// Cuts the first T frames from a window as a clip (identical to make_view1
// but usable on an arbitrary starting window).
VideoClip window_head(const RawWindow& window, int T) {
  VideoClip clip;
  clip.source_video_id = window.video_index;
  clip.frames = Volume(T, window.frames.h, window.frames.w, window.frames.c);
  std::copy_n(window.frames.data.data(), clip.frames.data.size(),
              clip.frames.data.data());
  return clip;
}

}  // namespace

double train_iteration(TrainState& state, const std::vector<RawWindow>& batch,
                       const std::vector<RawWindow>* external_batch,
                       const TrainConfig& config) {
  if (batch.empty()) throw std::invalid_argument("batch is empty");
  const bool external = config.view2 == View2Mode::external;
  if (external && external_batch == nullptr)
    throw std::invalid_argument("view2=external requires an external batch");
  if (!external && external_batch != nullptr)
    throw std::invalid_argument("external batch given but view2=residual");
  if (external && external_batch->size() != batch.size())
    throw std::invalid_argument("external batch size mismatch");

  const int n_rows = state.banks.view1.rows;
  const int B = static_cast<int>(batch.size());
  const int H = config.encoder.clip_h, W = config.encoder.clip_w;
  const bool gen_neg = !config.ablate_intra_neg;
  const double inv_b = 1.0 / B;

  std::vector<double> grad(state.params.flat.size(), 0.0);
  std::vector<int> row_ids(B);
  std::vector<EmbeddingVector> v1s(B), v2s(B), vnegs(B);
  double loss_sum = 0;

  ActivationCache cache1, cache2;
  for (int b = 0; b < B; ++b) {
    const RawWindow& source = batch[b];
    if (source.video_index < 0 || source.video_index >= n_rows)
      throw std::out_of_range("batch index outside bank range");

    // Per-item stream; draw order is fixed: crop, intra-negative, then the
    // two negative draws.
    Rng item_rng(derive_seed(config.seed ^ mix_seed(config.neg_gen.seed),
                             kTagItem,
                             static_cast<std::uint64_t>(state.iteration),
                             static_cast<std::uint64_t>(b)));

    RawWindow win = source;
    RawWindow ext_win;
    if (external) ext_win = (*external_batch)[b];
    if (win.frames.h != H || win.frames.w != W) {
      if (win.frames.h < H || win.frames.w < W)
        throw DataError("window smaller than the encoder input");
      // One spatial window shared by both views.
      const int top = item_rng.uniform_int(0, win.frames.h - H);
      const int left = item_rng.uniform_int(0, win.frames.w - W);
      win = crop(win, top, left, H, W);
      if (external) ext_win = crop(ext_win, top, left, H, W);
    } else if (external &&
               (ext_win.frames.h != H || ext_win.frames.w != W)) {
      throw DataError("external window does not match the encoder input");
    }

    const VideoClip view1 = make_view1(win);
    const VideoClip view2 =
        external ? make_view1(ext_win) : make_residual_view(win);
    VideoClip neg_clip;
    if (gen_neg) neg_clip = make_intra_negative(view1, config.neg_gen, item_rng);

    const EmbeddingVector v1 = forward(state.params, view1, &cache1);
    const EmbeddingVector v2 = forward(state.params, view2, &cache2);
    EmbeddingVector vneg;
    if (gen_neg) vneg = forward(state.params, neg_clip, nullptr);

    NegativeDraw draw1 =
        sample_negatives(n_rows, config.k, source.video_index, item_rng);
    NegativeDraw draw2 =
        sample_negatives(n_rows, config.k, source.video_index, item_rng);
    if (!gen_neg) {
      draw1.indices_neg.clear();
      draw2.indices_neg.clear();
    }

    TotalLoss tl =
        total_loss(v1, v2, state.banks, draw1, draw2, config.tau);
    loss_sum += tl.loss;

    // Batch-mean gradient.
    for (double& g : tl.grad_v1) g *= inv_b;
    for (double& g : tl.grad_v2) g *= inv_b;
    backward(state.params, cache1, tl.grad_v1, grad);
    backward(state.params, cache2, tl.grad_v2, grad);

    row_ids[b] = source.video_index;
    v1s[b] = v1;
    v2s[b] = v2;
    if (gen_neg) vnegs[b] = std::move(vneg);
  }

  const double mean_loss = loss_sum * inv_b;
  if (!std::isfinite(mean_loss))
    throw NumericError("training loss is not finite at iteration " +
                       std::to_string(state.iteration));

  sgd_step(state.params.flat, grad, state.velocity, lr_at(state.epoch, config),
           config.sgd_momentum, config.weight_decay);

  // Banks take the embeddings computed before the step (Algorithm order:
  // the network update precedes the bank overwrite).
  for (int b = 0; b < B; ++b) {
    bank_update(state.banks.view1, row_ids[b], v1s[b], config.bank_momentum);
    bank_update(state.banks.view2, row_ids[b], v2s[b], config.bank_momentum);
    if (gen_neg)
      bank_update(state.banks.intra_neg, row_ids[b], vnegs[b],
                  config.bank_momentum);
  }

  state.loss_history.push_back({state.epoch, state.iteration, mean_loss});
  ++state.iteration;
  return mean_loss;
}

TrainState run_training(const LoadedDataset& data, const TrainConfig& config,
                        const LoadedDataset* external_view2,
                        std::ostream* progress) {
  validate_train_config(config);
  if (data.size() < 1) throw DataError("dataset is empty");
  const bool external = config.view2 == View2Mode::external;
  if (external) {
    if (!external_view2)
      throw std::invalid_argument("view2=external requires a second dataset");
    if (external_view2->size() != data.size())
      throw DataError("external view dataset must match the primary in size");
    if (external_view2->videos.front().frames.t !=
        data.videos.front().frames.t)
      throw DataError("external view videos must match frame counts");
  } else if (external_view2) {
    throw std::invalid_argument("external dataset given but view2=residual");
  }

  if (!config.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(config.out_dir, ec);
    if (ec || !std::filesystem::is_directory(config.out_dir))
      throw DataError("cannot create output directory: " + config.out_dir);
  }

  TrainState state = make_train_state(data.size(), config);
  const int n = data.size();
  const int T = config.encoder.clip_t;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    state.epoch = epoch;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, kTagEpoch,
                                static_cast<std::uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    const std::size_t epoch_start = state.loss_history.size();
    for (int start = 0; start < n; start += config.batch_size) {
      const int end = std::min(n, start + config.batch_size);
      const std::vector<int> idx(order.begin() + start, order.begin() + end);
      Rng window_rng(derive_seed(config.seed, kTagWindow,
                                 static_cast<std::uint64_t>(state.iteration)));
      std::vector<RawWindow> batch, ext_batch;
      if (external) {
        Rng window_rng_ext = window_rng;  // same offsets for both streams
        batch = load_batch(data, idx, T, window_rng);
        ext_batch = load_batch(*external_view2, idx, T, window_rng_ext);
      } else {
        batch = load_batch(data, idx, T, window_rng);
      }
      train_iteration(state, batch, external ? &ext_batch : nullptr, config);
    }

    if (progress) {
      double mean = 0;
      const std::size_t count = state.loss_history.size() - epoch_start;
      for (std::size_t i = epoch_start; i < state.loss_history.size(); ++i)
        mean += state.loss_history[i].loss;
      mean /= std::max<std::size_t>(1, count);
      *progress << "epoch " << epoch << "  mean loss " << mean << "  lr "
                << lr_at(epoch, config) << '\n';
    }

    if (!config.out_dir.empty() && config.checkpoint_every > 0 &&
        (epoch + 1) % config.checkpoint_every == 0) {
      std::ostringstream name;
      name << "encoder_epoch_" << std::setw(3) << std::setfill('0') << epoch
           << ".iicwgt";
      save_encoder(std::filesystem::path(config.out_dir) / name.str(),
                   state.params);
    }
  }
  state.epoch = config.epochs;

  if (!config.out_dir.empty()) {
    const std::filesystem::path out(config.out_dir);
    save_encoder(out / "encoder.iicwgt", state.params);
    save_banks(out / "banks.iicbnk", state.banks);
    write_loss_csv(out / "train_loss.csv", state.loss_history);
  }
  return state;
}

void write_loss_csv(const std::filesystem::path& path,
                    const std::vector<LossPoint>& history) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << "epoch,iteration,loss\n" << std::setprecision(17);
  for (const LossPoint& p : history)
    os << p.epoch << ',' << p.iteration << ',' << p.loss << '\n';
  os.flush();
  if (!os) throw DataError("write failed: " + path.string());
}

LinearHead init_head(int num_classes, int dim, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("head needs >= 2 classes");
  if (dim < 1) throw std::invalid_argument("head needs a positive dim");
  LinearHead head;
  head.num_classes = num_classes;
  head.dim = dim;
  head.w.resize(static_cast<std::size_t>(num_classes) * dim);
  head.b.assign(num_classes, 0.0);
  Rng rng(seed);
  const double s = std::sqrt(1.0 / dim);
  for (double& v : head.w) v = s * rng.normal();
  return head;
}

HeadGrad head_loss_and_grad(const LinearHead& head,
                            const std::vector<double>& feat, int label) {
  const int nc = head.num_classes, d = head.dim;
  if (static_cast<int>(feat.size()) != d)
    throw std::invalid_argument("feature dimension does not match head");
  if (label < 0 || label >= nc)
    throw std::out_of_range("label outside head class range");

  std::vector<double> logits(head.b);
  for (int c = 0; c < nc; ++c) {
    const double* wr = head.w.data() + static_cast<std::size_t>(c) * d;
    double acc = logits[c];
    for (int j = 0; j < d; ++j) acc += wr[j] * feat[j];
    logits[c] = acc;
  }

  HeadGrad out;
  out.predicted = static_cast<int>(
      std::max_element(logits.begin(), logits.end()) - logits.begin());
  const double mx = logits[out.predicted];
  double denom = 0;
  std::vector<double> probs(nc);
  for (int c = 0; c < nc; ++c) {
    probs[c] = std::exp(logits[c] - mx);
    denom += probs[c];
  }
  for (double& p : probs) p /= denom;
  out.loss = -(logits[label] - mx - std::log(denom));
  if (!std::isfinite(out.loss))
    throw NumericError("classifier loss is not finite");

  out.gw.assign(static_cast<std::size_t>(nc) * d, 0.0);
  out.gb.assign(nc, 0.0);
  out.gfeat.assign(d, 0.0);
  for (int c = 0; c < nc; ++c) {
    const double gz = probs[c] - (c == label ? 1.0 : 0.0);
    out.gb[c] = gz;
    double* gwr = out.gw.data() + static_cast<std::size_t>(c) * d;
    const double* wr = head.w.data() + static_cast<std::size_t>(c) * d;
    for (int j = 0; j < d; ++j) {
      gwr[j] = gz * feat[j];
      out.gfeat[j] += gz * wr[j];
    }
  }
  return out;
}

FinetuneConfig finetune_config_from(const KeyValueConfig& kv) {
  FinetuneConfig c;
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.lr = kv.get_double("lr", c.lr);
  c.sgd_momentum = kv.get_double("sgd_momentum", c.sgd_momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.freeze_encoder = kv.get_bool("freeze_encoder", c.freeze_encoder);
  c.num_classes = static_cast<int>(kv.get_int("num_classes", c.num_classes));
  c.seed = kv.get_u64("seed", c.seed);
  const std::vector<std::string> stray = kv.unused_keys();
  if (!stray.empty()) {
    std::string msg = "unknown config keys:";
    for (const std::string& key : stray) msg += " " + key;
    throw DataError(msg);
  }
  return c;
}

namespace {

RawWindow center_window(const StoredClip& video, int T, int video_index) {
  if (video.frames.t < T + 1)
    throw DataError("video too short for a " + std::to_string(T + 1) +
                    "-frame window");
  const int offset = (video.frames.t - (T + 1)) / 2;
  RawWindow win;
  win.video_index = video_index;
  win.frames = Volume(T + 1, video.frames.h, video.frames.w, video.frames.c);
  std::copy_n(&video.frames.data[video.frames.index(offset, 0, 0, 0)],
              win.frames.data.size(), win.frames.data.data());
  return win;
}

VideoClip view_for_mode(const RawWindow& win, FinetuneMode mode) {
  return mode == FinetuneMode::view1_rgb ? make_view1(win)
                                         : make_residual_view(win);
}

}  // namespace

FinetuneResult finetune_classifier(const EncoderParams& pretrained,
                                   const LoadedDataset& train,
                                   const LoadedDataset& test,
                                   FinetuneMode mode,
                                   const FinetuneConfig& config) {
  if (config.epochs < 0 || config.batch_size < 1 || !(config.lr > 0) ||
      config.weight_decay < 0 ||
      !(config.sgd_momentum >= 0 && config.sgd_momentum < 1))
    throw std::invalid_argument("invalid fine-tune config");
  if (train.size() < 1) throw DataError("training split is empty");
  {
    std::vector<int> distinct(train.labels);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()),
                   distinct.end());
    if (distinct.size() < 2)
      throw DataError("fine-tuning needs at least two distinct labels");
  }

  FinetuneResult out;
  out.params = pretrained;
  const int d = pretrained.config.embedding_dim;
  const int T = pretrained.config.clip_t;
  out.head =
      init_head(config.num_classes, d, derive_seed(config.seed, kTagHead));

  std::vector<double> vel_w(out.head.w.size(), 0.0);
  std::vector<double> vel_b(out.head.b.size(), 0.0);
  std::vector<double> vel_enc;
  if (!config.freeze_encoder) vel_enc.assign(out.params.flat.size(), 0.0);

  const int n = train.size();
  ActivationCache cache;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, kTagFtEpoch,
                                static_cast<std::uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    long long iter = static_cast<long long>(epoch) * ((n + config.batch_size - 1) / config.batch_size);
    for (int start = 0; start < n; start += config.batch_size, ++iter) {
      const int end = std::min(n, start + config.batch_size);
      const std::vector<int> idx(order.begin() + start, order.begin() + end);
      Rng window_rng(
          derive_seed(config.seed, kTagFtWin, static_cast<std::uint64_t>(iter)));
      const std::vector<RawWindow> batch =
          load_batch(train, idx, T, window_rng);

      const double inv_b = 1.0 / static_cast<double>(batch.size());
      std::vector<double> gw(out.head.w.size(), 0.0);
      std::vector<double> gb(out.head.b.size(), 0.0);
      std::vector<double> genc;
      if (!config.freeze_encoder) genc.assign(out.params.flat.size(), 0.0);

      for (const RawWindow& win : batch) {
        const int label = train.labels[win.video_index];
        if (label < 0 || label >= config.num_classes)
          throw DataError("training label outside the classifier range");
        const VideoClip clip = view_for_mode(win, mode);
        const EmbeddingVector e =
            forward(out.params, clip,
                    config.freeze_encoder ? nullptr : &cache);
        HeadGrad hg = head_loss_and_grad(out.head, e, label);
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += inv_b * hg.gw[i];
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += inv_b * hg.gb[i];
        if (!config.freeze_encoder) {
          for (double& g : hg.gfeat) g *= inv_b;
          backward(out.params, cache, hg.gfeat, genc);
        }
      }

      sgd_step(out.head.w, gw, vel_w, config.lr, config.sgd_momentum,
               config.weight_decay);
      sgd_step(out.head.b, gb, vel_b, config.lr, config.sgd_momentum,
               config.weight_decay);
      if (!config.freeze_encoder)
        sgd_step(out.params.flat, genc, vel_enc, config.lr,
                 config.sgd_momentum, config.weight_decay);
    }
  }

  // Deterministic center-window evaluation.
  auto evaluate = [&](const LoadedDataset& data, int* unseen) {
    if (data.size() == 0) return 0.0;
    int hits = 0;
    for (int i = 0; i < data.size(); ++i) {
      const RawWindow win = center_window(data.videos[i], T, i);
      const VideoClip clip = view_for_mode(win, mode);
      const EmbeddingVector e = forward(out.params, clip, nullptr);
      std::vector<double> logits(out.head.b);
      for (int c = 0; c < out.head.num_classes; ++c) {
        const double* wr =
            out.head.w.data() + static_cast<std::size_t>(c) * out.head.dim;
        for (int j = 0; j < out.head.dim; ++j) logits[c] += wr[j] * e[j];
      }
      const int pred = static_cast<int>(
          std::max_element(logits.begin(), logits.end()) - logits.begin());
      const int label = data.labels[i];
      if (label < 0 || label >= out.head.num_classes) {
        if (unseen) ++(*unseen);
        continue;  // cannot be predicted; counts as a miss
      }
      if (pred == label) ++hits;
    }
    return static_cast<double>(hits) / data.size();
  };
  out.train_accuracy = evaluate(train, nullptr);
  out.test_accuracy = evaluate(test, &out.unseen_eval_labels);
  return out;
}

}  // namespace iic
