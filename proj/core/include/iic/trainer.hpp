#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "iic/clip.hpp"
#include "iic/contrastive.hpp"
#include "iic/datasets.hpp"
#include "iic/encoder.hpp"

namespace iic {

class KeyValueConfig;

enum class View2Mode { residual, external };

struct TrainConfig {
  EncoderConfig encoder;
  int batch_size = 16;
  int epochs = 30;
  double base_lr = 0.01;
  std::vector<int> lr_milestones = {15, 23};
  double lr_decay = 0.1;
  int k = 64;
  double tau = 0.07;
  NegGenSpec neg_gen{NegGenKind::shuffle, 4, 0};
  bool ablate_intra_neg = false;
  View2Mode view2 = View2Mode::residual;
  double sgd_momentum = 0.9;
  double weight_decay = 5e-4;
  double bank_momentum = 0.0;
  std::uint64_t seed = 42;

  // Artifact emission. Empty out_dir keeps training purely in memory;
  // checkpoint_every > 0 additionally writes epoch-stamped encoder files.
  std::string out_dir;
  int checkpoint_every = 0;
};

void validate_train_config(const TrainConfig& config);
TrainConfig train_config_from(const KeyValueConfig& kv);
std::string train_config_echo(const TrainConfig& config);

struct LossPoint {
  int epoch = 0;
  long long iteration = 0;
  double loss = 0;
};

struct TrainState {
  EncoderParams params;
  MemoryBanks banks;
  std::vector<double> velocity;
  int epoch = 0;
  long long iteration = 0;
  std::vector<LossPoint> loss_history;
};

// base_lr * decay^(number of milestones at or before epoch). A milestone m
// takes effect in epoch m itself.
double lr_at(int epoch, const TrainConfig& config);

void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              std::vector<double>& velocity, double lr, double momentum,
              double weight_decay);

// One optimization step over a batch of (T+1)-frame windows, following the
// fixed order: build views, generate intra-negatives, encode all three
// streams with the single shared encoder, sample negatives, evaluate the
// two-direction loss, step the optimizer, then overwrite bank rows with
// the fresh embeddings. Returns the batch-mean loss. external_batch must
// be non-null iff config.view2 == external, aligned with batch.
double train_iteration(TrainState& state, const std::vector<RawWindow>& batch,
                       const std::vector<RawWindow>* external_batch,
                       const TrainConfig& config);

TrainState make_train_state(int dataset_size, const TrainConfig& config);

// Full training loop: epochs x ceil(N / batch_size) iterations with a
// seeded shuffle per epoch. external_view2 supplies aligned view-2 clips
// when config.view2 == external. If config.out_dir is set, writes
// encoder.iicwgt, banks.iicbnk and train_loss.csv there at the end.
TrainState run_training(const LoadedDataset& data, const TrainConfig& config,
                        const LoadedDataset* external_view2 = nullptr,
                        std::ostream* progress = nullptr);

void write_loss_csv(const std::filesystem::path& path,
                    const std::vector<LossPoint>& history);

// Linear classification head and its cross-entropy pieces, exposed so the
// head gradient can be checked in isolation.
struct LinearHead {
  int num_classes = 0;
  int dim = 0;
  std::vector<double> w;  // num_classes x dim, row-major
  std::vector<double> b;  // num_classes
};

LinearHead init_head(int num_classes, int dim, std::uint64_t seed);

struct HeadGrad {
  double loss = 0;
  std::vector<double> gw, gb;
  std::vector<double> gfeat;
  int predicted = -1;
};

HeadGrad head_loss_and_grad(const LinearHead& head,
                            const std::vector<double>& feat, int label);

enum class FinetuneMode { view1_rgb, view2_modality };

struct FinetuneConfig {
  int epochs = 10;
  int batch_size = 16;
  double lr = 0.001;
  double sgd_momentum = 0.9;
  double weight_decay = 5e-4;
  bool freeze_encoder = false;
  int num_classes = 8;
  std::uint64_t seed = 7;
};

FinetuneConfig finetune_config_from(const KeyValueConfig& kv);

struct FinetuneResult {
  double train_accuracy = 0;
  double test_accuracy = 0;
  int unseen_eval_labels = 0;  // labels outside the head's class range
  EncoderParams params;
  LinearHead head;
};

// Supervised pass: attaches a linear head to the (pre-trained) encoder and
// trains with cross-entropy on the chosen view's modality. freeze_encoder
// limits updates to the head. Accuracy is measured on center windows.
FinetuneResult finetune_classifier(const EncoderParams& pretrained,
                                   const LoadedDataset& train,
                                   const LoadedDataset& test,
                                   FinetuneMode mode,
                                   const FinetuneConfig& config);

}  // namespace iic
