#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "iic/encoder.hpp"
#include "iic/rng.hpp"

namespace iic {

enum class BankRole : int { view1 = 0, view2 = 1, intra_neg = 2 };

// Per-video feature store, one row per dataset index. Rows hold the
// embeddings written in earlier iterations and act as constants in the
// loss (no gradient flows into them).
struct MemoryBank {
  BankRole role = BankRole::view1;
  int rows = 0;
  int dim = 0;
  std::vector<double> data;  // row-major rows x dim

  const double* row(int i) const;
  double* row(int i);
};

struct MemoryBanks {
  MemoryBank view1, view2, intra_neg;
};

MemoryBanks init_banks(int n, int d, std::uint64_t seed);

// Negative index sets for one anchored direction. view-2 indices never hit
// the positive index; the intra-negative draw may (the anchor's own stale
// intra-negative is a legitimate negative).
struct NegativeDraw {
  int positive_index = 0;
  std::vector<int> indices_view2;  // k entries
  std::vector<int> indices_neg;    // k+1 entries; empty in ablation mode
};

NegativeDraw sample_negatives(int n, int k, int i, Rng& rng);

// exp(cos(a, b) / tau); inputs are re-normalized defensively.
double critic(const EmbeddingVector& a, const EmbeddingVector& b, double tau);

struct DirectionalLoss {
  double loss = 0;
  std::vector<double> grad_anchor;
  std::vector<double> grad_positive;
  int denom_terms = 0;  // 1 + k + (k+1) in the full configuration
};

// Softmax-style contrastive loss for one direction. The denominator runs
// over the fresh positive, the other view's bank rows at indices_view2,
// and the intra-negative bank rows at indices_neg, in that order. Scores
// are max-shifted before exponentiation. Gradients are exact derivatives
// of the full cosine in anchor and positive; bank rows are constants.
DirectionalLoss loss_one_direction(const EmbeddingVector& anchor,
                                   const EmbeddingVector& positive,
                                   const MemoryBank& bank_other,
                                   const MemoryBank& bank_neg,
                                   const NegativeDraw& draw, double tau);

struct TotalLoss {
  double loss = 0;
  std::vector<double> grad_v1;
  std::vector<double> grad_v2;
  DirectionalLoss dir1, dir2;
};

// Symmetric two-direction loss: v1 anchored against the view-2 bank plus
// intra-negatives, and v2 anchored against the view-1 bank plus the same
// intra-negative bank, each with its own draw.
TotalLoss total_loss(const EmbeddingVector& v1, const EmbeddingVector& v2,
                     const MemoryBanks& banks, const NegativeDraw& draw1,
                     const NegativeDraw& draw2, double tau);

// Bank rows gathered for one draw, plus the concatenations the update rule
// is phrased in: cat1 = [view1 rows ; neg rows], cat2 = [view2 rows ; neg
// rows], both row-major with (k) + (k+1) rows.
struct FetchedWeights {
  int dim = 0;
  std::vector<double> w1, w2, wneg;
  std::vector<double> cat1, cat2;
};

FetchedWeights fetch_weights(const MemoryBanks& banks,
                             const NegativeDraw& draw);

// Row overwrite. momentum = 0 stores v exactly; momentum in (0, 1) blends
// old and new then re-normalizes to the unit sphere.
void bank_update(MemoryBank& bank, int i, const EmbeddingVector& v,
                 double momentum = 0.0);

void save_bank(std::ostream& os, const MemoryBank& bank);
MemoryBank load_bank(std::istream& is);
void save_banks(const std::filesystem::path& path, const MemoryBanks& banks);
MemoryBanks load_banks(const std::filesystem::path& path);

}  // namespace iic
