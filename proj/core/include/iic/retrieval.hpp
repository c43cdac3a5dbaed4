#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iic/datasets.hpp"
#include "iic/encoder.hpp"

namespace iic {

enum class FeatureView { view1_rgb, view2_res };

struct FeatureRecord {
  std::uint32_t video_id = 0;
  std::uint32_t class_label = 0;
  std::vector<double> feature;  // unit norm single-view, sqrt(2) joint
};

// Per-video descriptor: clips_per_video windows at evenly spaced temporal
// offsets (a single clip sits at the center), encoded and mean-pooled,
// then re-normalized. Frames wider than the encoder input are center
// cropped.
std::vector<FeatureRecord> extract_features(const EncoderParams& params,
                                            const LoadedDataset& data,
                                            FeatureView view,
                                            int clips_per_video);

// Concatenation [f1 | f2] for the same video.
FeatureRecord joint_feature(const FeatureRecord& f1, const FeatureRecord& f2);

struct RetrievalReport {
  std::vector<int> k_list;
  std::vector<double> accuracy;  // parallel to k_list, each in [0, 1]
  std::vector<std::vector<std::uint32_t>> ranked;  // per query, best first
};

// Exhaustive cosine nearest-neighbor search, queries against gallery. Ties
// rank the lower video_id first. A query scores a top-k hit when any of
// its k nearest gallery entries shares its class label.
RetrievalReport knn_retrieve(const std::vector<FeatureRecord>& queries,
                             const std::vector<FeatureRecord>& gallery,
                             const std::vector<int>& k_list);

extern const std::vector<int> kDefaultRetrievalKs;  // 1 5 10 20 50

struct LabeledReport {
  std::string label;
  RetrievalReport report;
};

// CSV with a header row and one row per report; accuracies rendered as
// percentages with one decimal.
std::string report_table(const std::vector<LabeledReport>& rows);

void save_features(const std::filesystem::path& path,
                   const std::vector<FeatureRecord>& records);
std::vector<FeatureRecord> load_features(const std::filesystem::path& path);

}  // namespace iic
