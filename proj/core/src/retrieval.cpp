#include "iic/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "iic/binary_io.hpp"
#include "iic/clip_transforms.hpp"
#include "iic/errors.hpp"

namespace iic {

const std::vector<int> kDefaultRetrievalKs = {1, 5, 10, 20, 50};

namespace {

double norm_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

RawWindow window_at(const StoredClip& video, int offset, int T) {
  RawWindow win;
  win.video_index = static_cast<int>(video.video_id);
  win.frames = Volume(T + 1, video.frames.h, video.frames.w, video.frames.c);
  std::copy_n(&video.frames.data[video.frames.index(offset, 0, 0, 0)],
              win.frames.data.size(), win.frames.data.data());
  return win;
}

}  // namespace

std::vector<FeatureRecord> extract_features(const EncoderParams& params,
                                            const LoadedDataset& data,
                                            FeatureView view,
                                            int clips_per_video) {
  if (clips_per_video < 1)
    throw std::invalid_argument("clips_per_video must be at least 1");
  const int T = params.config.clip_t;
  const int H = params.config.clip_h, W = params.config.clip_w;

  std::vector<FeatureRecord> out;
  out.reserve(data.videos.size());
  for (const StoredClip& video : data.videos) {
    if (video.frames.t < T + 1)
      throw DataError("video " + std::to_string(video.video_id) +
                      " too short for feature extraction");
    const int max_off = video.frames.t - (T + 1);
    std::vector<int> offsets(clips_per_video);
    if (clips_per_video == 1) {
      offsets[0] = max_off / 2;
    } else {
      for (int j = 0; j < clips_per_video; ++j)
        offsets[j] = static_cast<int>(
            std::llround(static_cast<double>(j) * max_off /
                         (clips_per_video - 1)));
    }

    std::vector<double> mean(params.config.embedding_dim, 0.0);
    for (int offset : offsets) {
      RawWindow win = window_at(video, offset, T);
      if (win.frames.h != H || win.frames.w != W) {
        if (win.frames.h < H || win.frames.w < W)
          throw DataError("video frames smaller than the encoder input");
        win = crop(win, (win.frames.h - H) / 2, (win.frames.w - W) / 2, H, W);
      }
      const VideoClip clip = view == FeatureView::view1_rgb
                                 ? make_view1(win)
                                 : make_residual_view(win);
      const EmbeddingVector e = forward(params, clip, nullptr);
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += e[j];
    }
    for (double& v : mean) v /= clips_per_video;
    const double norm = norm_of(mean);
    if (!(norm > 1e-12))
      throw NumericError("degenerate pooled feature for video " +
                         std::to_string(video.video_id));
    for (double& v : mean) v /= norm;

    FeatureRecord rec;
    rec.video_id = video.video_id;
    rec.class_label = video.class_label;
    rec.feature = std::move(mean);
    out.push_back(std::move(rec));
  }
  return out;
}

FeatureRecord joint_feature(const FeatureRecord& f1, const FeatureRecord& f2) {
  if (f1.video_id != f2.video_id)
    throw std::invalid_argument("joint feature requires matching video ids");
  if (f1.class_label != f2.class_label)
    throw std::invalid_argument("joint feature requires matching labels");
  FeatureRecord out;
  out.video_id = f1.video_id;
  out.class_label = f1.class_label;
  out.feature.reserve(f1.feature.size() + f2.feature.size());
  out.feature.insert(out.feature.end(), f1.feature.begin(), f1.feature.end());
  out.feature.insert(out.feature.end(), f2.feature.begin(), f2.feature.end());
  return out;
}

RetrievalReport knn_retrieve(const std::vector<FeatureRecord>& queries,
                             const std::vector<FeatureRecord>& gallery,
                             const std::vector<int>& k_list) {
  if (gallery.empty()) throw std::invalid_argument("gallery is empty");
  if (k_list.empty()) throw std::invalid_argument("k list is empty");
  for (int k : k_list)
    if (k < 1) throw std::invalid_argument("retrieval k must be positive");
  const std::size_t dim = gallery.front().feature.size();
  for (const FeatureRecord& g : gallery)
    if (g.feature.size() != dim)
      throw std::invalid_argument("gallery feature dimension mismatch");
  for (const FeatureRecord& q : queries)
    if (q.feature.size() != dim)
      throw std::invalid_argument("query feature dimension mismatch");

  const int G = static_cast<int>(gallery.size());
  std::vector<double> gnorms(G);
  for (int i = 0; i < G; ++i) {
    gnorms[i] = norm_of(gallery[i].feature);
    if (!(gnorms[i] > 1e-12))
      throw NumericError("gallery feature has degenerate norm");
  }

  RetrievalReport report;
  report.k_list = k_list;
  report.accuracy.assign(k_list.size(), 0.0);
  report.ranked.reserve(queries.size());

  std::vector<int> hits(k_list.size(), 0);
  std::vector<double> sims(G);
  std::vector<int> order(G);
  for (const FeatureRecord& q : queries) {
    const double qnorm = norm_of(q.feature);
    if (!(qnorm > 1e-12))
      throw NumericError("query feature has degenerate norm");
    for (int i = 0; i < G; ++i) {
      double dot = 0;
      const std::vector<double>& g = gallery[i].feature;
      for (std::size_t j = 0; j < dim; ++j) dot += q.feature[j] * g[j];
      sims[i] = dot / (qnorm * gnorms[i]);
    }
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (sims[a] != sims[b]) return sims[a] > sims[b];
      return gallery[a].video_id < gallery[b].video_id;
    });

    std::vector<std::uint32_t> ranked(G);
    for (int i = 0; i < G; ++i) ranked[i] = gallery[order[i]].video_id;
    report.ranked.push_back(std::move(ranked));

    for (std::size_t j = 0; j < k_list.size(); ++j) {
      const int kk = std::min(k_list[j], G);
      bool hit = false;
      for (int i = 0; i < kk && !hit; ++i)
        hit = gallery[order[i]].class_label == q.class_label;
      if (hit) ++hits[j];
    }
  }

  if (!queries.empty())
    for (std::size_t j = 0; j < k_list.size(); ++j)
      report.accuracy[j] =
          static_cast<double>(hits[j]) / static_cast<double>(queries.size());
  return report;
}

std::string report_table(const std::vector<LabeledReport>& rows) {
  if (rows.empty()) throw std::invalid_argument("no reports to render");
  const std::vector<int>& ks = rows.front().report.k_list;
  for (const LabeledReport& row : rows)
    if (row.report.k_list != ks)
      throw std::invalid_argument("reports disagree on k list");
  std::ostringstream os;
  os << "view";
  for (int k : ks) os << ",top" << k;
  os << '\n';
  os.setf(std::ios::fixed);
  os.precision(1);
  for (const LabeledReport& row : rows) {
    os << row.label;
    for (double a : row.report.accuracy) os << ',' << 100.0 * a;
    os << '\n';
  }
  return os.str();
}

namespace {
constexpr std::string_view kFeatureMagic = "IICFTR1";
constexpr std::uint64_t kMaxFeatureElems = 1ull << 30;
}  // namespace

void save_features(const std::filesystem::path& path,
                   const std::vector<FeatureRecord>& records) {
  if (records.empty()) throw std::invalid_argument("no features to save");
  const std::size_t dim = records.front().feature.size();
  for (const FeatureRecord& r : records)
    if (r.feature.size() != dim)
      throw std::invalid_argument("feature dimension mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  bin::write_magic(os, kFeatureMagic);
  bin::write_u32(os, static_cast<std::uint32_t>(records.size()));
  bin::write_u32(os, static_cast<std::uint32_t>(dim));
  for (const FeatureRecord& r : records) {
    bin::write_u32(os, r.video_id);
    bin::write_u32(os, r.class_label);
    bin::write_f32_seq(os, r.feature.data(), dim);
  }
  os.flush();
  if (!os) throw DataError("write failed: " + path.string());
}

std::vector<FeatureRecord> load_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  bin::expect_magic(is, kFeatureMagic, "feature file");
  const std::uint32_t count = bin::read_u32(is, "feature count");
  const std::uint32_t dim = bin::read_u32(is, "feature dim");
  if (count < 1 || dim < 1) throw DataError("feature file has empty shape");
  if (static_cast<std::uint64_t>(count) * dim > kMaxFeatureElems)
    throw DataError("feature file header too large");
  std::vector<FeatureRecord> out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    out[i].video_id = bin::read_u32(is, "feature video_id");
    out[i].class_label = bin::read_u32(is, "feature label");
    out[i].feature.resize(dim);
    bin::read_f32_seq(is, out[i].feature.data(), dim, "feature values");
  }
  bin::expect_eof(is, "feature records");
  return out;
}

}  // namespace iic
