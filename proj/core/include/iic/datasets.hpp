#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iic/clip.hpp"
#include "iic/clip_io.hpp"
#include "iic/rng.hpp"
#include "iic/tensor.hpp"

namespace iic {

class KeyValueConfig;

// Synthetic motion classes. Classes come in reversal pairs (cls ^ 1 is the
// time-reversed program of cls), so appearance statistics alone cannot
// separate a pair; only temporal order can.
enum class MotionClass : int {
  translate_up = 0,
  translate_down = 1,
  translate_left = 2,
  translate_right = 3,
  grow = 4,
  shrink = 5,
  rotate_ccw = 6,
  rotate_cw = 7,
};

MotionClass paired_class(MotionClass cls);
const char* motion_class_name(MotionClass cls);

enum class ShapeKind : int { square = 0, disc = 1, bar = 2 };

struct SyntheticSpec {
  int num_classes = 8;  // even, 2..8; prefix of the reversal-pair list
  int videos_per_class = 25;
  int frames_per_video = 12;
  int height = 32;
  int width = 32;
  double noise_sigma = 0.02;

  // Static per-video background clutter. Zero amplitude disables it.
  double bg_amplitude = 0.35;
  int bg_blob_count = 3;

  // Motion program magnitudes (per frame): pixels, relative scale, radians.
  double translate_speed_lo = 0.5;
  double translate_speed_hi = 1.2;
  double grow_rate_lo = 0.05;
  double grow_rate_hi = 0.10;
  double rotate_speed_lo = 0.15;
  double rotate_speed_hi = 0.35;

  double train_fraction = 0.8;
  std::uint64_t seed = 1234;
};

void validate_spec(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from(const KeyValueConfig& kv);
std::string synthetic_spec_echo(const SyntheticSpec& spec);

struct BackgroundBlob {
  double cy = 0, cx = 0, radius = 1;
  double color[3] = {0, 0, 0};
};

// Everything about one video except its class. Motion programs are
// parameterized around the clip's temporal midpoint, so rendering the
// paired class with the same latents gives exactly the reversed frames.
struct VideoLatents {
  ShapeKind shape = ShapeKind::square;
  double cy = 0, cx = 0;  // shape center at the midpoint, pixels
  double size = 4;        // half-extent at the midpoint
  double speed = 1;       // program rate; units depend on the class family
  double angle = 0;       // bar orientation (start angle for rotation)
  double color[3] = {1, 1, 1};
  std::vector<BackgroundBlob> bg;
};

VideoLatents draw_latents(const SyntheticSpec& spec, MotionClass cls,
                          Rng& rng);

// Noise-free render; bitwise deterministic in (spec, cls, latents).
Volume render_video(const SyntheticSpec& spec, MotionClass cls,
                    const VideoLatents& latents);

// render_video plus per-pixel Gaussian noise and a clamp to [0, 1].
Volume render_video_noisy(const SyntheticSpec& spec, MotionClass cls,
                          const VideoLatents& latents, Rng& noise_rng);

struct ManifestRecord {
  std::string rel_path;
  std::uint32_t video_id = 0;
  std::uint32_t class_label = 0;
  std::string split;  // "train" or "test"
};

struct DatasetManifest {
  std::filesystem::path root;  // directory the rel_paths resolve against
  std::vector<ManifestRecord> records;

  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

DatasetManifest generate_dataset(const SyntheticSpec& spec,
                                 const std::filesystem::path& out_dir);

// One split of a manifest pulled fully into memory. Videos keep the order
// of their manifest records; that position is the global index used for
// memory-bank addressing.
struct LoadedDataset {
  std::vector<StoredClip> videos;
  std::vector<int> labels;
  int size() const { return static_cast<int>(videos.size()); }
};

LoadedDataset load_split(const DatasetManifest& manifest,
                         const std::string& split);

// (T+1)-frame windows at seeded-random temporal offsets. Window i carries
// indices[i] in its video_index field.
std::vector<RawWindow> load_batch(const LoadedDataset& data,
                                  const std::vector<int>& indices, int T,
                                  Rng& rng);

}  // namespace iic
