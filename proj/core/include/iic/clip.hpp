#pragma once

#include <cstdint>

#include "iic/tensor.hpp"

namespace iic {

// A video clip: T frames of H x W x C, values in [0,1] for raw views and
// [-1,1] for residual views.
struct VideoClip {
  Volume frames;
  int clip_id = 0;
  int source_video_id = 0;
};

// T+1 consecutive frames cut from a source video. One frame longer than the
// clip length so a T-frame residual view can be formed next to the T-frame
// raw view.
struct RawWindow {
  Volume frames;
  int video_index = -1;  // position of the source video in its dataset split
};

enum class NegGenKind { repeat, shuffle };

// How intra-negative clips are produced from the anchor view.
struct NegGenSpec {
  NegGenKind kind = NegGenKind::repeat;
  int n_subclips = 4;  // shuffle only; must divide the clip length
  std::uint64_t seed = 0;
};

// Shape sanity for raw clips; throws std::invalid_argument on violation.
void validate_clip_shape(const Volume& frames);

}  // namespace iic
