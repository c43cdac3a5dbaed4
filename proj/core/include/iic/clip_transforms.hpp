#pragma once

#include "iic/clip.hpp"
#include "iic/rng.hpp"

namespace iic {

// Anchor RGB view: the first T frames of a (T+1)-frame window, verbatim.
VideoClip make_view1(const RawWindow& window);

// Residual view: frame t = window[t+1] - window[t], t = 0..T-1.
// Values land in [-1,1]; a static window yields an all-zero clip.
VideoClip make_residual_view(const RawWindow& window);

// One frame chosen uniformly at random, repeated T times.
VideoClip intra_negative_repeat(const VideoClip& clip, Rng& rng);

// Splits the clip into spec.n_subclips contiguous equal-length sub-clips and
// reorders them by a uniformly drawn non-identity permutation. The frame
// multiset is preserved; the output never equals the input arrangement.
VideoClip intra_negative_shuffle(const VideoClip& clip, const NegGenSpec& spec,
                                 Rng& rng);

// Dispatch on spec.kind.
VideoClip make_intra_negative(const VideoClip& clip, const NegGenSpec& spec,
                              Rng& rng);

// Fixed-offset spatial crop applied to every frame.
VideoClip crop(const VideoClip& clip, int top, int left, int out_h, int out_w);
RawWindow crop(const RawWindow& window, int top, int left, int out_h,
               int out_w);

// Temporally consistent random crop: one (top,left) offset for all frames.
VideoClip random_crop(const VideoClip& clip, int out_h, int out_w, Rng& rng);
RawWindow random_crop(const RawWindow& window, int out_h, int out_w, Rng& rng);

}  // namespace iic
