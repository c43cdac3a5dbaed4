#include "iic/clip_transforms.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace iic {

void validate_clip_shape(const Volume& frames) {
  if (frames.t < 2) throw std::invalid_argument("clip needs at least 2 frames");
  if (frames.h < 4 || frames.w < 4)
    throw std::invalid_argument("clip frames must be at least 4x4");
  if (frames.c != 1 && frames.c != 3)
    throw std::invalid_argument("clip channel count must be 1 or 3");
}

namespace {

void require_window(const RawWindow& window) {
  if (window.frames.t < 3)
    throw std::invalid_argument("window too short: need at least 3 frames");
}

}  // namespace

VideoClip make_view1(const RawWindow& window) {
  require_window(window);
  const Volume& src = window.frames;
  const int t_out = src.t - 1;
  VideoClip clip;
  clip.frames = Volume(t_out, src.h, src.w, src.c);
  std::copy_n(src.data.begin(), clip.frames.size(), clip.frames.data.begin());
  clip.source_video_id = window.video_index;
  return clip;
}

VideoClip make_residual_view(const RawWindow& window) {
  require_window(window);
  const Volume& src = window.frames;
  const int t_out = src.t - 1;
  VideoClip clip;
  clip.frames = Volume(t_out, src.h, src.w, src.c);
  const std::size_t fs = src.frame_size();
  for (int ti = 0; ti < t_out; ++ti) {
    const double* next = src.data.data() + (ti + 1) * fs;
    const double* cur = src.data.data() + ti * fs;
    double* out = clip.frames.data.data() + ti * fs;
    for (std::size_t i = 0; i < fs; ++i) out[i] = next[i] - cur[i];
  }
  clip.source_video_id = window.video_index;
  return clip;
}

VideoClip intra_negative_repeat(const VideoClip& clip, Rng& rng) {
  const Volume& src = clip.frames;
  if (src.t < 2) throw std::invalid_argument("clip needs at least 2 frames");
  const int k = rng.uniform_int(0, src.t - 1);
  VideoClip out = clip;
  const std::size_t fs = src.frame_size();
  const double* frame_k = src.data.data() + k * fs;
  for (int ti = 0; ti < src.t; ++ti)
    std::copy_n(frame_k, fs, out.frames.data.data() + ti * fs);
  return out;
}

VideoClip intra_negative_shuffle(const VideoClip& clip, const NegGenSpec& spec,
                                 Rng& rng) {
  const Volume& src = clip.frames;
  const int n = spec.n_subclips;
  if (n < 2)
    throw std::invalid_argument(
        "shuffle needs at least 2 sub-clips to admit a non-identity order");
  if (src.t % n != 0)
    throw std::invalid_argument("n_subclips must divide the clip length");

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  bool identity = true;
  while (identity) {
    // Fisher-Yates, then redraw whole permutations until non-identity.
    for (int i = n - 1; i > 0; --i) {
      const int j = rng.uniform_int(0, i);
      std::swap(perm[i], perm[j]);
    }
    identity = std::is_sorted(perm.begin(), perm.end());
  }

  const int sub_len = src.t / n;
  const std::size_t fs = src.frame_size();
  VideoClip out = clip;
  for (int s = 0; s < n; ++s) {
    const double* from = src.data.data() + perm[s] * sub_len * fs;
    double* to = out.frames.data.data() + s * sub_len * fs;
    std::copy_n(from, sub_len * fs, to);
  }
  return out;
}

VideoClip make_intra_negative(const VideoClip& clip, const NegGenSpec& spec,
                              Rng& rng) {
  switch (spec.kind) {
    case NegGenKind::repeat:
      return intra_negative_repeat(clip, rng);
    case NegGenKind::shuffle:
      return intra_negative_shuffle(clip, spec, rng);
  }
  throw std::invalid_argument("unknown intra-negative kind");
}

namespace {

Volume crop_volume(const Volume& src, int top, int left, int out_h,
                   int out_w) {
  if (out_h < 1 || out_w < 1 || top < 0 || left < 0 ||
      top + out_h > src.h || left + out_w > src.w)
    throw std::invalid_argument("crop window exceeds frame bounds");
  Volume out(src.t, out_h, out_w, src.c);
  const std::size_t row_elems = static_cast<std::size_t>(out_w) * src.c;
  for (int ti = 0; ti < src.t; ++ti)
    for (int hi = 0; hi < out_h; ++hi)
      std::copy_n(&src.data[src.index(ti, top + hi, left, 0)], row_elems,
                  &out.data[out.index(ti, hi, 0, 0)]);
  return out;
}

}  // namespace

VideoClip crop(const VideoClip& clip, int top, int left, int out_h,
               int out_w) {
  VideoClip out = clip;
  out.frames = crop_volume(clip.frames, top, left, out_h, out_w);
  return out;
}

RawWindow crop(const RawWindow& window, int top, int left, int out_h,
               int out_w) {
  RawWindow out = window;
  out.frames = crop_volume(window.frames, top, left, out_h, out_w);
  return out;
}

VideoClip random_crop(const VideoClip& clip, int out_h, int out_w, Rng& rng) {
  if (out_h < 1 || out_w < 1 || out_h > clip.frames.h || out_w > clip.frames.w)
    throw std::invalid_argument("crop window exceeds frame bounds");
  const int top = rng.uniform_int(0, clip.frames.h - out_h);
  const int left = rng.uniform_int(0, clip.frames.w - out_w);
  return crop(clip, top, left, out_h, out_w);
}

RawWindow random_crop(const RawWindow& window, int out_h, int out_w,
                      Rng& rng) {
  if (out_h < 1 || out_w < 1 || out_h > window.frames.h ||
      out_w > window.frames.w)
    throw std::invalid_argument("crop window exceeds frame bounds");
  const int top = rng.uniform_int(0, window.frames.h - out_h);
  const int left = rng.uniform_int(0, window.frames.w - out_w);
  return crop(window, top, left, out_h, out_w);
}

}  // namespace iic
