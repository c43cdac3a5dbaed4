#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "iic/tensor.hpp"

namespace iic {

// One video as stored on disk: raw frames plus the labels the manifest
// repeats. Frames are kept as doubles in memory; the file holds f32.
struct StoredClip {
  Volume frames;
  std::uint32_t class_label = 0;
  std::uint32_t video_id = 0;
};

void save_clip(std::ostream& os, const StoredClip& clip);
void save_clip(const std::filesystem::path& path, const StoredClip& clip);

StoredClip load_clip(std::istream& is);
StoredClip load_clip(const std::filesystem::path& path);

}  // namespace iic
