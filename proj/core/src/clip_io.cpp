#include "iic/clip_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "iic/binary_io.hpp"
#include "iic/errors.hpp"

namespace iic::bin {

void write_bytes(std::ostream& os, const void* src, std::size_t n) {
  os.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
  if (!os) throw DataError("write failed");
}

void read_bytes(std::istream& is, void* dst, std::size_t n, const char* what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw DataError(std::string("truncated input while reading ") + what);
}

void write_magic(std::ostream& os, std::string_view magic) {
  write_bytes(os, magic.data(), magic.size());
}

void expect_magic(std::istream& is, std::string_view magic, const char* what) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(magic.size()));
  if (static_cast<std::size_t>(is.gcount()) != magic.size() || got != magic)
    throw DataError(std::string("bad magic for ") + what);
}

void write_u32(std::ostream& os, std::uint32_t v) {
  write_bytes(os, &v, sizeof v);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  write_bytes(os, &v, sizeof v);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v;
  read_bytes(is, &v, sizeof v, what);
  return v;
}

std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t v;
  read_bytes(is, &v, sizeof v, what);
  return v;
}

namespace {
constexpr std::size_t kChunk = 1 << 16;
}

void write_f32_seq(std::ostream& os, const double* src, std::size_t n) {
  std::vector<float> buf(std::min(n, kChunk));
  std::size_t done = 0;
  while (done < n) {
    const std::size_t take = std::min(n - done, kChunk);
    for (std::size_t i = 0; i < take; ++i)
      buf[i] = static_cast<float>(src[done + i]);
    write_bytes(os, buf.data(), take * sizeof(float));
    done += take;
  }
}

void read_f32_seq(std::istream& is, double* dst, std::size_t n,
                  const char* what) {
  std::vector<float> buf(std::min(n, kChunk));
  std::size_t done = 0;
  while (done < n) {
    const std::size_t take = std::min(n - done, kChunk);
    read_bytes(is, buf.data(), take * sizeof(float), what);
    for (std::size_t i = 0; i < take; ++i) dst[done + i] = buf[i];
    done += take;
  }
}

void write_f64_seq(std::ostream& os, const double* src, std::size_t n) {
  write_bytes(os, src, n * sizeof(double));
}

void read_f64_seq(std::istream& is, double* dst, std::size_t n,
                  const char* what) {
  read_bytes(is, dst, n * sizeof(double), what);
}

void expect_eof(std::istream& is, const char* what) {
  if (is.peek() != std::char_traits<char>::eof())
    throw DataError(std::string("trailing bytes after ") + what);
}

}  // namespace iic::bin

namespace iic {

namespace {

constexpr std::string_view kClipMagic = "IICCLIP1";

// Generous ceiling so a corrupt header can't request a huge allocation.
constexpr std::uint64_t kMaxClipElems = 1ull << 28;

}  // namespace

void save_clip(std::ostream& os, const StoredClip& clip) {
  const Volume& v = clip.frames;
  if (v.t < 1 || v.h < 1 || v.w < 1 || v.c < 1)
    throw DataError("refusing to save empty clip");
  bin::write_magic(os, kClipMagic);
  bin::write_u32(os, static_cast<std::uint32_t>(v.t));
  bin::write_u32(os, static_cast<std::uint32_t>(v.h));
  bin::write_u32(os, static_cast<std::uint32_t>(v.w));
  bin::write_u32(os, static_cast<std::uint32_t>(v.c));
  bin::write_u32(os, clip.class_label);
  bin::write_u32(os, clip.video_id);
  bin::write_f32_seq(os, v.data.data(), v.data.size());
}

void save_clip(const std::filesystem::path& path, const StoredClip& clip) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  save_clip(os, clip);
  os.flush();
  if (!os) throw DataError("write failed: " + path.string());
}

StoredClip load_clip(std::istream& is) {
  bin::expect_magic(is, kClipMagic, "clip file");
  const auto t = bin::read_u32(is, "clip T");
  const auto h = bin::read_u32(is, "clip H");
  const auto w = bin::read_u32(is, "clip W");
  const auto c = bin::read_u32(is, "clip C");
  StoredClip clip;
  clip.class_label = bin::read_u32(is, "clip class_label");
  clip.video_id = bin::read_u32(is, "clip video_id");
  if (t < 1 || h < 1 || w < 1 || c < 1)
    throw DataError("clip header has zero dimension");
  const std::uint64_t elems =
      static_cast<std::uint64_t>(t) * h * w * c;
  if (elems > kMaxClipElems) throw DataError("clip header too large");
  clip.frames = Volume(static_cast<int>(t), static_cast<int>(h),
                       static_cast<int>(w), static_cast<int>(c));
  bin::read_f32_seq(is, clip.frames.data.data(), clip.frames.data.size(),
                    "clip samples");
  return clip;
}

StoredClip load_clip(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  StoredClip clip = load_clip(is);
  bin::expect_eof(is, "clip samples");
  return clip;
}

}  // namespace iic
