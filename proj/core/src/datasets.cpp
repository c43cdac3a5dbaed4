#include "iic/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "iic/config_file.hpp"
#include "iic/errors.hpp"

namespace iic {

MotionClass paired_class(MotionClass cls) {
  return static_cast<MotionClass>(static_cast<int>(cls) ^ 1);
}

const char* motion_class_name(MotionClass cls) {
  switch (cls) {
    case MotionClass::translate_up: return "translate_up";
    case MotionClass::translate_down: return "translate_down";
    case MotionClass::translate_left: return "translate_left";
    case MotionClass::translate_right: return "translate_right";
    case MotionClass::grow: return "grow";
    case MotionClass::shrink: return "shrink";
    case MotionClass::rotate_ccw: return "rotate_ccw";
    case MotionClass::rotate_cw: return "rotate_cw";
  }
  return "?";
}

void validate_spec(const SyntheticSpec& spec) {
  if (spec.num_classes < 2 || spec.num_classes > 8 || spec.num_classes % 2)
    throw std::invalid_argument("num_classes must be even, in [2, 8]");
  if (spec.videos_per_class < 1)
    throw std::invalid_argument("videos_per_class must be positive");
  if (spec.frames_per_video < 2)
    throw std::invalid_argument("frames_per_video must be at least 2");
  if (spec.height < 8 || spec.width < 8)
    throw std::invalid_argument("frame size too small");
  if (spec.noise_sigma < 0 || spec.bg_amplitude < 0 ||
      spec.bg_blob_count < 0)
    throw std::invalid_argument("noise and background knobs must be >= 0");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must lie in (0, 1)");
}

SyntheticSpec synthetic_spec_from(const KeyValueConfig& kv) {
  SyntheticSpec s;
  s.num_classes = static_cast<int>(kv.get_int("num_classes", s.num_classes));
  s.videos_per_class =
      static_cast<int>(kv.get_int("videos_per_class", s.videos_per_class));
  s.frames_per_video =
      static_cast<int>(kv.get_int("frames_per_video", s.frames_per_video));
  s.height = static_cast<int>(kv.get_int("height", s.height));
  s.width = static_cast<int>(kv.get_int("width", s.width));
  s.noise_sigma = kv.get_double("noise_sigma", s.noise_sigma);
  s.bg_amplitude = kv.get_double("bg_amplitude", s.bg_amplitude);
  s.bg_blob_count =
      static_cast<int>(kv.get_int("bg_blob_count", s.bg_blob_count));
  s.translate_speed_lo =
      kv.get_double("translate_speed_lo", s.translate_speed_lo);
  s.translate_speed_hi =
      kv.get_double("translate_speed_hi", s.translate_speed_hi);
  s.grow_rate_lo = kv.get_double("grow_rate_lo", s.grow_rate_lo);
  s.grow_rate_hi = kv.get_double("grow_rate_hi", s.grow_rate_hi);
  s.rotate_speed_lo = kv.get_double("rotate_speed_lo", s.rotate_speed_lo);
  s.rotate_speed_hi = kv.get_double("rotate_speed_hi", s.rotate_speed_hi);
  s.train_fraction = kv.get_double("train_fraction", s.train_fraction);
  s.seed = kv.get_u64("seed", s.seed);
  const std::vector<std::string> stray = kv.unused_keys();
  if (!stray.empty()) {
    std::string msg = "unknown spec keys:";
    for (const std::string& key : stray) msg += " " + key;
    throw DataError(msg);
  }
  try {
    validate_spec(s);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid dataset spec: ") + e.what());
  }
  return s;
}

std::string synthetic_spec_echo(const SyntheticSpec& s) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "num_classes = " << s.num_classes << '\n'
     << "videos_per_class = " << s.videos_per_class << '\n'
     << "frames_per_video = " << s.frames_per_video << '\n'
     << "height = " << s.height << '\n'
     << "width = " << s.width << '\n'
     << "noise_sigma = " << s.noise_sigma << '\n'
     << "bg_amplitude = " << s.bg_amplitude << '\n'
     << "bg_blob_count = " << s.bg_blob_count << '\n'
     << "translate_speed_lo = " << s.translate_speed_lo << '\n'
     << "translate_speed_hi = " << s.translate_speed_hi << '\n'
     << "grow_rate_lo = " << s.grow_rate_lo << '\n'
     << "grow_rate_hi = " << s.grow_rate_hi << '\n'
     << "rotate_speed_lo = " << s.rotate_speed_lo << '\n'
     << "rotate_speed_hi = " << s.rotate_speed_hi << '\n'
     << "train_fraction = " << s.train_fraction << '\n'
     << "seed = " << s.seed << '\n';
  return os.str();
}

namespace {

enum class Family { translate, scale, rotate };

Family family_of(MotionClass cls) {
  switch (cls) {
    case MotionClass::translate_up:
    case MotionClass::translate_down:
    case MotionClass::translate_left:
    case MotionClass::translate_right:
      return Family::translate;
    case MotionClass::grow:
    case MotionClass::shrink:
      return Family::scale;
    case MotionClass::rotate_ccw:
    case MotionClass::rotate_cw:
      return Family::rotate;
  }
  throw std::invalid_argument("bad motion class");
}

double clamp01(double v) { return v < 0 ? 0 : (v > 1 ? 1 : v); }

// Soft-edged coverage of one pixel by the shape: 1 inside, 0 outside, with
// roughly a one-pixel linear ramp at the boundary.
double coverage(ShapeKind shape, double dy, double dx, double size,
                double angle) {
  double d;
  switch (shape) {
    case ShapeKind::square:
      d = std::max(std::abs(dy), std::abs(dx)) - size;
      break;
    case ShapeKind::disc:
      d = std::sqrt(dy * dy + dx * dx) - size;
      break;
    case ShapeKind::bar: {
      const double cs = std::cos(angle), sn = std::sin(angle);
      const double u = dx * cs + dy * sn;
      const double v = -dx * sn + dy * cs;
      d = std::max(std::abs(u) - 1.6 * size, std::abs(v) - 0.35 * size);
      break;
    }
    default:
      throw std::invalid_argument("bad shape");
  }
  return clamp01(0.5 - d);
}

}  // namespace

VideoLatents draw_latents(const SyntheticSpec& spec, MotionClass cls,
                          Rng& rng) {
  VideoLatents lat;
  const double extent = std::min(spec.height, spec.width);

  // Fixed draw order keeps the rng stream identical across classes.
  const int shape_draw = static_cast<int>(rng.uniform_below(3));
  lat.shape = family_of(cls) == Family::rotate
                  ? ShapeKind::bar
                  : static_cast<ShapeKind>(shape_draw);
  lat.cy = rng.uniform(0.3 * spec.height, 0.7 * spec.height);
  lat.cx = rng.uniform(0.3 * spec.width, 0.7 * spec.width);
  lat.size = rng.uniform(0.11, 0.17) * extent;

  const double u = rng.uniform01();
  switch (family_of(cls)) {
    case Family::translate:
      lat.speed = spec.translate_speed_lo +
                  u * (spec.translate_speed_hi - spec.translate_speed_lo);
      break;
    case Family::scale:
      lat.speed =
          spec.grow_rate_lo + u * (spec.grow_rate_hi - spec.grow_rate_lo);
      break;
    case Family::rotate:
      lat.speed = spec.rotate_speed_lo +
                  u * (spec.rotate_speed_hi - spec.rotate_speed_lo);
      break;
  }

  lat.angle = rng.uniform(0.0, 3.14159265358979323846);
  for (double& ch : lat.color) ch = rng.uniform(0.55, 1.0);

  lat.bg.resize(spec.bg_blob_count);
  for (BackgroundBlob& blob : lat.bg) {
    blob.cy = rng.uniform(0.0, static_cast<double>(spec.height));
    blob.cx = rng.uniform(0.0, static_cast<double>(spec.width));
    blob.radius = rng.uniform(0.12, 0.30) * extent;
    for (double& ch : blob.color) ch = rng.uniform01();
  }
  return lat;
}

Volume render_video(const SyntheticSpec& spec, MotionClass cls,
                    const VideoLatents& latents) {
  const int T = spec.frames_per_video;
  const int H = spec.height, W = spec.width;
  Volume out(T, H, W, 3);

  // Static background, computed once and replicated into every frame.
  std::vector<double> bg(static_cast<std::size_t>(H) * W * 3, 0.0);
  for (const BackgroundBlob& blob : latents.bg) {
    const double inv = 1.0 / (2.0 * blob.radius * blob.radius);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double dy = y - blob.cy, dx = x - blob.cx;
        const double g = spec.bg_amplitude * std::exp(-(dy * dy + dx * dx) * inv);
        double* px = &bg[(static_cast<std::size_t>(y) * W + x) * 3];
        for (int ch = 0; ch < 3; ++ch) px[ch] += g * blob.color[ch];
      }
  }
  for (double& v : bg) v = clamp01(v);

  const double mid = (T - 1) / 2.0;
  for (int t = 0; t < T; ++t) {
    const double off = t - mid;

    // Per-frame program state. Signs are arranged so that reversing the
    // frame order of one class reproduces its paired class bit for bit.
    double cy = latents.cy, cx = latents.cx;
    double size = latents.size, angle = latents.angle;
    switch (cls) {
      case MotionClass::translate_up: cy = cy - latents.speed * off; break;
      case MotionClass::translate_down: cy = cy + latents.speed * off; break;
      case MotionClass::translate_left: cx = cx - latents.speed * off; break;
      case MotionClass::translate_right: cx = cx + latents.speed * off; break;
      case MotionClass::grow: size = size * (1.0 + latents.speed * off); break;
      case MotionClass::shrink:
        size = size * (1.0 - latents.speed * off);
        break;
      case MotionClass::rotate_ccw: angle = angle + latents.speed * off; break;
      case MotionClass::rotate_cw: angle = angle - latents.speed * off; break;
    }

    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double a =
            coverage(latents.shape, y - cy, x - cx, size, angle);
        const double* bgpx = &bg[(static_cast<std::size_t>(y) * W + x) * 3];
        double* px = &out.data[out.index(t, y, x, 0)];
        for (int ch = 0; ch < 3; ++ch)
          px[ch] = bgpx[ch] + a * (latents.color[ch] - bgpx[ch]);
      }
  }
  return out;
}

Volume render_video_noisy(const SyntheticSpec& spec, MotionClass cls,
                          const VideoLatents& latents, Rng& noise_rng) {
  Volume out = render_video(spec, cls, latents);
  if (spec.noise_sigma > 0) {
    for (double& v : out.data)
      v = clamp01(v + spec.noise_sigma * noise_rng.normal());
  }
  return out;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  for (const ManifestRecord& rec : records)
    os << rec.rel_path << '\t' << rec.video_id << '\t' << rec.class_label
       << '\t' << rec.split << '\n';
  os.flush();
  if (!os) throw DataError("write failed: " + path.string());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path.string());
  DatasetManifest manifest;
  manifest.root = path.parent_path();
  std::set<std::uint32_t> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestRecord rec;
    long long vid = -1, label = -1;
    if (!std::getline(ss, rec.rel_path, '\t') || !(ss >> vid) ||
        ss.get() != '\t' || !(ss >> label) || ss.get() != '\t' ||
        !(ss >> rec.split) || vid < 0 || label < 0)
      throw DataError("manifest line " + std::to_string(line_no) +
                      " is malformed");
    if (rec.split != "train" && rec.split != "test")
      throw DataError("manifest line " + std::to_string(line_no) +
                      ": split must be train or test");
    rec.video_id = static_cast<std::uint32_t>(vid);
    rec.class_label = static_cast<std::uint32_t>(label);
    if (!seen_ids.insert(rec.video_id).second)
      throw DataError("manifest repeats video_id " +
                      std::to_string(rec.video_id));
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

DatasetManifest generate_dataset(const SyntheticSpec& spec,
                                 const std::filesystem::path& out_dir) {
  validate_spec(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw DataError("cannot create output directory: " + out_dir.string());

  DatasetManifest manifest;
  manifest.root = out_dir;

  for (int cls = 0; cls < spec.num_classes; ++cls) {
    // Per-class stratified split over a seeded shuffle of video slots.
    std::vector<int> order(spec.videos_per_class);
    for (int j = 0; j < spec.videos_per_class; ++j) order[j] = j;
    Rng split_rng(derive_seed(spec.seed, 3, static_cast<std::uint64_t>(cls)));
    for (int j = spec.videos_per_class - 1; j > 0; --j)
      std::swap(order[j], order[split_rng.uniform_int(0, j)]);
    int n_train =
        static_cast<int>(spec.train_fraction * spec.videos_per_class + 0.5);
    if (spec.videos_per_class >= 2)
      n_train = std::clamp(n_train, 1, spec.videos_per_class - 1);
    std::vector<bool> is_train(spec.videos_per_class, false);
    for (int j = 0; j < n_train; ++j) is_train[order[j]] = true;

    for (int j = 0; j < spec.videos_per_class; ++j) {
      const std::uint32_t video_id =
          static_cast<std::uint32_t>(cls * spec.videos_per_class + j);
      Rng latent_rng(derive_seed(spec.seed, 1, video_id));
      Rng noise_rng(derive_seed(spec.seed, 2, video_id));
      const MotionClass mc = static_cast<MotionClass>(cls);
      const VideoLatents lat = draw_latents(spec, mc, latent_rng);

      StoredClip clip;
      clip.frames = render_video_noisy(spec, mc, lat, noise_rng);
      clip.class_label = static_cast<std::uint32_t>(cls);
      clip.video_id = video_id;

      char name[32];
      std::snprintf(name, sizeof name, "video_%04u.iicc", video_id);
      save_clip(out_dir / name, clip);

      ManifestRecord rec;
      rec.rel_path = name;
      rec.video_id = video_id;
      rec.class_label = static_cast<std::uint32_t>(cls);
      rec.split = is_train[j] ? "train" : "test";
      manifest.records.push_back(std::move(rec));
    }
  }

  manifest.save(out_dir / "manifest.tsv");
  return manifest;
}

LoadedDataset load_split(const DatasetManifest& manifest,
                         const std::string& split) {
  LoadedDataset data;
  for (const ManifestRecord& rec : manifest.records) {
    if (rec.split != split) continue;
    StoredClip clip = load_clip(manifest.root / rec.rel_path);
    if (clip.class_label != rec.class_label || clip.video_id != rec.video_id)
      throw DataError("manifest disagrees with file header for " +
                      rec.rel_path);
    if (!data.videos.empty() &&
        !clip.frames.same_shape(data.videos.front().frames))
      throw DataError("videos in split have mixed shapes");
    data.labels.push_back(static_cast<int>(rec.class_label));
    data.videos.push_back(std::move(clip));
  }
  return data;
}

std::vector<RawWindow> load_batch(const LoadedDataset& data,
                                  const std::vector<int>& indices, int T,
                                  Rng& rng) {
  if (T < 2) throw std::invalid_argument("window length must be at least 2");
  std::vector<RawWindow> out;
  out.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= data.size())
      throw std::out_of_range("batch index outside dataset");
    const Volume& frames = data.videos[idx].frames;
    if (frames.t < T + 1)
      throw DataError("video too short for a " + std::to_string(T + 1) +
                      "-frame window");
    const int offset = rng.uniform_int(0, frames.t - (T + 1));
    RawWindow win;
    win.video_index = idx;
    win.frames = Volume(T + 1, frames.h, frames.w, frames.c);
    std::copy_n(&frames.data[frames.index(offset, 0, 0, 0)],
                win.frames.data.size(), win.frames.data.data());
    out.push_back(std::move(win));
  }
  return out;
}

}  // namespace iic
