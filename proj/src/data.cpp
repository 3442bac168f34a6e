#include "itae/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "itae/checkpoint.hpp"
#include "itae/errors.hpp"
#include "itae/ops.hpp"
#include "itae/tensor_io.hpp"

namespace itae {

namespace fs = std::filesystem;

namespace {

// Skips whitespace and '#' comments in a PNM header.
std::int64_t read_header_int(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  std::int64_t v = -1;
  in >> v;
  if (!in) throw std::runtime_error("malformed PNM header");
  return v;
}

// Weights of input cells [floor(a), ceil(b)) overlapping [a, b).
void accumulate_axis(std::int64_t in, std::int64_t out, std::vector<std::vector<std::pair<std::int64_t, double>>>& taps) {
  taps.assign(static_cast<std::size_t>(out), {});
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    const double a = static_cast<double>(o) * ratio;
    const double b = static_cast<double>(o + 1) * ratio;
    for (auto i = static_cast<std::int64_t>(std::floor(a)); i < std::min<std::int64_t>(in, static_cast<std::int64_t>(std::ceil(b))); ++i) {
      const double w = std::min(b, static_cast<double>(i + 1)) - std::max(a, static_cast<double>(i));
      if (w > 0) taps[static_cast<std::size_t>(o)].push_back({i, w / ratio});
    }
  }
}

std::vector<fs::path> frame_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

Tensor5 image_to_frame(const Image& img, ColorMode color) {
  const std::int64_t c_out = color == ColorMode::kGray ? 1 : 3;
  const std::int64_t plane = img.height * img.width;
  std::vector<double> v(static_cast<std::size_t>(c_out * plane));
  for (std::int64_t p = 0; p < plane; ++p) {
    const std::uint8_t* px = img.pixels.data() + p * img.channels;
    if (color == ColorMode::kGray) {
      double s = 0.0;
      for (std::int64_t c = 0; c < img.channels; ++c) s += px[c];
      v[static_cast<std::size_t>(p)] = s / (255.0 * static_cast<double>(img.channels));
    } else {
      for (std::int64_t c = 0; c < 3; ++c) {
        v[static_cast<std::size_t>(c * plane + p)] = px[img.channels == 3 ? c : 0] / 255.0;
      }
    }
  }
  return Tensor5({1, c_out, 1, img.height, img.width}, std::move(v));
}

Tensor5 adapt_packed(const Tensor5& t, ColorMode color) {
  const Shape5& s = t.shape();
  if (s.n() != 1) throw DimensionError("packed clip source must have batch 1, got " + s.str());
  const std::int64_t want = color == ColorMode::kGray ? 1 : 3;
  if (s.c() == want) return t;
  const std::int64_t plane = s.spatial_size();
  std::vector<double> v(static_cast<std::size_t>(want * plane));
  auto d = t.data();
  for (std::int64_t i = 0; i < plane; ++i) {
    if (want == 1) {
      double acc = 0.0;
      for (std::int64_t c = 0; c < s.c(); ++c) acc += d[static_cast<std::size_t>(c * plane + i)];
      v[static_cast<std::size_t>(i)] = acc / static_cast<double>(s.c());
    } else {
      if (s.c() != 1) throw DimensionError("cannot convert " + s.str() + " to RGB");
      for (std::int64_t c = 0; c < 3; ++c) v[static_cast<std::size_t>(c * plane + i)] = d[static_cast<std::size_t>(i)];
    }
  }
  return Tensor5({1, want, s.t(), s.h(), s.w()}, std::move(v));
}

}  // namespace

Image read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  Image img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw std::runtime_error(path.string() + ": not a binary PGM/PPM");
  }
  img.width = read_header_int(in);
  img.height = read_header_int(in);
  const std::int64_t maxval = read_header_int(in);
  if (maxval != 255) throw std::runtime_error(path.string() + ": maxval must be 255");
  if (img.width <= 0 || img.height <= 0) throw std::runtime_error(path.string() + ": bad size");
  in.get();  // single whitespace before the raster
  img.pixels.resize(static_cast<std::size_t>(img.channels * img.height * img.width));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw std::runtime_error(path.string() + ": truncated raster");
  }
  return img;
}

void write_pnm(const fs::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("PNM needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

Tensor5 area_resize(const Tensor5& x, std::int64_t height, std::int64_t width) {
  const Shape5& s = x.shape();
  if (height < 1 || width < 1) throw DimensionError("area_resize: bad target size");
  if (s.h() == height && s.w() == width) return x.detach();
  std::vector<std::vector<std::pair<std::int64_t, double>>> ty, tx;
  accumulate_axis(s.h(), height, ty);
  accumulate_axis(s.w(), width, tx);
  const std::int64_t planes = s.n() * s.c() * s.t();
  std::vector<double> out(static_cast<std::size_t>(planes * height * width), 0.0);
  auto in = x.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* src = in.data() + p * s.h() * s.w();
    double* dst = out.data() + p * height * width;
    for (std::int64_t oy = 0; oy < height; ++oy) {
      for (std::int64_t ox = 0; ox < width; ++ox) {
        double acc = 0.0;
        for (const auto& [iy, wy] : ty[static_cast<std::size_t>(oy)]) {
          for (const auto& [ix, wx] : tx[static_cast<std::size_t>(ox)]) acc += wy * wx * src[iy * s.w() + ix];
        }
        dst[oy * width + ox] = acc;
      }
    }
  }
  return Tensor5({s.n(), s.c(), s.t(), height, width}, std::move(out));
}

void ClipSpec::validate() const {
  std::vector<std::string> errs;
  if (source.empty()) errs.push_back("dataset path is empty");
  else if (!fs::exists(source)) errs.push_back("dataset path does not exist: " + source.string());
  if (tau < 1 || clip_length < 1 || clip_length % tau != 0) {
    errs.push_back("T=" + std::to_string(clip_length) + " not divisible by tau=" + std::to_string(tau));
  }
  if (stride < 1) errs.push_back("clip stride must be positive");
  if (height < 4 || width < 4 || height % 4 != 0 || width % 4 != 0) {
    errs.push_back("resize target must be divisible by 4");
  }
  if (!errs.empty()) {
    std::string msg = "invalid clip spec:";
    for (const auto& e : errs) msg += " " + e + ";";
    throw ConfigError(msg);
  }
}

FrameSequence load_frames(const ClipSpec& spec) {
  spec.validate();
  FrameSequence seq;
  seq.source_id = spec.source.filename().string();
  if (fs::is_regular_file(spec.source)) {
    Tensor5 t = adapt_packed(load_tensor(spec.source), spec.color);
    seq.frames = area_resize(t, spec.height, spec.width);
    seq.total_frames = t.shape().t();
    for (std::int64_t i = 0; i < seq.total_frames; ++i) seq.frame_indices.push_back(i);
    return seq;
  }
  const auto files = frame_files(spec.source);
  seq.total_frames = static_cast<std::int64_t>(files.size());
  std::vector<double> data;
  std::int64_t channels = spec.color == ColorMode::kGray ? 1 : 3;
  for (std::size_t i = 0; i < files.size(); ++i) {
    Tensor5 frame;
    try {
      frame = area_resize(image_to_frame(read_pnm(files[i]), spec.color), spec.height, spec.width);
    } catch (const std::exception& e) {
      if (!spec.skip_unreadable) {
        throw std::runtime_error("unreadable frame " + files[i].string() + ": " + e.what());
      }
      spdlog::warn("skipping unreadable frame {}: {}", files[i].string(), e.what());
      continue;
    }
    data.insert(data.end(), frame.data().begin(), frame.data().end());
    seq.frame_indices.push_back(static_cast<std::int64_t>(i));
  }
  const auto kept = static_cast<std::int64_t>(seq.frame_indices.size());
  if (kept == 0) throw ConfigError("no readable frames in " + spec.source.string());
  // frames were appended (C,H,W) per frame; reorder to (C, F, H, W)
  const std::int64_t plane = spec.height * spec.width;
  std::vector<double> ordered(data.size());
  for (std::int64_t f = 0; f < kept; ++f) {
    for (std::int64_t c = 0; c < channels; ++c) {
      std::copy_n(data.begin() + (f * channels + c) * plane, plane,
                  ordered.begin() + (c * kept + f) * plane);
    }
  }
  seq.frames = Tensor5({1, channels, kept, spec.height, spec.width}, std::move(ordered));
  return seq;
}

std::vector<VideoClip> make_clips(const FrameSequence& seq, int clip_length, int tau, int stride) {
  std::vector<VideoClip> clips;
  const std::int64_t f = seq.frames.shape().t();
  for (std::int64_t s = 0; s + clip_length <= f; s += stride) {
    VideoClip clip;
    clip.frames = slice(seq.frames, kTime, s, clip_length);
    clip.tau = tau;
    clip.source_id = seq.source_id;
    clip.frame_indices.assign(seq.frame_indices.begin() + s, seq.frame_indices.begin() + s + clip_length);
    clips.push_back(std::move(clip));
  }
  return clips;
}

std::vector<VideoClip> load_clips(const ClipSpec& spec) {
  return make_clips(load_frames(spec), spec.clip_length, spec.tau, spec.stride);
}

std::string clip_stream_hash(const std::vector<VideoClip>& clips) {
  std::string bytes;
  for (const auto& c : clips) {
    bytes += c.source_id + "|" + c.frames.shape().str() + "|";
    for (auto i : c.frame_indices) bytes += std::to_string(i) + ",";
    const auto d = c.frames.data();
    bytes.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

std::string to_string(AnomalyMode mode) {
  switch (mode) {
    case AnomalyMode::kSpeed2: return "speed2";
    case AnomalyMode::kShapeSwap: return "shape-swap";
    case AnomalyMode::kReverse: return "reverse";
  }
  return "?";
}

AnomalyMode parse_anomaly_mode(const std::string& text) {
  if (text == "speed2") return AnomalyMode::kSpeed2;
  if (text == "shape-swap") return AnomalyMode::kShapeSwap;
  if (text == "reverse") return AnomalyMode::kReverse;
  throw ConfigError("unknown anomaly mode '" + text + "' (speed2, shape-swap, reverse)");
}

void SyntheticSceneConfig::validate() const {
  std::vector<std::string> errs;
  if (objects < 1) errs.push_back("need at least one object");
  if (canvas < 16 || (objects >= 1 && canvas / objects < 8)) errs.push_back("canvas too small for the lanes");
  if (!(speed_min > 0) || speed_max < speed_min) errs.push_back("bad speed range");
  if (noise_sigma < 0) errs.push_back("noise sigma must be >= 0");
  if (!errs.empty()) {
    std::string msg = "invalid synthetic scene:";
    for (const auto& e : errs) msg += " " + e + ";";
    throw ConfigError(msg);
  }
}

SyntheticVideo generate_synthetic(const SyntheticSceneConfig& cfg, std::int64_t n_frames,
                                  const std::vector<AnomalySpan>& spans) {
  cfg.validate();
  std::vector<int> mode_at(static_cast<std::size_t>(n_frames), -1);
  for (const auto& s : spans) {
    if (s.start < 0 || s.end > n_frames || s.start >= s.end) {
      throw ConfigError("anomaly span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                        ") outside [0, " + std::to_string(n_frames) + ")");
    }
    for (std::int64_t t = s.start; t < s.end; ++t) {
      int& m = mode_at[static_cast<std::size_t>(t)];
      if (m >= 0 && m != static_cast<int>(s.mode)) {
        throw ConfigError("anomaly spans overlap with different modes at frame " + std::to_string(t));
      }
      m = static_cast<int>(s.mode);
    }
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::int64_t n = cfg.canvas;
  // Static background in [0.2, 0.5], varying along y only, so horizontal motion
  // never changes which background values an object hides.
  std::vector<double> background(static_cast<std::size_t>(n * n));
  const double fy = 1 + 3 * unit(rng), ph = 6.28 * unit(rng);
  for (std::int64_t y = 0; y < n; ++y) {
    const double v = static_cast<double>(y) / static_cast<double>(n);
    for (std::int64_t x = 0; x < n; ++x) {
      background[static_cast<std::size_t>(y * n + x)] = 0.35 + 0.15 * std::cos(6.28 * fy * v + ph);
    }
  }
  struct Object {
    double x, speed, level;
    std::int64_t lane_center;
  };
  std::vector<Object> objs;
  const std::int64_t lane = n / cfg.objects;
  for (int i = 0; i < cfg.objects; ++i) {
    Object o;
    o.x = unit(rng) * static_cast<double>(n);
    o.speed = cfg.speed_min + (cfg.speed_max - cfg.speed_min) * unit(rng);
    if (unit(rng) < 0.5) o.speed = -o.speed;
    o.level = 0.85 + 0.1 * unit(rng);
    o.lane_center = i * lane + lane / 2;
    objs.push_back(o);
  }
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0 ? cfg.noise_sigma : 1.0);

  SyntheticVideo video;
  std::vector<double> canvas(background.size());
  for (std::int64_t t = 0; t < n_frames; ++t) {
    const int mode = mode_at[static_cast<std::size_t>(t)];
    video.labels.push_back(mode >= 0 ? 1 : 0);
    canvas = background;
    const bool bar = mode == static_cast<int>(AnomalyMode::kShapeSwap);
    const std::int64_t ow = bar ? 16 : 8, oh = 8;  // same height keeps motion energy comparable
    for (const auto& o : objs) {
      const auto x0 = static_cast<std::int64_t>(std::floor(o.x));
      const std::int64_t y0 = o.lane_center - oh / 2;
      for (std::int64_t dy = 0; dy < oh; ++dy) {
        for (std::int64_t dx = 0; dx < ow; ++dx) {
          const std::int64_t x = ((x0 - ow / 2 + dx) % n + n) % n;
          canvas[static_cast<std::size_t>((y0 + dy) * n + x)] = o.level;
        }
      }
    }
    Image img;
    img.channels = 1;
    img.height = img.width = n;
    img.pixels.resize(canvas.size());
    for (std::size_t i = 0; i < canvas.size(); ++i) {
      const double v = canvas[i] + (cfg.noise_sigma > 0 ? noise(rng) : 0.0);
      img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
    }
    video.frames.push_back(std::move(img));
    // motion to the next frame follows the current frame's mode
    for (auto& o : objs) {
      double v = o.speed;
      if (mode == static_cast<int>(AnomalyMode::kSpeed2)) v *= 2.0;
      if (mode == static_cast<int>(AnomalyMode::kReverse)) v = -v;
      o.x = std::fmod(o.x + v + static_cast<double>(n), static_cast<double>(n));
    }
  }
  return video;
}

void write_labels(const fs::path& path, const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (int l : labels) out << l << "\n";
}

std::vector<int> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open label file " + path.string());
  std::vector<int> labels;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line != "0" && line != "1") {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": label must be 0 or 1");
    }
    labels.push_back(line == "1" ? 1 : 0);
  }
  return labels;
}

FrameSequence to_sequence(const SyntheticVideo& video, const std::string& source_id) {
  if (video.frames.empty()) throw ConfigError("to_sequence: empty video");
  const Image& first = video.frames.front();
  const auto f = static_cast<std::int64_t>(video.frames.size());
  FrameSequence seq;
  seq.frames = Tensor5::zeros({1, first.channels, f, first.height, first.width});
  auto d = seq.frames.mutable_data();
  const std::int64_t plane = first.height * first.width;
  for (std::int64_t t = 0; t < f; ++t) {
    const Image& img = video.frames[static_cast<std::size_t>(t)];
    for (std::int64_t c = 0; c < img.channels; ++c)
      for (std::int64_t i = 0; i < plane; ++i) {
        d[static_cast<std::size_t>(seq.frames.offset(0, c, t, 0, 0) + i)] =
            img.pixels[static_cast<std::size_t>(i * img.channels + c)] / 255.0;
      }
    seq.frame_indices.push_back(t);
  }
  seq.source_id = source_id;
  seq.total_frames = f;
  return seq;
}

void write_synthetic(const fs::path& dir, const SyntheticVideo& video) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < video.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05zu.pgm", i);
    write_pnm(dir / name, video.frames[i]);
  }
  write_labels(dir / "labels.txt", video.labels);
}

}  // namespace itae
