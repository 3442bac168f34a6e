#include <random>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "itae/data.hpp"
#include "itae/errors.hpp"
#include "itae/tensor_io.hpp"

using namespace itae;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("itae_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image gradient_image(std::int64_t channels, std::int64_t h, std::int64_t w, int shift) {
  Image img{channels, h, w, {}};
  for (std::int64_t i = 0; i < channels * h * w; ++i) img.pixels.push_back(static_cast<std::uint8_t>((i * 7 + shift) % 256));
  return img;
}

std::map<int, int> histogram(const Image& img) {
  std::map<int, int> h;
  for (auto p : img.pixels) ++h[p];
  return h;
}

double diff_energy(const Image& a, const Image& b) {
  double e = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = (a.pixels[i] - b.pixels[i]) / 255.0;
    e += d * d;
  }
  return e;
}

}  // namespace

TEST_CASE("PGM and PPM round-trip and reject other formats") {
  const fs::path dir = fresh_dir("pnm");
  const Image g = gradient_image(1, 5, 7, 0);
  write_pnm(dir / "g.pgm", g);
  const Image g2 = read_pnm(dir / "g.pgm");
  CHECK(g2.channels == 1);
  CHECK(g2.pixels == g.pixels);
  const Image c = gradient_image(3, 4, 3, 11);
  write_pnm(dir / "c.ppm", c);
  CHECK(read_pnm(dir / "c.ppm").pixels == c.pixels);
  {
    std::ofstream f(dir / "bad.pgm");
    f << "P2\n2 2\n255\n0 0 0 0\n";
  }
  CHECK_THROWS(read_pnm(dir / "bad.pgm"));
  {
    std::ofstream f(dir / "short.pgm", std::ios::binary);
    f << "P5\n4 4\n255\nabc";
  }
  CHECK_THROWS(read_pnm(dir / "short.pgm"));
  // header comments are allowed
  {
    std::ofstream f(dir / "comment.pgm", std::ios::binary);
    f << "P5\n# made by hand\n2 1\n255\n";
    f.put(static_cast<char>(10));
    f.put(static_cast<char>(200));
  }
  CHECK(read_pnm(dir / "comment.pgm").pixels == std::vector<std::uint8_t>{10, 200});
  fs::remove_all(dir);
}

TEST_CASE("a 100-frame folder at T=16 stride 1 gives 85 clips with correct indices") {
  const fs::path dir = fresh_dir("folder");
  for (int i = 0; i < 100; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "f%03d.pgm", i);
    write_pnm(dir / name, gradient_image(1, 16, 16, i));
  }
  ClipSpec spec;
  spec.source = dir;
  spec.clip_length = 16;
  spec.tau = 4;
  spec.height = spec.width = 16;
  const auto clips = load_clips(spec);
  CHECK(clips.size() == 85);
  CHECK(clips[0].frames.shape() == Shape5{1, 1, 16, 16, 16});
  CHECK(clips[84].frame_indices.front() == 84);
  CHECK(clips[84].frame_indices.back() == 99);
  CHECK(clips[3].frames.at(0, 0, 0, 0, 0) == doctest::Approx(3 / 255.0));
  for (const auto& c : clips) CHECK_NOTHROW(c.validate());
  // determinism
  CHECK(clip_stream_hash(clips) == clip_stream_hash(load_clips(spec)));

  // RGB sources give C=3 in rgb mode and C=1 in gray mode
  const fs::path rgb = fresh_dir("rgb");
  for (int i = 0; i < 4; ++i) write_pnm(rgb / ("f" + std::to_string(i) + ".ppm"), gradient_image(3, 8, 8, i));
  spec.source = rgb;
  spec.clip_length = 4;
  spec.height = spec.width = 8;
  spec.color = ColorMode::kRgb;
  CHECK(load_clips(spec)[0].frames.shape().c() == 3);
  spec.color = ColorMode::kGray;
  CHECK(load_clips(spec)[0].frames.shape().c() == 1);
  fs::remove_all(dir);
  fs::remove_all(rgb);
}

TEST_CASE("unreadable frames are skipped or abort per flag") {
  const fs::path dir = fresh_dir("broken");
  for (int i = 0; i < 6; ++i) write_pnm(dir / ("f" + std::to_string(i) + ".pgm"), gradient_image(1, 8, 8, i));
  {
    std::ofstream f(dir / "f2.pgm");
    f << "garbage";
  }
  ClipSpec spec;
  spec.source = dir;
  spec.clip_length = 4;
  spec.tau = 4;
  spec.height = spec.width = 8;
  const FrameSequence seq = load_frames(spec);
  CHECK(seq.total_frames == 6);
  CHECK(seq.frame_indices == std::vector<std::int64_t>{0, 1, 3, 4, 5});
  spec.skip_unreadable = false;
  CHECK_THROWS_AS(load_frames(spec), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("packed tensor sources round-trip bit-identically") {
  const fs::path dir = fresh_dir("packed");
  std::mt19937_64 rng(1);
  const Tensor5 video = Tensor5::uniform({1, 1, 12, 16, 16}, rng, 0, 1);
  save_tensor(dir / "v.t5", video);
  ClipSpec spec;
  spec.source = dir / "v.t5";
  spec.clip_length = 8;
  spec.tau = 4;
  spec.stride = 2;
  spec.height = spec.width = 16;
  const auto clips = load_clips(spec);
  CHECK(clips.size() == 3);
  save_tensor(dir / "clip.t5", clips[1].frames);
  const Tensor5 back = load_tensor(dir / "clip.t5");
  for (std::int64_t t = 0; t < 8; ++t)
    for (std::int64_t y = 0; y < 16; ++y)
      for (std::int64_t x = 0; x < 16; ++x) CHECK(back.at(0, 0, t, y, x) == video.at(0, 0, t + 2, y, x));
  fs::remove_all(dir);
}

TEST_CASE("clip spec errors are aggregated") {
  ClipSpec spec;
  spec.clip_length = 6;
  spec.height = 30;
  try {
    spec.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("dataset path") != std::string::npos);
    CHECK(msg.find("divisible by tau") != std::string::npos);
    CHECK(msg.find("divisible by 4") != std::string::npos);
  }
}

TEST_CASE("synthetic generator: determinism, labels and anomaly statistics") {
  SyntheticSceneConfig cfg;
  cfg.seed = 7;
  const std::vector<AnomalySpan> spans{{20, 30, AnomalyMode::kSpeed2}, {50, 60, AnomalyMode::kShapeSwap},
                                       {70, 75, AnomalyMode::kReverse}};
  const SyntheticVideo a = generate_synthetic(cfg, 90, spans);
  const SyntheticVideo b = generate_synthetic(cfg, 90, spans);
  REQUIRE(a.frames.size() == 90);
  for (std::size_t i = 0; i < 90; ++i) CHECK(a.frames[i].pixels == b.frames[i].pixels);
  for (int t = 0; t < 90; ++t) {
    const bool in = (t >= 20 && t < 30) || (t >= 50 && t < 60) || (t >= 70 && t < 75);
    CHECK(a.labels[static_cast<std::size_t>(t)] == (in ? 1 : 0));
  }
  // speed x2 leaves single-frame histograms unchanged
  const auto h0 = histogram(a.frames[5]);
  for (int t = 20; t < 30; ++t) CHECK(histogram(a.frames[static_cast<std::size_t>(t)]) == h0);
  // shape swap changes appearance but not the frame-difference energy range
  CHECK(histogram(a.frames[55]) != h0);
  double lo = 1e9, hi = 0;
  for (int t = 1; t < 20; ++t) {
    const double e = diff_energy(a.frames[static_cast<std::size_t>(t)], a.frames[static_cast<std::size_t>(t - 1)]);
    lo = std::min(lo, e);
    hi = std::max(hi, e);
  }
  for (int t = 51; t < 60; ++t) {
    const double e = diff_energy(a.frames[static_cast<std::size_t>(t)], a.frames[static_cast<std::size_t>(t - 1)]);
    CHECK(e >= lo);
    CHECK(e <= hi);
  }
  cfg.seed = 8;
  CHECK(generate_synthetic(cfg, 5, {}).frames[0].pixels != a.frames[0].pixels);
}

TEST_CASE("synthetic span errors and label files") {
  SyntheticSceneConfig cfg;
  CHECK_THROWS_AS(generate_synthetic(cfg, 10, {{5, 12, AnomalyMode::kSpeed2}}), ConfigError);
  CHECK_THROWS_AS(generate_synthetic(cfg, 20, {{2, 8, AnomalyMode::kSpeed2}, {6, 9, AnomalyMode::kReverse}}),
                  ConfigError);
  CHECK_NOTHROW(generate_synthetic(cfg, 20, {{2, 8, AnomalyMode::kSpeed2}, {6, 9, AnomalyMode::kSpeed2}}));
  CHECK(parse_anomaly_mode(to_string(AnomalyMode::kShapeSwap)) == AnomalyMode::kShapeSwap);
  CHECK_THROWS_AS(parse_anomaly_mode("teleport"), ConfigError);

  const fs::path dir = fresh_dir("synth");
  const SyntheticVideo v = generate_synthetic(cfg, 12, {{4, 6, AnomalyMode::kReverse}});
  write_synthetic(dir, v);
  CHECK(read_labels(dir / "labels.txt") == v.labels);
  ClipSpec spec;
  spec.source = dir;
  spec.clip_length = 8;
  spec.tau = 4;
  spec.height = spec.width = 64;
  CHECK(load_clips(spec).size() == 5);
  {
    std::ofstream f(dir / "bad_labels.txt");
    f << "0\n2\n";
  }
  CHECK_THROWS_AS(read_labels(dir / "bad_labels.txt"), ConfigError);
  fs::remove_all(dir);
}
