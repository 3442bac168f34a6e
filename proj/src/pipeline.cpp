#include "itae/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "itae/errors.hpp"
#include "itae/features.hpp"
#include "itae/ops.hpp"

namespace itae {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_frame_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".pgm" || ext == ".ppm";
}

bool holds_frames(const fs::path& dir) {
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_frame_file(e.path())) return true;
  }
  return false;
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
}

// Flow samples for a batch of clips, computed once per encoder pass.
struct WindowFeatures {
  Tensor5 recon;
  FlowInput flow;
};

WindowFeatures run_windows(const ItaeModel& model, const Tensor5& frames, bool need_recon) {
  NoGradGuard ng;
  WindowFeatures out;
  const LatentFeatures lat = encode(model, frames);
  if (need_recon) out.recon = decode(model, lat);
  const PooledFeatures pooled = pool_features(lat);
  out.flow.static_in = append_intensity(pooled.static_maps, frames, model.config().tau);
  out.flow.dynamic_in = pooled.dynamic_maps;
  return out;
}

Tensor5 concat_batches(std::vector<Tensor5>& parts) {
  NoGradGuard ng;
  Tensor5 all = concat(parts, kBatch);
  parts.clear();
  return all;
}

std::vector<double> series_or_zero(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::isnan(v[i]) ? 0.0 : v[i];
  return out;
}

bool any_finite(const std::vector<double>& v) {
  return std::any_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::vector<fs::path> list_videos(const fs::path& dataset) {
  if (dataset.empty()) throw ConfigError("dataset path is empty");
  if (!fs::exists(dataset)) throw ConfigError("dataset " + dataset.string() + " does not exist");
  if (fs::is_regular_file(dataset) || holds_frames(dataset)) return {dataset};
  std::vector<fs::path> videos;
  for (const auto& e : fs::directory_iterator(dataset)) {
    if ((e.is_directory() && holds_frames(e.path())) || (e.is_regular_file() && e.path().extension() == ".t5")) {
      videos.push_back(e.path());
    }
  }
  std::sort(videos.begin(), videos.end());
  if (videos.empty()) throw ConfigError("dataset " + dataset.string() + " holds no frames or videos");
  return videos;
}

std::vector<VideoClip> load_dataset_clips(const RunConfig& cfg, const fs::path& dataset) {
  std::vector<VideoClip> clips;
  for (const auto& v : list_videos(dataset)) {
    auto part = load_clips(cfg.clip_spec(v.string()));
    std::move(part.begin(), part.end(), std::back_inserter(clips));
  }
  if (clips.empty()) throw ConfigError("dataset " + dataset.string() + " yields no clips");
  return clips;
}

TrainItaeReport run_train_itae(const RunConfig& cfg) {
  cfg.validate(true);
  const RunPaths paths{cfg.out_dir};
  const auto clips = load_dataset_clips(cfg, cfg.dataset);
  spdlog::info("train-itae: {} clips from {}", clips.size(), cfg.dataset);
  ItaeModel model(cfg.itae());
  ItaeTrainOptions opts;
  opts.lr = cfg.itae_lr;
  opts.lr_min = cfg.itae_lr_min;
  opts.batch_size = cfg.itae_batch;
  opts.epochs = cfg.itae_epochs;
  opts.max_steps = cfg.itae_max_steps;
  opts.seed = cfg.seed;
  TrainItaeReport report;
  opts.on_step = [&](long step, const ReconLossReport& r) {
    report.steps.push_back(r);
    if (step % 20 == 0) spdlog::info("train-itae step {} loss {:.5f}", step, r.total);
  };
  train_itae(model, clips, opts);

  std::string log = "step,l2,ms_ssim,grad,total\n";
  for (std::size_t i = 0; i < report.steps.size(); ++i) {
    const auto& r = report.steps[i];
    log += std::to_string(i) + "," + fmt_double(r.l2) + "," + fmt_double(r.ms_ssim) + "," + fmt_double(r.grad) +
           "," + fmt_double(r.total) + "\n";
  }
  write_text(paths.itae_log(), log);
  fs::remove_all(paths.itae());
  save_itae(paths.itae(), model);
  save_config(paths.config(), cfg);
  report.checkpoint_hash = checkpoint_hash(paths.itae());
  return report;
}

TrainNfReport run_train_nf(const RunConfig& cfg) {
  cfg.validate(true);
  const RunPaths paths{cfg.out_dir};
  if (!fs::exists(paths.itae() / "manifest.txt")) {
    throw ConfigError("no ITAE checkpoint at " + paths.itae().string() + "; run train-itae first");
  }
  TrainNfReport report;
  report.itae_hash_before = checkpoint_hash(paths.itae());
  const ItaeModel model = load_itae(paths.itae());
  if (model.config().fingerprint() != cfg.itae().fingerprint()) {
    throw ConfigError("ITAE checkpoint fingerprint '" + model.config().fingerprint() +
                      "' does not match the config '" + cfg.itae().fingerprint() + "'");
  }

  const auto clips = load_dataset_clips(cfg, cfg.dataset);
  const bool want_static = cfg.nf_paths == NfPaths::kStatic || cfg.nf_paths == NfPaths::kBoth;
  const bool want_dynamic = cfg.nf_paths == NfPaths::kDynamic || cfg.nf_paths == NfPaths::kBoth;
  std::vector<Tensor5> st_parts, dy_parts;
  for (std::size_t i = 0; i < clips.size(); i += 8) {
    std::vector<const VideoClip*> batch;
    for (std::size_t j = i; j < std::min(clips.size(), i + 8); ++j) batch.push_back(&clips[j]);
    WindowFeatures f = run_windows(model, stack_clips(batch), false);
    if (want_static) st_parts.push_back(f.flow.static_in);
    if (want_dynamic) dy_parts.push_back(f.flow.dynamic_in);
  }

  FlowTrainOptions opts;
  opts.lr = cfg.nf_lr;
  opts.lr_min = cfg.nf_lr_min;
  opts.batch_size = cfg.nf_batch;
  opts.epochs = cfg.nf_epochs;
  opts.max_steps = cfg.nf_max_steps;
  opts.seed = cfg.seed;
  std::string log = "step,path,nll\n";
  const Metadata meta{{"itae.checkpoint_hash", report.itae_hash_before}};
  auto train_one = [&](const char* name, std::vector<Tensor5>& parts, const fs::path& dir,
                       std::vector<double>& curve) {
    const Tensor5 samples = concat_batches(parts);
    FlowStack stack(cfg.flow(samples.shape().c()));
    spdlog::info("train-nf: {} flow on {} samples of {}", name, samples.shape().n(), samples.shape().str());
    curve = train_flow(stack, samples, opts).nll_curve;
    for (std::size_t s = 0; s < curve.size(); ++s) {
      log += std::to_string(s) + "," + name + "," + fmt_double(curve[s]) + "\n";
    }
    fs::remove_all(dir);
    save_flow(dir, stack, meta);
  };
  if (want_static) train_one("static", st_parts, paths.flow_static(), report.static_curve);
  if (want_dynamic) train_one("dynamic", dy_parts, paths.flow_dynamic(), report.dynamic_curve);
  // flows from an earlier run with other paths would be stale
  if (!want_static) fs::remove_all(paths.flow_static());
  if (!want_dynamic) fs::remove_all(paths.flow_dynamic());
  write_text(paths.nf_log(), log);
  save_config(paths.config(), cfg);

  report.itae_hash_after = checkpoint_hash(paths.itae());
  if (report.itae_hash_after != report.itae_hash_before) {
    throw ContractError("ITAE checkpoint changed during flow training");
  }
  return report;
}

FrameScores score_video(const ScoringModels& models, const FrameSequence& seq, const RunConfig& cfg,
                        std::size_t batch) {
  if (!models.itae) throw ContractError("score_video: no ITAE model");
  const int T = cfg.clip_length, tau = cfg.tau;
  const auto windows = make_clips(seq, T, tau, 1);
  const auto F = static_cast<std::int64_t>(seq.frame_indices.size());
  FrameAccumulator recon(F), nll_s(F), nll_d(F);
  for (std::size_t i = 0; i < windows.size(); i += batch) {
    std::vector<const VideoClip*> group;
    for (std::size_t j = i; j < std::min(windows.size(), i + batch); ++j) group.push_back(&windows[j]);
    const Tensor5 frames = stack_clips(group);
    const WindowFeatures f = run_windows(*models.itae, frames, true);
    const auto r = recon_score(frames, f.recon, cfg.patch, cfg.patch_stride);
    std::vector<double> ls, ld;
    if (models.flow_static) ls = evaluate_nll(*models.flow_static, f.flow.static_in);
    if (models.flow_dynamic) ld = evaluate_nll(*models.flow_dynamic, f.flow.dynamic_in);
    for (std::size_t g = 0; g < group.size(); ++g) {
      // window i + g starts at sequence position i + g
      const auto start = static_cast<std::int64_t>(i + g);
      for (int t = 0; t < T; ++t) {
        const std::size_t k = g * static_cast<std::size_t>(T) + static_cast<std::size_t>(t);
        recon.add(start + t, r[k]);
        if (!ls.empty()) nll_s.add(start + t, ls[g * static_cast<std::size_t>(T / tau) + static_cast<std::size_t>(t / tau)]);
        if (!ld.empty()) nll_d.add(start + t, ld[k]);
      }
    }
  }
  FrameScores out;
  out.frame_index = seq.frame_indices;
  out.recon = recon.means();
  out.nll_static = models.flow_static ? nll_s.means() : std::vector<double>(static_cast<std::size_t>(F), kNaN);
  out.nll_dynamic = models.flow_dynamic ? nll_d.means() : std::vector<double>(static_cast<std::size_t>(F), kNaN);
  return out;
}

std::vector<double> fused_scores(const FrameScores& s, double lambda, NfPaths paths, bool normalize_recon) {
  const std::vector<double> r = normalize_recon ? minmax_normalize(s.recon) : s.recon;
  const bool use_s = (paths == NfPaths::kStatic || paths == NfPaths::kBoth) && any_finite(s.nll_static);
  const bool use_d = (paths == NfPaths::kDynamic || paths == NfPaths::kBoth) && any_finite(s.nll_dynamic);
  if ((paths == NfPaths::kStatic || paths == NfPaths::kBoth) && !use_s) {
    spdlog::warn("no static NLL in the scores; static term dropped");
  }
  if ((paths == NfPaths::kDynamic || paths == NfPaths::kBoth) && !use_d) {
    spdlog::warn("no dynamic NLL in the scores; dynamic term dropped");
  }
  if (!use_s && !use_d) return fuse(r, std::vector<double>(r.size(), 0.0), lambda);
  const std::vector<double> zeros(s.size(), 0.0);
  return fuse(r, nll_score(use_s ? series_or_zero(s.nll_static) : zeros, use_d ? series_or_zero(s.nll_dynamic) : zeros),
              lambda);
}

void write_scores_csv(const fs::path& path, const FrameScores& s, const std::vector<double>& fused) {
  std::string out = "frame_index,recon,nll_static,nll_dynamic,fused,label\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s.frame_index[i]) + "," + fmt_double(s.recon[i]) + "," + fmt_double(s.nll_static[i]) +
           "," + fmt_double(s.nll_dynamic[i]) + "," + fmt_double(fused[i]) + "," +
           (s.labels.empty() ? std::string() : std::to_string(s.labels[i])) + "\n";
  }
  write_text(path, out);
}

FrameScores read_scores_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read score file " + path.string());
  std::string line;
  std::getline(f, line);
  if (line != "frame_index,recon,nll_static,nll_dynamic,fused,label") {
    throw ConfigError(path.string() + ": unexpected header '" + line + "'");
  }
  FrameScores s;
  bool all_labeled = true;
  std::vector<int> labels;
  int lineno = 1;
  auto num = [&](const std::string& cell) {
    if (cell.empty()) return kNaN;
    double v = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
    }
    return v;
  };
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 6) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 6 columns");
    s.frame_index.push_back(static_cast<std::int64_t>(num(cells[0])));
    s.recon.push_back(num(cells[1]));
    s.nll_static.push_back(num(cells[2]));
    s.nll_dynamic.push_back(num(cells[3]));
    if (cells[5].empty()) {
      all_labeled = false;
    } else {
      labels.push_back(cells[5] == "1" ? 1 : 0);
    }
  }
  if (all_labeled && !labels.empty()) s.labels = std::move(labels);
  return s;
}

std::vector<fs::path> run_score(const RunConfig& cfg) {
  cfg.validate(true);
  const RunPaths paths{cfg.out_dir};
  const std::string itae_hash = checkpoint_hash(paths.itae());
  const ItaeModel model = load_itae(paths.itae());
  if (model.config().fingerprint() != cfg.itae().fingerprint()) {
    throw ConfigError("ITAE checkpoint fingerprint does not match the config");
  }
  std::optional<FlowStack> fs_static, fs_dynamic;
  auto load_checked = [&](const fs::path& dir, std::optional<FlowStack>& slot) {
    if (!fs::exists(dir / "manifest.txt")) {
      throw ConfigError("nf_paths = " + to_string(cfg.nf_paths) + " but " + dir.string() + " is missing; run train-nf");
    }
    const Checkpoint meta_only = load_checkpoint(dir);
    const auto it = meta_only.meta.find("itae.checkpoint_hash");
    if (it == meta_only.meta.end() || it->second != itae_hash) {
      throw ConfigError("flow " + dir.string() + " was trained on a different ITAE checkpoint");
    }
    slot.emplace(load_flow(dir));
  };
  if (cfg.nf_paths == NfPaths::kStatic || cfg.nf_paths == NfPaths::kBoth) load_checked(paths.flow_static(), fs_static);
  if (cfg.nf_paths == NfPaths::kDynamic || cfg.nf_paths == NfPaths::kBoth) load_checked(paths.flow_dynamic(), fs_dynamic);
  const ScoringModels models{&model, fs_static ? &*fs_static : nullptr, fs_dynamic ? &*fs_dynamic : nullptr};

  std::vector<fs::path> written;
  const auto videos = list_videos(cfg.dataset);
  fs::path dataset(cfg.dataset);
  if (dataset.filename().empty()) dataset = dataset.parent_path();  // trailing slash
  // a multi-video dataset gets its own folder so test sets do not collide
  const fs::path score_dir = videos.size() == 1 && videos.front() == fs::path(cfg.dataset)
                                 ? paths.root / "scores"
                                 : paths.root / "scores" / dataset.filename();
  for (const auto& video : videos) {
    const FrameSequence seq = load_frames(cfg.clip_spec(video.string()));
    FrameScores s = score_video(models, seq, cfg);
    const fs::path label_file = fs::is_directory(video) ? video / "labels.txt" : fs::path(video).replace_extension(".labels.txt");
    if (fs::exists(label_file)) {
      const auto labels = read_labels(label_file);
      for (auto idx : s.frame_index) {
        if (idx >= static_cast<std::int64_t>(labels.size())) {
          throw ConfigError(label_file.string() + " has no label for frame " + std::to_string(idx));
        }
        s.labels.push_back(labels[static_cast<std::size_t>(idx)]);
      }
    }
    const fs::path out = score_dir / (video.stem().string() + ".csv");
    write_scores_csv(out, s, fused_scores(s, cfg.lambda, cfg.nf_paths, cfg.normalize_recon));
    spdlog::info("score: {} frames of {} -> {}", s.size(), video.string(), out.string());
    written.push_back(out);
  }
  save_config(paths.config(), cfg);
  return written;
}

EvalInput load_eval_input(const std::vector<fs::path>& csvs, const std::optional<fs::path>& labels) {
  if (csvs.empty()) throw ConfigError("no score files given");
  if (labels && csvs.size() != 1) throw ConfigError("a label file applies to a single score file");
  EvalInput in;
  for (const auto& p : csvs) {
    FrameScores s = read_scores_csv(p);
    if (labels) {
      const auto l = read_labels(*labels);
      s.labels.clear();
      for (auto idx : s.frame_index) {
        if (idx < 0 || idx >= static_cast<std::int64_t>(l.size())) {
          throw DimensionError("label file " + labels->string() + " has " + std::to_string(l.size()) +
                               " entries; frame " + std::to_string(idx) + " has none");
        }
        s.labels.push_back(l[static_cast<std::size_t>(idx)]);
      }
    }
    if (s.labels.size() != s.size()) throw ConfigError(p.string() + " has no labels; pass a label file");
    in.videos.push_back(std::move(s));
  }
  return in;
}

EvalResult evaluate(const EvalInput& in, double lambda, NfPaths paths, bool normalize_recon) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& v : in.videos) {
    const auto f = fused_scores(v, lambda, paths, normalize_recon);
    scores.insert(scores.end(), f.begin(), f.end());
    labels.insert(labels.end(), v.labels.begin(), v.labels.end());
  }
  EvalResult r;
  r.roc = roc_auc_eer(scores, labels);
  r.n_frames = scores.size();
  return r;
}

std::string metrics_json(const EvalResult& r) {
  return "{\"auc\":" + fmt_double(r.roc.auc) + ",\"eer\":" + fmt_double(r.roc.eer) +
         ",\"n_frames\":" + std::to_string(r.n_frames) + "}";
}

std::vector<double> default_lambda_grid() { return {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}; }

std::vector<LambdaRow> sweep_lambda(const EvalInput& in, const std::vector<double>& grid, NfPaths paths,
                                    bool normalize_recon) {
  std::vector<LambdaRow> rows;
  for (double l : grid) rows.push_back({l, evaluate(in, l, paths, normalize_recon)});
  return rows;
}

std::string lambda_table_csv(const std::vector<LambdaRow>& rows) {
  std::string out = "lambda,auc,eer,n_frames\n";
  for (const auto& r : rows) {
    out += fmt_double(r.lambda) + "," + fmt_double(r.result.roc.auc) + "," + fmt_double(r.result.roc.eer) + "," +
           std::to_string(r.result.n_frames) + "\n";
  }
  return out;
}

void run_gen_synth(const RunConfig& cfg, const fs::path& dir) {
  cfg.validate();
  const auto spans = cfg.anomaly_spans();
  for (int v = 0; v < cfg.synth_videos; ++v) {
    const SyntheticVideo video = generate_synthetic(cfg.scene(static_cast<std::uint64_t>(v)), cfg.synth_frames, spans);
    char name[32];
    std::snprintf(name, sizeof(name), "video_%03d", v);
    write_synthetic(cfg.synth_videos == 1 ? dir : dir / name, video);
  }
}

}  // namespace itae
