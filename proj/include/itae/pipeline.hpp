#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "itae/config.hpp"
#include "itae/flow.hpp"
#include "itae/itae_net.hpp"
#include "itae/scoring.hpp"

namespace itae {

// Layout of a run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path itae() const { return root / "itae"; }
  std::filesystem::path flow_static() const { return root / "flow_static"; }
  std::filesystem::path flow_dynamic() const { return root / "flow_dynamic"; }
  std::filesystem::path itae_log() const { return root / "itae_loss.csv"; }
  std::filesystem::path nf_log() const { return root / "nf_loss.csv"; }
  std::filesystem::path config() const { return root / "config.txt"; }
};

// A dataset is one video (frame folder or packed tensor file) or a folder of
// such videos. Returned in lexicographic order.
std::vector<std::filesystem::path> list_videos(const std::filesystem::path& dataset);
std::vector<VideoClip> load_dataset_clips(const RunConfig& cfg, const std::filesystem::path& dataset);

struct TrainItaeReport {
  std::vector<ReconLossReport> steps;
  std::string checkpoint_hash;
};
// Trains on cfg.dataset, writes the checkpoint, loss log and resolved config.
TrainItaeReport run_train_itae(const RunConfig& cfg);

struct TrainNfReport {
  std::string itae_hash_before, itae_hash_after;
  std::vector<double> static_curve, dynamic_curve;
};
// Trains the flows selected by cfg.nf_paths on features of the frozen ITAE.
// Refuses when the ITAE checkpoint was built from a different configuration.
TrainNfReport run_train_nf(const RunConfig& cfg);

// Per-frame components for one video. Missing flow terms are NaN.
struct FrameScores {
  std::vector<std::int64_t> frame_index;
  std::vector<double> recon, nll_static, nll_dynamic;
  std::vector<int> labels;  // empty when unknown

  std::size_t size() const { return frame_index.size(); }
};

struct ScoringModels {
  const ItaeModel* itae = nullptr;
  const FlowStack* flow_static = nullptr;   // optional
  const FlowStack* flow_dynamic = nullptr;  // optional
};

// Sliding windows with stride 1; each frame takes the mean over the windows
// that contain it. Static-slice NLL is held across its tau frames.
FrameScores score_video(const ScoringModels& models, const FrameSequence& seq, const RunConfig& cfg,
                        std::size_t batch = 4);

// S = R + lambda * L, with L from the selected flow paths, min-max normalized
// within the video (R too when normalize_recon).
std::vector<double> fused_scores(const FrameScores& s, double lambda, NfPaths paths, bool normalize_recon);

void write_scores_csv(const std::filesystem::path& path, const FrameScores& s, const std::vector<double>& fused);
FrameScores read_scores_csv(const std::filesystem::path& path);

// Scores every video of cfg.dataset into out_dir/scores/[<dataset>/]<video>.csv
// and returns the files.
std::vector<std::filesystem::path> run_score(const RunConfig& cfg);

// Labels come from the CSV label column unless a label file is given, which
// is then indexed by frame_index.
struct EvalInput {
  std::vector<FrameScores> videos;
};
EvalInput load_eval_input(const std::vector<std::filesystem::path>& csvs,
                          const std::optional<std::filesystem::path>& labels = std::nullopt);

struct EvalResult {
  RocResult roc;
  std::size_t n_frames = 0;
};
EvalResult evaluate(const EvalInput& in, double lambda, NfPaths paths, bool normalize_recon);
std::string metrics_json(const EvalResult& r);

struct LambdaRow {
  double lambda;
  EvalResult result;
};
std::vector<double> default_lambda_grid();
std::vector<LambdaRow> sweep_lambda(const EvalInput& in, const std::vector<double>& grid, NfPaths paths,
                                    bool normalize_recon);
std::string lambda_table_csv(const std::vector<LambdaRow>& rows);

// Writes cfg.synth_videos videos (subfolders when more than one) into dir.
void run_gen_synth(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace itae
