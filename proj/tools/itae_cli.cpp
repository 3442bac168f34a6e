// Command-line front end for the two-step pipeline.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric abort, 1 anything else.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "itae/errors.hpp"
#include "itae/pipeline.hpp"

namespace fs = std::filesystem;
using namespace itae;

namespace {

struct Common {
  std::string preset;
  std::string config_file;
  std::vector<std::string> sets;       // key=value
  std::map<std::string, std::string> flags;  // --key value
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--preset", c.preset, "ucsd, cuhk, st or desk");
  cmd->add_option("--config", c.config_file, "key = value file");
  cmd->add_option("--set", c.sets, "key=value override, repeatable");
  for (const auto& key : config_keys()) {
    cmd->add_option_function<std::string>("--" + key, [&c, key](const std::string& v) { c.flags[key] = v; },
                                          "config key " + key);
  }
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.preset.empty() ? RunConfig{} : preset(c.preset);
  if (!c.config_file.empty()) cfg = load_config(c.config_file, cfg);
  std::string overrides;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    overrides += s.substr(0, eq) + " = " + s.substr(eq + 1) + "\n";
  }
  for (const auto& [k, v] : c.flags) overrides += k + " = " + v + "\n";
  return parse_config(overrides, cfg);
}

void emit(const std::string& text, const std::string& out) {
  std::cout << text;
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + out);
    f << text;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ITAE + normalizing-flow video anomaly detection"};
  app.require_subcommand(1);
  Common common;

  auto* train_itae_cmd = app.add_subcommand("train-itae", "step 1: train the two-path autoencoder");
  add_common(train_itae_cmd, common);

  auto* train_nf_cmd = app.add_subcommand("train-nf", "step 2: train flows on frozen ITAE features");
  add_common(train_nf_cmd, common);

  auto* score_cmd = app.add_subcommand("score", "per-frame scores for every video of the dataset");
  add_common(score_cmd, common);

  std::vector<std::string> score_files;
  std::string label_file, out_file;
  auto* eval_cmd = app.add_subcommand("eval", "AUC and EER of score files");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--scores", score_files, "score CSV files")->required();
  eval_cmd->add_option("--label-file", label_file, "frame labels (one 0/1 per line)");
  eval_cmd->add_option("--out", out_file, "also write the JSON record here");

  std::vector<double> grid = default_lambda_grid();
  std::string nf_choice;
  auto* sweep_cmd = app.add_subcommand("sweep-lambda", "AUC per lambda");
  add_common(sweep_cmd, common);
  sweep_cmd->add_option("--scores", score_files, "score CSV files")->required();
  sweep_cmd->add_option("--label-file", label_file, "frame labels (one 0/1 per line)");
  sweep_cmd->add_option("--grid", grid, "lambda values")->delimiter(',');
  sweep_cmd->add_option("--nf", nf_choice, "none, static, dynamic or both");
  sweep_cmd->add_option("--out", out_file, "also write the table here");

  std::string synth_dir;
  auto* synth_cmd = app.add_subcommand("gen-synth", "write synthetic videos with labels");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--dir", synth_dir, "output folder (default: dataset)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = resolve(common);
    if (train_itae_cmd->parsed()) {
      const auto r = run_train_itae(cfg);
      std::cout << "itae checkpoint " << RunPaths{cfg.out_dir}.itae().string() << " sha256 " << r.checkpoint_hash
                << "\n";
    } else if (train_nf_cmd->parsed()) {
      const auto r = run_train_nf(cfg);
      std::cout << "itae checkpoint unchanged, sha256 " << r.itae_hash_after << "\n";
    } else if (score_cmd->parsed()) {
      for (const auto& p : run_score(cfg)) std::cout << p.string() << "\n";
    } else if (eval_cmd->parsed()) {
      std::vector<fs::path> files(score_files.begin(), score_files.end());
      const auto in = load_eval_input(files, label_file.empty() ? std::nullopt : std::optional<fs::path>(label_file));
      emit(metrics_json(evaluate(in, cfg.lambda, cfg.nf_paths, cfg.normalize_recon)) + "\n", out_file);
    } else if (sweep_cmd->parsed()) {
      std::vector<fs::path> files(score_files.begin(), score_files.end());
      const auto in = load_eval_input(files, label_file.empty() ? std::nullopt : std::optional<fs::path>(label_file));
      const NfPaths paths = nf_choice.empty() ? cfg.nf_paths : parse_nf_paths(nf_choice);
      emit(lambda_table_csv(sweep_lambda(in, grid, paths, cfg.normalize_recon)), out_file);
    } else if (synth_cmd->parsed()) {
      const std::string dir = synth_dir.empty() ? cfg.dataset : synth_dir;
      if (dir.empty()) throw ConfigError("gen-synth needs --dir or a dataset path");
      run_gen_synth(cfg, dir);
      std::cout << dir << "\n";
    }
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const NumericError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const UndefinedMetricError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
