// Copyright (c) 2026 The dsprobe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dsprobe/error.hpp"
#include "dsprobe/experiment.hpp"
#include "dsprobe/report.hpp"

namespace fs = std::filesystem;

namespace {

// Exit codes.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed_override;
  std::vector<std::size_t> snapshot_epochs;
  std::string resume;
};

void add_common(CLI::App* cmd, Common& c, bool snapshots) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output directory (overrides output_dir)");
  cmd->add_option("--seed-override", c.seed_override, "Replace the config seed");
  if (snapshots) {
    cmd->add_option("--snapshot-epochs", c.snapshot_epochs, "Epochs to snapshot, e.g. 0,1,2,5")
        ->delimiter(',');
  }
}

dsprobe::ExperimentConfig load_config(const Common& c) {
  const fs::path path(c.config);
  dsprobe::ExperimentConfig cfg =
      dsprobe::parse_experiment_config(dsprobe::read_file(path), path.parent_path());
  if (c.seed_override) cfg.seed = *c.seed_override;
  return cfg;
}

fs::path stage_out(const Common& c, const dsprobe::ExperimentConfig& cfg) {
  if (!c.out.empty()) return c.out;
  if (cfg.output_dir) return *cfg.output_dir;
  throw dsprobe::ConfigError("config: no output directory (set output_dir or pass --out)");
}

int run_full(const Common& c, const std::optional<std::string>& kind) {
  dsprobe::RunOptions opts;
  if (!c.out.empty()) opts.out_dir = c.out;
  opts.seed_override = c.seed_override;
  if (!c.snapshot_epochs.empty()) opts.snapshot_epochs = c.snapshot_epochs;
  opts.expected_kind = kind;
  const dsprobe::RunResult r = dsprobe::run_experiment(c.config, opts);
  std::cout << r.report.at("kind").get<std::string>() << " report: " << (r.out_dir / "report.json").string()
            << "\n";
  return kExitOk;
}

template <typename Stage>
int run_stage(const Common& c, Stage stage) {
  const dsprobe::ExperimentConfig cfg = load_config(c);
  const fs::path out = stage_out(c, cfg);
  fs::create_directories(out);
  const nlohmann::json manifest = stage(cfg, out);
  dsprobe::write_file(out / "manifest.json", manifest.dump(2) + "\n");
  for (const auto& a : manifest.at("artifacts")) {
    std::cout << (out / a.at("path").get<std::string>()).string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prediction-depth probes for spurious-feature diagnosis"};
  app.require_subcommand(1);
  Common c;

  // Verbs that run a whole experiment of one kind.
  const std::map<std::string, std::pair<std::string, std::string>> kind_verbs{
      {"pd-report", {"patch-pd", "PD histograms and early-peak verdict, patched vs intervened"}},
      {"pvi-report", {"pd-pvi", "PD against pointwise V-information"}},
      {"prop1-check", {"prop1", "Check the PD-gap proposition preconditions"}},
      {"ensemble-entropy", {"ensemble-baseline", "Ensemble predictive-entropy baseline"}},
      {"domino-eval", {"domino", "Validation and core-only accuracy on dominoes"}},
      {"harmfulness", {"harmfulness", "Harmful or benign verdict per model family"}},
      {"monitor", {"pd-evolution", "PD histograms across training epochs"}},
  };
  std::map<std::string, CLI::App*> kind_cmds;
  for (const auto& [verb, info] : kind_verbs) {
    CLI::App* cmd = app.add_subcommand(verb, info.second);
    add_common(cmd, c, verb == "monitor");
    kind_cmds[verb] = cmd;
  }
  CLI::App* run = app.add_subcommand("run", "Run the experiment a config describes");
  add_common(run, c, true);

  CLI::App* gen = app.add_subcommand("gen-data", "Write the configured dataset (and its intervened twin)");
  add_common(gen, c, false);
  CLI::App* trn = app.add_subcommand("train", "Train the configured model and write a checkpoint");
  add_common(trn, c, false);
  trn->add_option("--resume", c.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  CLI::App* prb = app.add_subcommand("probe", "PD records and histogram for a trained model");
  add_common(prb, c, false);
  CLI::App* sal = app.add_subcommand("saliency", "Soft-kNN Grad-CAM maps at a probe layer");
  add_common(sal, c, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_full(c, std::nullopt);
    for (const auto& [verb, cmd] : kind_cmds) {
      if (cmd->parsed()) return run_full(c, kind_verbs.at(verb).first);
    }
    if (gen->parsed()) return run_stage(c, dsprobe::gen_data_stage);
    if (trn->parsed()) {
      std::optional<fs::path> resume;
      if (!c.resume.empty()) resume = c.resume;
      return run_stage(c, [&](const dsprobe::ExperimentConfig& cfg, const fs::path& out) {
        return dsprobe::train_stage(cfg, out, resume);
      });
    }
    if (prb->parsed()) return run_stage(c, dsprobe::probe_stage);
    if (sal->parsed()) return run_stage(c, dsprobe::saliency_stage);
  } catch (const dsprobe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dsprobe::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
