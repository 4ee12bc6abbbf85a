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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dsprobe/baselines.hpp"
#include "dsprobe/dataset.hpp"
#include "dsprobe/glyphs.hpp"
#include "dsprobe/knn.hpp"
#include "dsprobe/model.hpp"
#include "dsprobe/pd.hpp"
#include "dsprobe/saliency.hpp"
#include "dsprobe/train.hpp"

namespace dsprobe {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kEngineVersion = "0.1.0";

/// How to obtain one dataset.
struct DatasetRecipe {
  enum class Generator { kGlyphs, kIdx, kDirectory };
  Generator generator = Generator::kGlyphs;
  // glyphs
  std::vector<std::uint32_t> templates{0, 1};  // template of each class
  std::size_t per_class = 1000;
  std::size_t height = 28;
  std::size_t width = 28;
  GlyphStyle style;
  // idx
  std::filesystem::path images;
  std::filesystem::path labels;
  std::vector<std::uint32_t> keep_classes;  // empty keeps all, otherwise relabeled 0..
  std::optional<std::size_t> limit;         // first n samples
  // directory
  std::filesystem::path path;
  std::optional<std::uint64_t> seed;  // defaults to a stream of the experiment seed
  std::optional<SpuriousSpec> spurious;
};

/// Relative paths are resolved against `base`.
DatasetRecipe dataset_recipe_from_json(const nlohmann::json& j, const std::filesystem::path& base);
/// Input shape (C, H, W) when known without loading data.
std::optional<Shape> recipe_sample_shape(const DatasetRecipe& recipe);
LabeledDataset build_dataset(const DatasetRecipe& recipe, std::uint64_t default_seed);

struct DominoArm {
  std::string name;
  DatasetRecipe top;
  DatasetRecipe bottom;
  double correlation = 1.0;
};

struct SaliencyOptions {
  std::size_t probe = 1;
  SaliencyMethod method = SaliencyMethod::kGradCamSoftKnn;
  std::vector<std::size_t> samples{0};  // rows of the held-out split
  std::optional<std::uint32_t> target;
};

struct ExperimentConfig {
  std::string kind;  // patch-pd | domino | pd-evolution | pd-pvi | prop1 | harmfulness | ensemble-baseline
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> output_dir;
  std::optional<DatasetRecipe> dataset;
  nlohmann::json model = "cnn-small";  // preset name or full spec
  TrainConfig training;
  bool training_seed_pinned = false;
  double val_fraction = 0.2;
  ProbeParams probe;
  std::vector<std::size_t> snapshot_epochs{1, 2, 3, 4, 5};
  DetectorParams detector;
  bool mu_ref_from_intervened = true;
  std::vector<DominoArm> domino;
  // harmfulness
  std::vector<nlohmann::json> families{"mlp-2", "patchpool"};
  DifficultyMetric metric = DifficultyMetric::kVInfo;
  std::vector<std::uint64_t> harm_seeds{1, 2, 3};
  double harm_tolerance = 1e-6;
  // ensemble-baseline
  EnsembleSpec ensemble;
  // pd-pvi and prop1
  std::size_t bin_width = 2;
  std::size_t null_steps = 400;
  double null_lr = 0.05;
  double psi = 0.3;
  std::optional<std::size_t> prop1_L;
  std::optional<std::size_t> prop1_K;
  // stand-alone verbs
  SaliencyOptions saliency;
  std::optional<std::filesystem::path> checkpoint;
};

/// Strict parse: unknown fields and a missing "seed" are errors, and every
/// referenced file must exist. `base` resolves relative paths.
ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base);

const std::vector<std::string>& experiment_kinds();

/// Model for a dataset: a preset name is instantiated for its shape and
/// class count, a full spec must match them.
ModelSpec resolve_model_spec(const nlohmann::json& model, const Shape& input_shape,
                             std::size_t classes);

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // overrides the config
  std::optional<std::uint64_t> seed_override;
  std::optional<std::vector<std::size_t>> snapshot_epochs;
  std::optional<std::string> expected_kind;  // set by the kind-specific verbs
};

struct RunResult {
  nlohmann::json report;
  std::filesystem::path out_dir;
};

/// Runs the configured pipeline and writes into the output directory:
/// report.json, config.json (the input bytes), metadata.json (timestamps
/// and timings, the only non-deterministic file), manifest.json and the
/// CSV/DSTF/checkpoint artifacts. A failure after the config was accepted
/// leaves a FAILED file naming the stage.
RunResult run_experiment(const std::filesystem::path& config_path, const RunOptions& options = {});

/// Stand-alone stages behind the CLI verbs; each writes into `out_dir` and
/// returns the manifest.
nlohmann::json gen_data_stage(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
nlohmann::json train_stage(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                           const std::optional<std::filesystem::path>& resume);
nlohmann::json probe_stage(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
nlohmann::json saliency_stage(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace dsprobe
