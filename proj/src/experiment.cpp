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

#include "dsprobe/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <limits>
#include <set>

#include "dsprobe/checkpoint.hpp"
#include "dsprobe/idx.hpp"
#include "dsprobe/infometrics.hpp"
#include "dsprobe/report.hpp"
#include "dsprobe/rng.hpp"
#include "dsprobe/spurious.hpp"
#include "dsprobe/tensor_io.hpp"
#include "json_util.hpp"

namespace dsprobe {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Seed streams of the experiment seed.
constexpr std::uint64_t kInjectStream = 1;
constexpr std::uint64_t kInterveneStream = 2;
constexpr std::uint64_t kPairStream = 3;
constexpr std::uint64_t kTopStream = 0x746f70;
constexpr std::uint64_t kBottomStream = 0x626f74;
constexpr std::size_t kFocusSamples = 20;  // held-out samples in the patch-focus summary

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"cnn-small", "mlp-2",           "patchpool",
                                              "linear",    "conv-relu-linear", "cnn-2conv"};
  return names;
}

template <typename V>
V field(const json& j, const char* key, V fallback, const std::string& where) {
  try {
    return detail::get_or<V>(j, key, fallback);
  } catch (const json::exception& e) {
    throw ConfigError(where + ": field '" + key + "': " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ConfigError(what + ": file not found: " + p.string());
}

std::string join(const std::vector<std::string>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

std::string pd_cell(const std::optional<std::size_t>& pd) {
  return pd ? std::to_string(*pd) : "undefined";
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string model_label(const json& m) {
  if (m.is_string()) return m.get<std::string>();
  return m.value("name", std::string("custom"));
}

void validate_model_entry(const json& m, const std::optional<Shape>& shape, std::size_t classes,
                          const std::string& where) {
  if (m.is_string()) {
    const auto name = m.get<std::string>();
    const auto& names = preset_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw ConfigError(where + ": unknown model preset '" + name + "'");
    }
    if (shape) resolve_probes(preset_model(name, *shape, classes));
    return;
  }
  if (!m.is_object()) throw ConfigError(where + ": model must be a preset name or a spec object");
  json spec = m;
  spec.erase("name");
  resolve_probes(model_spec_from_json(spec));
}

// ---------------------------------------------------------------------------
// Output bookkeeping.

class RunDir {
 public:
  explicit RunDir(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
    fs::remove(dir_ / "FAILED", ec);
  }

  const fs::path& dir() const { return dir_; }

  void stage(const std::string& name) {
    close_stage();
    stage_ = name;
    stage_start_ = std::chrono::steady_clock::now();
  }
  const std::string& current_stage() const { return stage_; }

  void write(const std::string& name, const std::string& bytes, const std::string& kind) {
    write_file(dir_ / name, bytes);
    record(name, kind);
  }
  void csv(const std::string& name, const CsvTable& t) { write(name, t.str(), "csv"); }
  void record(const std::string& name, const std::string& kind) {
    artifacts_.push_back({{"path", name}, {"kind", kind}, {"stage", stage_}});
  }

  json manifest() const { return {{"schema_version", kReportSchemaVersion}, {"artifacts", artifacts_}}; }

  json timings() {
    close_stage();
    return timings_;
  }

 private:
  void close_stage() {
    if (stage_.empty()) return;
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - stage_start_).count();
    timings_.push_back({{"stage", stage_}, {"seconds", s}});
    stage_.clear();
  }

  fs::path dir_;
  json artifacts_ = json::array();
  json timings_ = json::array();
  std::string stage_;
  std::chrono::steady_clock::time_point stage_start_;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces.

struct Ctx {
  const ExperimentConfig& cfg;
  std::uint64_t seed;
  RunDir& run;

  TrainConfig training() const {
    TrainConfig t = cfg.training;
    if (!cfg.training_seed_pinned) t.seed = seed;
    return t;
  }
  ProbeParams probe() const {
    ProbeParams p = cfg.probe;
    p.seed = seed;
    return p;
  }
};

struct TrainedArm {
  std::string name;
  Splits split;
  Model model;
  TrainState state;
  double val_accuracy = 0.0;
};

TrainedArm train_arm(Ctx& c, const std::string& name, const LabeledDataset& ds) {
  c.run.stage("train:" + name);
  Splits split = split_dataset(ds, c.cfg.val_fraction, 0.0, c.seed);
  Model model(resolve_model_spec(c.cfg.model, ds.sample_shape(), ds.classes), c.seed);
  const TrainConfig tc = c.training();
  TrainState state = train(model, split.train, &split.val, tc);
  model.meta.dataset_id = ds.provenance;
  const double acc = accuracy(model, split.val);
  save_checkpoint(c.run.dir() / ("model_" + name + ".dsck"), model, state);
  c.run.record("model_" + name + ".dsck", "checkpoint");
  return {name, std::move(split), std::move(model), std::move(state), acc};
}

CsvTable records_csv(std::span<const PdRecord> records) {
  CsvTable t{{"sample_id", "label", "pd", "final_prediction", "probe_predictions", "probe_valid"}, {}};
  for (const auto& r : records) {
    std::vector<std::string> cls, val;
    for (auto k : r.classes) cls.push_back(std::to_string(k));
    for (auto v : r.valid) val.push_back(std::to_string(v));
    t.add({std::to_string(r.sample_id), std::to_string(r.label), pd_cell(r.pd),
           r.classes.empty() ? "" : std::to_string(r.classes.back()), join(cls, ';'), join(val, ';')});
  }
  return t;
}

struct ProbedArm {
  std::vector<PdRecord> records;
  PdHistogram histogram;
};

ProbedArm probe_arm(Ctx& c, const TrainedArm& arm) {
  c.run.stage("probe:" + arm.name);
  const ProbeSet set = build_probe_set(arm.model, arm.split.train, c.probe());
  ProbedArm out;
  out.records = compute_pd_records(arm.model, set, arm.split.val);
  out.histogram = pd_histogram(out.records, arm.model.probe_count());
  c.run.csv("pd_histogram_" + arm.name + ".csv", histogram_csv(out.histogram));
  c.run.csv("pd_records_" + arm.name + ".csv", records_csv(out.records));
  return out;
}

json training_json(const TrainedArm& arm) {
  json losses = json::array(), val = json::array();
  for (double v : arm.state.train_loss) losses.push_back(json6(v));
  for (double v : arm.state.val_loss) val.push_back(json6(v));
  return {{"epochs_run", arm.state.epoch},
          {"stopped_early", arm.state.stopped_early},
          {"best_epoch", arm.state.best_epoch},
          {"train_loss", losses},
          {"val_loss", val},
          {"val_accuracy", json6(arm.val_accuracy)},
          {"train_size", arm.split.train.size()},
          {"val_size", arm.split.val.size()}};
}

std::pair<LabeledDataset, LabeledDataset> spurious_pair(Ctx& c) {
  c.run.stage("data");
  LabeledDataset ds = build_dataset(*c.cfg.dataset, c.seed);
  if (!ds.spurious) throw ConfigError(c.cfg.kind + ": the dataset needs a spurious feature");
  LabeledDataset di = intervene_randomize_spurious(ds, Rng::derive(c.seed, kInterveneStream));
  return {std::move(ds), std::move(di)};
}

std::string peak_verdict(bool s, bool i) {
  if (s && !i) return "spurious only";
  if (s && i) return "both";
  if (i) return "intervened only";
  return "neither";
}

// Mean saliency inside the stamped patch against the rest of the image,
// pooled over the first held-out samples of a patched arm.
json patch_focus(Ctx& c, const TrainedArm& arm) {
  c.run.stage("saliency:" + arm.name);
  const LabeledDataset& val = arm.split.val;
  const SpuriousRecord& sp = *val.spurious;
  const ProbeSet set = build_probe_set(arm.model, arm.split.train, c.probe());
  const SoftKnnHead head = make_soft_knn_head(set, c.cfg.saliency.probe, c.cfg.probe.k);
  const std::size_t h = val.images.dim(2), w = val.images.dim(3), p = sp.spec.patch_size;
  const std::size_t n = std::min(kFocusSamples, val.size());
  CsvTable t{{"sample", "row", "col", "inside_mean", "outside_mean"}, {}};
  double inside = 0.0, outside = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const SaliencyMap m = soft_knn_saliency(arm.model, head, val.images.rows(i, i + 1), c.cfg.saliency.method);
    const Location at = sp.spec.kind == SpuriousSpec::Kind::kPatch ? sp.spec.locations[sp.attribute[i]]
                                                                  : sp.spec.locations[0];
    double in = 0.0, out = 0.0;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t col = 0; col < w; ++col) {
        const bool hit = r >= at.row && r < at.row + p && col >= at.col && col < at.col + p;
        (hit ? in : out) += m.values[r * w + col];
      }
    }
    in /= static_cast<double>(p * p);
    out /= static_cast<double>(h * w - p * p);
    inside += in / static_cast<double>(n);
    outside += out / static_cast<double>(n);
    t.add({std::to_string(i), std::to_string(at.row), std::to_string(at.col), format6(in), format6(out)});
  }
  c.run.csv("saliency_focus_" + arm.name + ".csv", t);
  return {{"probe", c.cfg.saliency.probe},
          {"method", to_string(c.cfg.saliency.method)},
          {"samples", n},
          {"inside_mean", json6(inside)},
          {"outside_mean", json6(outside)},
          {"ratio", json6(outside > 0.0 ? inside / outside : std::numeric_limits<double>::infinity())}};
}

// ---------------------------------------------------------------------------
// Experiment kinds.

json run_patch_pd(Ctx& c) {
  auto [ds, di] = spurious_pair(c);
  json arms = json::object();
  std::vector<std::pair<TrainedArm, ProbedArm>> done;
  for (auto* d : {&ds, &di}) {
    const std::string name = d == &ds ? "spurious" : "intervened";
    TrainedArm arm = train_arm(c, name, *d);
    ProbedArm probed = probe_arm(c, arm);
    done.emplace_back(std::move(arm), std::move(probed));
  }
  c.run.stage("analyze");
  DetectorParams dp = c.cfg.detector;
  if (c.cfg.mu_ref_from_intervened) dp.mu_ref = done[1].second.histogram.mean_pd;
  std::vector<bool> flags;
  for (auto& [arm, probed] : done) {
    const DetectorVerdict v = early_peak_detector(probed.histogram, dp);
    flags.push_back(v.suspicious);
    arms[arm.name] = {{"training", training_json(arm)},
                      {"histogram", histogram_json(probed.histogram)},
                      {"detector", detector_json(v)}};
  }
  const double ms = done[0].second.histogram.mean_pd, mi = done[1].second.histogram.mean_pd;
  json out = {{"arms", arms},
              {"mean_pd_ratio", json6(ms / mi)},
              {"early_peak_verdict", peak_verdict(flags[0], flags[1])}};
  // Grad-CAM needs a spatial grid at the probe; flat probes get no summary.
  const Model& m = done[0].first.model;
  const std::size_t layer = m.probe_layers().at(std::min(c.cfg.saliency.probe, m.probe_count()) - 1);
  const bool spatial = c.cfg.saliency.method == SaliencyMethod::kInputGrad ||
                       m.forward_until(done[0].first.split.val.images.rows(0, 1), layer).rank() == 4;
  if (ds.spurious->spec.kind != SpuriousSpec::Kind::kDominoTop && spatial) {
    out["patch_focus"] = patch_focus(c, done[0].first);
  }
  return out;
}

json run_pd_evolution(Ctx& c, const std::vector<std::size_t>& snapshots) {
  c.run.stage("data");
  const LabeledDataset ds = build_dataset(*c.cfg.dataset, c.seed);
  const Splits split = split_dataset(ds, c.cfg.val_fraction, 0.0, c.seed);
  Model model(resolve_model_spec(c.cfg.model, ds.sample_shape(), ds.classes), c.seed);
  c.run.stage("train+probe");
  TrainState state = initial_train_state(c.training());
  const auto series =
      epoch_snapshot_series(model, split.train, split.val, c.training(), c.probe(), snapshots, &state);
  save_checkpoint(c.run.dir() / "model.dsck", model, state);
  c.run.record("model.dsck", "checkpoint");

  c.run.stage("analyze");
  CsvTable hist{{"epoch", "probe", "count"}, {}};
  CsvTable summary{{"epoch", "val_accuracy", "mean_pd", "undefined", "early_mass", "suspicious"}, {}};
  json snaps = json::array();
  json first_suspicious = nullptr;
  for (const auto& s : series) {
    const DetectorVerdict v = early_peak_detector(s.histogram, c.cfg.detector);
    if (v.suspicious && first_suspicious.is_null()) first_suspicious = s.epoch;
    for (const auto& row : histogram_csv(s.histogram).rows) {
      hist.add({std::to_string(s.epoch), row[0], row[1]});
    }
    summary.add({std::to_string(s.epoch), format6(s.val_accuracy), format6(s.histogram.mean_pd),
                 std::to_string(s.histogram.undefined), format6(v.early_mass),
                 v.suspicious ? "1" : "0"});
    snaps.push_back({{"epoch", s.epoch},
                     {"val_accuracy", json6(s.val_accuracy)},
                     {"histogram", histogram_json(s.histogram)},
                     {"detector", detector_json(v)}});
  }
  c.run.csv("pd_evolution.csv", hist);
  c.run.csv("pd_evolution_summary.csv", summary);
  json out = {{"snapshots", snaps}, {"first_suspicious_epoch", first_suspicious}};
  if (!series.empty()) {
    out["undefined_first"] = series.front().histogram.undefined;
    out["undefined_final"] = series.back().histogram.undefined;
    out["undefined_non_increasing"] =
        series.back().histogram.undefined <= series.front().histogram.undefined;
  }
  return out;
}

json run_domino(Ctx& c) {
  json arms = json::array();
  CsvTable table{{"arm", "validation_accuracy", "core_only_accuracy"}, {}};
  for (std::size_t a = 0; a < c.cfg.domino.size(); ++a) {
    const DominoArm& arm = c.cfg.domino[a];
    c.run.stage("data:" + arm.name);
    const LabeledDataset top = build_dataset(arm.top, Rng::derive(c.seed, kTopStream + a));
    const LabeledDataset bottom = build_dataset(arm.bottom, Rng::derive(c.seed, kBottomStream + a));
    const LabeledDataset dom =
        compose_dominoes(top, bottom, Rng::derive(c.seed, kPairStream + a), arm.correlation);
    TrainedArm trained = train_arm(c, arm.name, dom);
    c.run.stage("analyze:" + arm.name);
    const CoreOnlyAccuracy r = core_only_accuracy(trained.model, trained.split.val);
    table.add({arm.name, format6(r.validation), format6(r.core_only)});
    arms.push_back({{"name", arm.name},
                    {"validation_accuracy", json6(r.validation)},
                    {"core_only_accuracy", json6(r.core_only)},
                    {"training", training_json(trained)}});
  }
  c.run.csv("domino_summary.csv", table);
  return {{"arms", arms}};
}

struct InfoArm {
  TrainedArm trained;
  ProbedArm probed;
  PviReport pvi;
  BinnedCorrelation by_entropy;
  BinnedCorrelation by_pvi;
  std::vector<double> probe_vinfo;
};

InfoArm info_arm(Ctx& c, const std::string& name, const LabeledDataset& ds) {
  TrainedArm trained = train_arm(c, name, ds);
  ProbedArm probed = probe_arm(c, trained);
  c.run.stage("pvi:" + name);
  NullModelOptions opts{c.cfg.null_steps, c.cfg.null_lr};
  const Model null_model = train_null_model(trained.split.train.labels, trained.model.spec(), c.seed, opts);
  PviReport pvi = pvi_report(null_model, trained.model, trained.split.val);
  const std::size_t n = trained.model.probe_count();
  BinnedCorrelation by_entropy =
      pd_pvi_binned_correlation(probed.records, pvi.neg_log2_gprime, c.cfg.bin_width, n);
  BinnedCorrelation by_pvi = pd_pvi_binned_correlation(probed.records, pvi.pvi, c.cfg.bin_width, n);
  std::vector<double> probe_vinfo = probe_v_information(probed.records, c.cfg.probe.k, ds.classes);

  CsvTable samples{{"sample_id", "label", "pd", "pvi", "neg_log2_gprime", "neg_log2_null"}, {}};
  for (std::size_t i = 0; i < probed.records.size(); ++i) {
    const auto& r = probed.records[i];
    samples.add({std::to_string(r.sample_id), std::to_string(r.label), pd_cell(r.pd),
                 format6(pvi.pvi[i]), format6(pvi.neg_log2_gprime[i]), format6(pvi.neg_log2_g[i])});
  }
  c.run.csv("pvi_" + name + ".csv", samples);
  CsvTable bins{{"pd_lo", "pd_hi", "count", "mean_conditional_entropy_bits", "mean_pvi_bits"}, {}};
  for (std::size_t b = 0; b < by_entropy.bins.size(); ++b) {
    const auto& e = by_entropy.bins[b];
    bins.add({std::to_string(e.lo), std::to_string(e.hi), std::to_string(e.count),
              format6(e.mean_value), format6(by_pvi.bins[b].mean_value)});
  }
  c.run.csv("pd_bins_" + name + ".csv", bins);
  CsvTable pv{{"probe", "v_information_bits"}, {}};
  for (std::size_t p = 0; p < probe_vinfo.size(); ++p) {
    pv.add({std::to_string(p + 1), format6(probe_vinfo[p])});
  }
  c.run.csv("probe_vinfo_" + name + ".csv", pv);
  return {std::move(trained), std::move(probed), std::move(pvi), std::move(by_entropy),
          std::move(by_pvi), std::move(probe_vinfo)};
}

json bins_json(const BinnedCorrelation& b) {
  json bins = json::array();
  for (const auto& e : b.bins) {
    bins.push_back({{"lo", e.lo}, {"hi", e.hi}, {"count", e.count}, {"mean", json6(e.mean_value)}});
  }
  json empty = json::array();
  for (const auto& [lo, hi] : b.empty_bins) empty.push_back({lo, hi});
  return {{"bins", bins},
          {"empty_bins", empty},
          {"undefined_skipped", b.undefined_skipped},
          {"spearman", json6(b.spearman)}};
}

json info_arm_json(const InfoArm& a) {
  json pv = json::array();
  for (double v : a.probe_vinfo) pv.push_back(json6(v));
  const double mean_pvi = mean_of(a.pvi.pvi);
  return {{"training", training_json(a.trained)},
          {"histogram", histogram_json(a.probed.histogram)},
          {"h_y_bits", json6(a.pvi.h_y)},
          {"h_y_given_x_bits", json6(a.pvi.h_y_given_x)},
          {"v_information_bits", json6(a.pvi.v_information)},
          {"mean_pvi_bits", json6(mean_pvi)},
          {"pvi_identity_error", std::abs(mean_pvi - a.pvi.v_information)},
          {"clamped_probabilities", a.pvi.clamp_count},
          {"pd_vs_conditional_entropy", bins_json(a.by_entropy)},
          {"pd_vs_pvi", bins_json(a.by_pvi)},
          {"probe_v_information_bits", pv}};
}

json run_pd_pvi(Ctx& c, std::vector<InfoArm>* keep = nullptr) {
  auto [ds, di] = spurious_pair(c);
  std::vector<InfoArm> arms;
  arms.push_back(info_arm(c, "spurious", ds));
  arms.push_back(info_arm(c, "intervened", di));
  c.run.stage("analyze");
  const bool pd_order = arms[0].probed.histogram.mean_pd < arms[1].probed.histogram.mean_pd;
  const bool info_order = arms[0].pvi.v_information > arms[1].pvi.v_information;
  json out = {{"arms", {{"spurious", info_arm_json(arms[0])}, {"intervened", info_arm_json(arms[1])}}},
              {"pd_ordering", pd_order},
              {"information_ordering", info_order},
              {"direction", pd_order && info_order ? "consistent" : "inconsistent"}};
  if (keep) *keep = std::move(arms);
  return out;
}

DatasetInfo dataset_info(const InfoArm& a) {
  DatasetInfo d;
  for (const auto& r : a.probed.records) d.pd.push_back(r.pd);
  d.h_y_given_x = a.pvi.h_y_given_x;
  d.v_information = a.pvi.v_information;
  d.probe_v_information = a.probe_vinfo;
  return d;
}

json run_prop1(Ctx& c) {
  std::vector<InfoArm> arms;
  json out = run_pd_pvi(c, &arms);
  c.run.stage("prop1");
  const DatasetInfo s = dataset_info(arms[0]), i = dataset_info(arms[1]);
  const std::size_t n = arms[0].trained.model.probe_count();
  const SeparationFit fit = minimal_separation(s.pd, i.pd, n);
  Prop1Params p;
  p.psi = c.cfg.psi;
  p.N = n;
  p.L = c.cfg.prop1_L.value_or(fit.depth);
  p.K = c.cfg.prop1_K.value_or(fit.depth);
  const auto& train_labels = arms[0].trained.split.train;
  for (std::uint32_t y = 0; y < train_labels.classes; ++y) {
    p.class_marginals.push_back(static_cast<double>(train_labels.count_of(y)) /
                                static_cast<double>(train_labels.size()));
  }
  const Prop1Report r = prop1_gap_check(s, i, p);
  out["prop1"] = {{"N", r.N},
                  {"L", r.L},
                  {"K", r.K},
                  {"psi", json6(r.psi)},
                  {"mean_pd_spurious", json6(r.mean_pd_s)},
                  {"mean_pd_intervened", json6(r.mean_pd_i)},
                  {"fraction_spurious_shallow", json6(r.frac_s_shallow)},
                  {"fraction_intervened_deep", json6(r.frac_i_deep)},
                  {"separation_holds", r.separation_holds},
                  {"assumption4_rhs", json6(r.assumption4_rhs)},
                  {"assumption4_holds", r.assumption4_holds},
                  {"neg_h_spurious_bits", json6(r.neg_h_s)},
                  {"neg_h_intervened_bits", json6(r.neg_h_i)},
                  {"v_information_spurious_bits", json6(r.v_info_s)},
                  {"v_information_intervened_bits", json6(r.v_info_i)},
                  {"pd_gap", r.pd_gap},
                  {"information_ordering", r.info_ordering},
                  {"tau_hat_bits", json6(r.tau_hat)},
                  {"epsilon_hat_bits", json6(r.epsilon_hat)},
                  {"minimal_separation", {{"psi", json6(fit.psi)}, {"depth", fit.depth}}},
                  {"verdict", r.verdict}};
  return out;
}

json run_harmfulness(Ctx& c) {
  c.run.stage("data");
  const LabeledDataset ds = build_dataset(*c.cfg.dataset, c.seed);
  if (!ds.spurious) throw ConfigError("harmfulness: the dataset needs a spurious feature");
  json families = json::array();
  CsvTable table{{"family", "seed", "psi_observational", "psi_interventional"}, {}};
  for (const auto& fam : c.cfg.families) {
    const std::string name = model_label(fam);
    c.run.stage("harmfulness:" + name);
    HarmfulnessParams hp;
    hp.family = resolve_model_spec(fam, ds.sample_shape(), ds.classes);
    hp.train = c.training();
    hp.metric = c.cfg.metric;
    hp.seeds = c.cfg.harm_seeds;
    hp.heldout_fraction = c.cfg.val_fraction;
    hp.probe = c.probe();
    hp.tolerance = c.cfg.harm_tolerance;
    const HarmfulnessVerdict v = harmfulness_verdict(ds, hp);
    for (std::size_t k = 0; k < v.seeds.size(); ++k) {
      table.add({name, std::to_string(v.seeds[k]), format6(v.psi_observational[k]),
                 format6(v.psi_interventional[k])});
    }
    json vj = to_json(v);
    json obs = json::array(), in = json::array();
    for (double x : v.psi_observational) obs.push_back(json6(x));
    for (double x : v.psi_interventional) in.push_back(json6(x));
    vj["psi_observational"] = obs;
    vj["psi_interventional"] = in;
    vj["family"] = name;
    vj["tolerance"] = c.cfg.harm_tolerance;
    families.push_back(vj);
  }
  c.run.csv("harmfulness.csv", table);
  return {{"metric", to_string(c.cfg.metric)}, {"families", families}};
}

json run_ensemble(Ctx& c) {
  auto [ds, di] = spurious_pair(c);
  json arms = json::object();
  std::vector<double> means;
  for (auto* d : {&ds, &di}) {
    const std::string name = d == &ds ? "spurious" : "intervened";
    c.run.stage("ensemble:" + name);
    const Splits split = split_dataset(*d, c.cfg.val_fraction, 0.0, c.seed);
    const EnsembleEntropy e = ensemble_entropy(split.train, split.val, c.cfg.ensemble, c.seed);
    CsvTable t{{"sample_id", "label", "entropy_nats"}, {}};
    for (std::size_t i = 0; i < e.per_sample.size(); ++i) {
      t.add({std::to_string(i), std::to_string(split.val.labels[i]), format6(e.per_sample[i])});
    }
    c.run.csv("ensemble_entropy_" + name + ".csv", t);
    arms[name] = {{"mean_entropy_nats", json6(e.mean)}, {"members", e.members}, {"samples", e.per_sample.size()}};
    means.push_back(e.mean);
  }
  return {{"family", c.cfg.ensemble.family},
          {"arms", arms},
          {"spurious_easier", means[0] < means[1]}};
}

json settings_json(const Ctx& c) {
  const ProbeParams p = c.probe();
  json s = {{"training", to_json(c.training())},
            {"early_stopping", {{"criterion", "validation loss"},
                                {"patience", c.cfg.training.early_stopping_patience}}},
            {"val_fraction", c.cfg.val_fraction},
            {"probe", {{"bank_size", p.bank_size}, {"k", p.k}, {"delta", p.delta},
                       {"max_spatial", p.max_spatial}}},
            {"detector", {{"alpha", c.cfg.detector.alpha}, {"mass", c.cfg.detector.mass},
                          {"mu_ref", c.cfg.mu_ref_from_intervened ? json("intervened")
                                                                  : json(c.cfg.detector.mu_ref)}}},
            {"units", {{"information", "bits"}, {"entropy", "nats"}}}};
  if (c.cfg.model.is_string()) s["model"] = c.cfg.model;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration.

const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds{"patch-pd", "domino",      "pd-evolution",     "pd-pvi",
                                              "prop1",    "harmfulness", "ensemble-baseline"};
  return kinds;
}

DatasetRecipe dataset_recipe_from_json(const json& j, const fs::path& base) {
  const std::string where = "dataset";
  detail::require_keys(j,
                       {"generator", "templates", "per_class", "height", "width", "style", "images",
                        "labels", "keep_classes", "limit", "path", "seed", "spurious"},
                       where);
  DatasetRecipe r;
  const auto gen = field<std::string>(j, "generator", "glyphs", where);
  if (gen == "glyphs") {
    r.generator = DatasetRecipe::Generator::kGlyphs;
  } else if (gen == "idx") {
    r.generator = DatasetRecipe::Generator::kIdx;
  } else if (gen == "directory") {
    r.generator = DatasetRecipe::Generator::kDirectory;
  } else {
    throw ConfigError(where + ": unknown generator '" + gen + "'");
  }
  r.templates = field(j, "templates", r.templates, where);
  r.per_class = field(j, "per_class", r.per_class, where);
  r.height = field(j, "height", r.height, where);
  r.width = field(j, "width", r.width, where);
  if (j.contains("style")) r.style = glyph_style_from_json(j.at("style"));
  r.keep_classes = field(j, "keep_classes", r.keep_classes, where);
  if (j.contains("limit")) r.limit = field<std::size_t>(j, "limit", 0, where);
  if (j.contains("seed")) r.seed = field<std::uint64_t>(j, "seed", 0, where);
  if (j.contains("spurious")) r.spurious = spurious_spec_from_json(j.at("spurious"));
  if (r.generator == DatasetRecipe::Generator::kIdx) {
    if (!j.contains("images") || !j.contains("labels")) {
      throw ConfigError(where + ": idx generator needs 'images' and 'labels'");
    }
    r.images = resolve(base, field<std::string>(j, "images", "", where));
    r.labels = resolve(base, field<std::string>(j, "labels", "", where));
    require_file(r.images, where);
    require_file(r.labels, where);
  }
  if (r.generator == DatasetRecipe::Generator::kDirectory) {
    if (!j.contains("path")) throw ConfigError(where + ": directory generator needs 'path'");
    r.path = resolve(base, field<std::string>(j, "path", "", where));
    require_file(r.path / "manifest.json", where);
  }
  if (r.generator == DatasetRecipe::Generator::kGlyphs) {
    if (r.templates.empty()) throw ConfigError(where + ": 'templates' must not be empty");
    if (r.per_class == 0) throw ConfigError(where + ": 'per_class' must be positive");
  }
  return r;
}

std::optional<Shape> recipe_sample_shape(const DatasetRecipe& r) {
  if (r.generator == DatasetRecipe::Generator::kGlyphs) return Shape{1, r.height, r.width};
  return std::nullopt;
}

LabeledDataset build_dataset(const DatasetRecipe& r, std::uint64_t default_seed) {
  const std::uint64_t seed = r.seed.value_or(default_seed);
  LabeledDataset ds;
  switch (r.generator) {
    case DatasetRecipe::Generator::kGlyphs:
      ds = gen_glyphs(r.templates, r.per_class, r.height, r.width, seed, r.style);
      break;
    case DatasetRecipe::Generator::kIdx:
      ds = load_idx(r.images, r.labels);
      break;
    case DatasetRecipe::Generator::kDirectory:
      ds = load_dataset(r.path);
      break;
  }
  if (!r.keep_classes.empty()) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (std::find(r.keep_classes.begin(), r.keep_classes.end(), ds.labels[i]) != r.keep_classes.end()) {
        idx.push_back(i);
      }
    }
    LabeledDataset kept = subset(ds, idx);
    for (auto& y : kept.labels) {
      y = static_cast<std::uint32_t>(
          std::find(r.keep_classes.begin(), r.keep_classes.end(), y) - r.keep_classes.begin());
    }
    kept.classes = r.keep_classes.size();
    ds = std::move(kept);
  }
  if (r.limit && *r.limit < ds.size()) {
    std::vector<std::size_t> idx(*r.limit);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    ds = subset(ds, idx);
  }
  if (r.spurious) ds = inject_patch(ds, *r.spurious, Rng::derive(seed, kInjectStream));
  return ds;
}

ModelSpec resolve_model_spec(const json& model, const Shape& input_shape, std::size_t classes) {
  if (model.is_string()) return preset_model(model.get<std::string>(), input_shape, classes);
  json spec = model;
  spec.erase("name");
  ModelSpec s = model_spec_from_json(spec);
  if (s.input_shape != input_shape) {
    throw ConfigError("model: input shape " + shape_str(s.input_shape) + " does not match the data " +
                      shape_str(input_shape));
  }
  if (s.classes != classes) {
    throw ConfigError("model: " + std::to_string(s.classes) + " classes but the data has " +
                      std::to_string(classes));
  }
  return s;
}

ExperimentConfig parse_experiment_config(const std::string& text, const fs::path& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  const std::string where = "config";
  detail::require_keys(j,
                       {"schema_version", "description", "kind", "seed", "output_dir", "dataset",
                        "model", "training", "split", "probe", "snapshot_epochs", "detector",
                        "domino", "harmfulness", "ensemble", "pvi", "prop1", "saliency",
                        "checkpoint"},
                       where);
  ExperimentConfig c;
  const int version = field(j, "schema_version", kConfigSchemaVersion, where);
  if (version != kConfigSchemaVersion) {
    throw ConfigError(where + ": schema_version " + std::to_string(version) + " is not supported");
  }
  c.seed = detail::get_required<std::uint64_t>(j, "seed", where);
  c.kind = detail::get_required<std::string>(j, "kind", where);
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) {
    throw ConfigError(where + ": unknown kind '" + c.kind + "'");
  }
  if (j.contains("output_dir")) c.output_dir = resolve(base, field<std::string>(j, "output_dir", "", where));
  if (j.contains("dataset")) c.dataset = dataset_recipe_from_json(j.at("dataset"), base);
  if (j.contains("model")) c.model = j.at("model");

  json training = j.value("training", json::object());
  if (!training.is_object()) throw ConfigError("training: expected an object");
  c.training_seed_pinned = training.contains("seed");
  if (!c.training_seed_pinned) training["seed"] = c.seed;
  c.training = train_config_from_json(training);

  if (j.contains("split")) {
    const json& s = j.at("split");
    detail::require_keys(s, {"val"}, "split");
    c.val_fraction = field(s, "val", c.val_fraction, "split");
    if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) {
      throw ConfigError("split: val must lie in (0, 1)");
    }
  }
  if (j.contains("probe")) {
    const json& p = j.at("probe");
    detail::require_keys(p, {"bank_size", "k", "delta", "max_spatial"}, "probe");
    c.probe.bank_size = field(p, "bank_size", c.probe.bank_size, "probe");
    c.probe.k = field(p, "k", c.probe.k, "probe");
    c.probe.delta = field(p, "delta", c.probe.delta, "probe");
    c.probe.max_spatial = field(p, "max_spatial", c.probe.max_spatial, "probe");
    if (c.probe.k % 2 == 0) throw ConfigError("probe: k must be odd");
    if (!(c.probe.delta > 0.0 && c.probe.delta < 0.5)) throw ConfigError("probe: delta must lie in (0, 0.5)");
  }
  if (j.contains("snapshot_epochs")) {
    c.snapshot_epochs = field(j, "snapshot_epochs", c.snapshot_epochs, where);
  }
  c.mu_ref_from_intervened = c.kind == "patch-pd";
  if (j.contains("detector")) {
    const json& d = j.at("detector");
    detail::require_keys(d, {"alpha", "mass", "mu_ref"}, "detector");
    c.detector.alpha = field(d, "alpha", c.detector.alpha, "detector");
    c.detector.mass = field(d, "mass", c.detector.mass, "detector");
    if (d.contains("mu_ref")) {
      if (d.at("mu_ref").is_string()) {
        if (d.at("mu_ref") != "intervened" || c.kind != "patch-pd") {
          throw ConfigError("detector: mu_ref may be a number, or \"intervened\" for patch-pd");
        }
        c.mu_ref_from_intervened = true;
      } else {
        c.detector.mu_ref = field(d, "mu_ref", 0.0, "detector");
        c.mu_ref_from_intervened = false;
      }
    }
    if (!(c.detector.alpha > 0.0 && c.detector.alpha <= 1.0)) throw ConfigError("detector: alpha must lie in (0, 1]");
  }
  if (j.contains("domino")) {
    const json& d = j.at("domino");
    detail::require_keys(d, {"arms"}, "domino");
    for (const auto& a : d.value("arms", json::array())) {
      detail::require_keys(a, {"name", "top", "bottom", "correlation"}, "domino arm");
      DominoArm arm;
      arm.name = detail::get_required<std::string>(a, "name", "domino arm");
      if (!a.contains("top") || !a.contains("bottom")) {
        throw ConfigError("domino arm '" + arm.name + "': needs 'top' and 'bottom'");
      }
      arm.top = dataset_recipe_from_json(a.at("top"), base);
      arm.bottom = dataset_recipe_from_json(a.at("bottom"), base);
      arm.correlation = field(a, "correlation", 1.0, "domino arm");
      c.domino.push_back(std::move(arm));
    }
  }
  if (j.contains("harmfulness")) {
    const json& h = j.at("harmfulness");
    detail::require_keys(h, {"families", "metric", "seeds", "tolerance"}, "harmfulness");
    if (h.contains("families")) c.families = h.at("families").get<std::vector<json>>();
    c.metric = difficulty_metric_from_string(field<std::string>(h, "metric", "v-info", "harmfulness"));
    c.harm_seeds = field(h, "seeds", c.harm_seeds, "harmfulness");
    c.harm_tolerance = field(h, "tolerance", c.harm_tolerance, "harmfulness");
    if (c.harm_seeds.empty()) throw ConfigError("harmfulness: seeds must not be empty");
  }
  if (j.contains("ensemble")) c.ensemble = ensemble_spec_from_json(j.at("ensemble"));
  if (j.contains("pvi")) {
    const json& p = j.at("pvi");
    detail::require_keys(p, {"bin_width", "null_steps", "null_lr"}, "pvi");
    c.bin_width = field(p, "bin_width", c.bin_width, "pvi");
    c.null_steps = field(p, "null_steps", c.null_steps, "pvi");
    c.null_lr = field(p, "null_lr", c.null_lr, "pvi");
    if (c.bin_width == 0) throw ConfigError("pvi: bin_width must be positive");
  }
  if (j.contains("prop1")) {
    const json& p = j.at("prop1");
    detail::require_keys(p, {"psi", "L", "K"}, "prop1");
    c.psi = field(p, "psi", c.psi, "prop1");
    if (p.contains("L")) c.prop1_L = field<std::size_t>(p, "L", 1, "prop1");
    if (p.contains("K")) c.prop1_K = field<std::size_t>(p, "K", 1, "prop1");
    if (!(c.psi >= 0.0 && c.psi < 0.5)) throw ConfigError("prop1: psi must lie in [0, 0.5)");
  }
  if (j.contains("saliency")) {
    const json& s = j.at("saliency");
    detail::require_keys(s, {"probe", "method", "samples", "target"}, "saliency");
    c.saliency.probe = field(s, "probe", c.saliency.probe, "saliency");
    if (c.saliency.probe == 0) throw ConfigError("saliency: probe indices start at 1");
    c.saliency.method = saliency_method_from_string(field<std::string>(s, "method", "gradcam-softknn", "saliency"));
    c.saliency.samples = field(s, "samples", c.saliency.samples, "saliency");
    if (s.contains("target")) c.saliency.target = field<std::uint32_t>(s, "target", 1, "saliency");
  }
  if (j.contains("checkpoint")) {
    c.checkpoint = resolve(base, field<std::string>(j, "checkpoint", "", where));
    require_file(*c.checkpoint, "checkpoint");
  }

  // Kind requirements, checked before any compute.
  if (c.kind == "domino") {
    if (c.domino.empty()) throw ConfigError("domino: needs at least one arm under domino.arms");
    for (const auto& arm : c.domino) {
      const auto top = recipe_sample_shape(arm.top), bottom = recipe_sample_shape(arm.bottom);
      std::optional<Shape> shape;
      if (top && bottom) shape = Shape{1, (*top)[1] + (*bottom)[1], (*bottom)[2]};
      validate_model_entry(c.model, shape, 2, "model");
    }
  } else {
    if (!c.dataset) throw ConfigError(c.kind + ": needs a 'dataset'");
    const bool needs_spurious = c.kind != "pd-evolution";
    if (needs_spurious && !c.dataset->spurious &&
        c.dataset->generator != DatasetRecipe::Generator::kDirectory) {
      throw ConfigError(c.kind + ": the dataset needs a 'spurious' feature");
    }
    const std::size_t classes =
        c.dataset->generator == DatasetRecipe::Generator::kGlyphs ? c.dataset->templates.size() : 2;
    const auto shape = recipe_sample_shape(*c.dataset);
    if (c.kind == "harmfulness") {
      for (const auto& f : c.families) validate_model_entry(f, shape, classes, "harmfulness family");
      if (c.metric == DifficultyMetric::kMeanPd) {
        for (const auto& f : c.families) {
          if (shape && resolve_probes(resolve_model_spec(f, *shape, classes)).size() < 3) {
            throw ConfigError("harmfulness: mean-pd needs at least 3 probes; family '" +
                              model_label(f) + "' has fewer");
          }
        }
      }
    } else if (c.kind != "ensemble-baseline") {
      validate_model_entry(c.model, shape, classes, "model");
      if (shape && resolve_probes(resolve_model_spec(c.model, *shape, classes)).size() < 3) {
        throw ConfigError("model: prediction depth needs at least 3 probes");
      }
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Runner.

RunResult run_experiment(const fs::path& config_path, const RunOptions& options) {
  const std::string text = read_file(config_path);
  ExperimentConfig cfg = parse_experiment_config(text, config_path.parent_path());
  if (options.expected_kind && *options.expected_kind != cfg.kind) {
    throw ConfigError("this verb runs '" + *options.expected_kind + "' experiments; the config is '" +
                      cfg.kind + "'");
  }
  const std::uint64_t seed = options.seed_override.value_or(cfg.seed);
  std::vector<std::size_t> snapshots = options.snapshot_epochs.value_or(cfg.snapshot_epochs);
  fs::path out_dir;
  if (options.out_dir) {
    out_dir = *options.out_dir;
  } else if (cfg.output_dir) {
    out_dir = *cfg.output_dir;
  } else {
    throw ConfigError("config: no output directory (set output_dir or pass --out)");
  }

  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  RunDir run(out_dir);
  Ctx ctx{cfg, seed, run};
  json results;
  try {
    if (cfg.kind == "patch-pd") {
      results = run_patch_pd(ctx);
    } else if (cfg.kind == "pd-evolution") {
      results = run_pd_evolution(ctx, snapshots);
    } else if (cfg.kind == "domino") {
      results = run_domino(ctx);
    } else if (cfg.kind == "pd-pvi") {
      results = run_pd_pvi(ctx);
    } else if (cfg.kind == "prop1") {
      results = run_prop1(ctx);
    } else if (cfg.kind == "harmfulness") {
      results = run_harmfulness(ctx);
    } else {
      results = run_ensemble(ctx);
    }
    run.stage("export");
    json settings = settings_json(ctx);
    if (cfg.kind == "pd-evolution") settings["snapshot_epochs"] = snapshots;
    json report = {{"schema_version", kReportSchemaVersion},
                   {"engine", {{"name", "dsprobe"}, {"version", kEngineVersion}}},
                   {"kind", cfg.kind},
                   {"seed", seed},
                   {"config_echo", text},
                   {"settings", settings},
                   {"results", results}};
    run.write("config.json", text, "config");
    run.write("report.json", report.dump(2) + "\n", "report");
    json manifest = run.manifest();
    manifest["artifacts"].push_back({{"path", "manifest.json"}, {"kind", "manifest"}, {"stage", "export"}});
    manifest["artifacts"].push_back({{"path", "metadata.json"}, {"kind", "metadata"}, {"stage", "export"}});
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const json meta = {{"engine_version", kEngineVersion},
                       {"started_utc", started},
                       {"finished_utc", utc_now()},
                       {"wall_clock_seconds", wall},
                       {"stages", run.timings()}};
    write_file(out_dir / "metadata.json", meta.dump(2) + "\n");
    return {std::move(report), out_dir};
  } catch (const std::exception& e) {
    const std::string stage = run.current_stage().empty() ? "setup" : run.current_stage();
    try {
      write_file(out_dir / "FAILED", "stage: " + stage + "\nerror: " + e.what() + "\n");
    } catch (const std::exception&) {
      // The original error matters more than a missing marker.
    }
    throw;
  }
}

// ---------------------------------------------------------------------------
// Stand-alone stages.

namespace {

LabeledDataset config_dataset(const ExperimentConfig& cfg) {
  if (!cfg.dataset) throw ConfigError("config: needs a 'dataset'");
  return build_dataset(*cfg.dataset, cfg.seed);
}

TrainConfig stage_training(const ExperimentConfig& cfg) {
  TrainConfig t = cfg.training;
  if (!cfg.training_seed_pinned) t.seed = cfg.seed;
  return t;
}

// Trained model for the probe and saliency verbs: the configured checkpoint,
// or a fresh run on the training split.
Model stage_model(const ExperimentConfig& cfg, const LabeledDataset& ds, const Splits& split) {
  if (cfg.checkpoint) {
    Checkpoint ck = load_checkpoint(*cfg.checkpoint);
    if (ck.model.spec().input_shape != ds.sample_shape()) {
      throw ConfigError("checkpoint: model input " + shape_str(ck.model.spec().input_shape) +
                        " does not match the data " + shape_str(ds.sample_shape()));
    }
    return std::move(ck.model);
  }
  Model model(resolve_model_spec(cfg.model, ds.sample_shape(), ds.classes), cfg.seed);
  train(model, split.train, &split.val, stage_training(cfg));
  return model;
}

json artifact(const std::string& path, const std::string& kind) {
  return {{"path", path}, {"kind", kind}};
}

}  // namespace

json gen_data_stage(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const LabeledDataset ds = config_dataset(cfg);
  json arts = json::array();
  save_dataset(out_dir / "dataset", ds);
  arts.push_back(artifact("dataset", "dataset"));
  if (ds.spurious) {
    save_dataset(out_dir / "dataset_intervened",
                 intervene_randomize_spurious(ds, Rng::derive(cfg.seed, kInterveneStream)));
    arts.push_back(artifact("dataset_intervened", "dataset"));
  }
  return {{"schema_version", kReportSchemaVersion}, {"artifacts", arts}};
}

json train_stage(const ExperimentConfig& cfg, const fs::path& out_dir,
                 const std::optional<fs::path>& resume) {
  const LabeledDataset ds = config_dataset(cfg);
  const Splits split = split_dataset(ds, cfg.val_fraction, 0.0, cfg.seed);
  const TrainConfig tc = stage_training(cfg);
  std::optional<Checkpoint> ck;
  if (resume) {
    ck.emplace(load_checkpoint(*resume));
  } else {
    ck.emplace(Checkpoint{Model(resolve_model_spec(cfg.model, ds.sample_shape(), ds.classes), cfg.seed),
                          initial_train_state(tc)});
  }
  train(ck->model, ck->state, split.train, &split.val, tc);
  ck->model.meta.dataset_id = ds.provenance;
  save_checkpoint(out_dir / "model.dsck", ck->model, ck->state);
  json losses = json::array();
  for (double v : ck->state.train_loss) losses.push_back(json6(v));
  const json metrics = {{"epochs_run", ck->state.epoch},
                        {"train_loss", losses},
                        {"val_accuracy", json6(accuracy(ck->model, split.val))}};
  write_file(out_dir / "train_metrics.json", metrics.dump(2) + "\n");
  return {{"schema_version", kReportSchemaVersion},
          {"artifacts", {artifact("model.dsck", "checkpoint"), artifact("train_metrics.json", "json")}}};
}

json probe_stage(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const LabeledDataset ds = config_dataset(cfg);
  const Splits split = split_dataset(ds, cfg.val_fraction, 0.0, cfg.seed);
  const Model model = stage_model(cfg, ds, split);
  ProbeParams p = cfg.probe;
  p.seed = cfg.seed;
  const ProbeSet set = build_probe_set(model, split.train, p);
  const auto records = compute_pd_records(model, set, split.val);
  const PdHistogram h = pd_histogram(records, model.probe_count());
  write_file(out_dir / "pd_records.csv", records_csv(records).str());
  write_file(out_dir / "pd_histogram.csv", histogram_csv(h).str());
  const json summary = {{"histogram", histogram_json(h)},
                        {"detector", detector_json(early_peak_detector(h, cfg.detector))}};
  write_file(out_dir / "pd_summary.json", summary.dump(2) + "\n");
  return {{"schema_version", kReportSchemaVersion},
          {"artifacts",
           {artifact("pd_records.csv", "csv"), artifact("pd_histogram.csv", "csv"),
            artifact("pd_summary.json", "json")}}};
}

json saliency_stage(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const LabeledDataset ds = config_dataset(cfg);
  const Splits split = split_dataset(ds, cfg.val_fraction, 0.0, cfg.seed);
  const Model model = stage_model(cfg, ds, split);
  ProbeParams p = cfg.probe;
  p.seed = cfg.seed;
  const ProbeSet set = build_probe_set(model, split.train, p);
  const SoftKnnHead head = make_soft_knn_head(set, cfg.saliency.probe, cfg.probe.k);
  json arts = json::array(), maps = json::array();
  for (std::size_t i : cfg.saliency.samples) {
    if (i >= split.val.size()) {
      throw ConfigError("saliency: sample " + std::to_string(i) + " outside the held-out split");
    }
    const SaliencyMap m = soft_knn_saliency(model, head, split.val.images.rows(i, i + 1),
                                            cfg.saliency.method, cfg.saliency.target);
    const std::string stem = "saliency_" + std::to_string(i);
    save_tensor(out_dir / (stem + ".dstf"), m.values);
    CsvTable grid{{"row", "col", "value"}, {}};
    const std::size_t h = m.values.dim(0), w = m.values.dim(1);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t col = 0; col < w; ++col) {
        grid.add({std::to_string(r), std::to_string(col), format6(m.values[r * w + col])});
      }
    }
    write_file(out_dir / (stem + ".csv"), grid.str());
    arts.push_back(artifact(stem + ".dstf", "dstf"));
    arts.push_back(artifact(stem + ".csv", "csv"));
    maps.push_back({{"sample", i},
                    {"label", split.val.labels[i]},
                    {"probe", m.probe},
                    {"method", to_string(m.method)},
                    {"objective", to_string(m.objective)},
                    {"target", m.target},
                    {"score", json6(m.score)}});
  }
  write_file(out_dir / "saliency.json", json{{"maps", maps}}.dump(2) + "\n");
  arts.push_back(artifact("saliency.json", "json"));
  return {{"schema_version", kReportSchemaVersion}, {"artifacts", arts}};
}

}  // namespace dsprobe
