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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "dsprobe/checkpoint.hpp"
#include "dsprobe/error.hpp"
#include "dsprobe/experiment.hpp"
#include "dsprobe/glyphs.hpp"
#include "dsprobe/report.hpp"
#include "test_util.hpp"

using namespace dsprobe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixtures = DSPROBE_FIXTURE_DIR;

// Small patch-pd run: a few seconds end to end.
json tiny_patch_pd() {
  return {{"kind", "patch-pd"},
          {"seed", 4},
          {"dataset",
           {{"generator", "glyphs"},
            {"templates", {0, 1}},
            {"per_class", 60},
            {"height", 12},
            {"width", 12},
            {"spurious", {{"kind", "patch"}, {"patch_size", 3}}}}},
          {"model", "mlp-2"},
          {"training", {{"epochs", 2}, {"batch_size", 16}}},
          {"probe", {{"bank_size", 40}, {"k", 5}}}};
}

fs::path write_config(const fs::path& dir, const json& cfg) {
  const fs::path p = dir / "config.json";
  write_file(p, cfg.dump(2));
  return p;
}

int cli(const std::string& args) {
  const int rc = std::system((std::string(DSPROBE_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("histogram csv round-trips with the undefined row") {
  PdHistogram h;
  h.counts = {5, 0, 7, 2};
  h.undefined = 3;
  h.total = 17;
  const CsvTable t = histogram_csv(h);
  const std::string text = t.str();
  CHECK(text == "probe,count\n1,5\n2,0\n3,7\n4,2\nundefined,3\n");
  const PdHistogram back = histogram_from_csv(parse_csv(text));
  CHECK(back.counts == h.counts);
  CHECK(back.undefined == 3);
  CHECK(back.total == 17);
  CHECK(back.mean_pd == doctest::Approx((5.0 + 21.0 + 8.0) / 14.0));
  CHECK_THROWS_AS(histogram_from_csv(parse_csv("depth,count\n1,2\n")), FormatError);
  CHECK_THROWS_AS(histogram_from_csv(parse_csv("probe,count\n2,2\n")), FormatError);
}

TEST_CASE("csv rows must match the header width") {
  CsvTable t{{"a", "b"}, {}};
  CHECK_THROWS(t.add({"1"}));
}

TEST_CASE("config parse errors") {
  const fs::path base = kFixtures;
  const json good = tiny_patch_pd();
  CHECK_NOTHROW(parse_experiment_config(good.dump(), base));
  SUBCASE("unknown top-level field") {
    json j = good;
    j["epochs"] = 3;
    CHECK_THROWS_AS(parse_experiment_config(j.dump(), base), ConfigError);
  }
  SUBCASE("unknown nested field") {
    json j = good;
    j["probe"]["neighbours"] = 3;
    CHECK_THROWS_AS(parse_experiment_config(j.dump(), base), ConfigError);
  }
  SUBCASE("missing seed") {
    json j = good;
    j.erase("seed");
    CHECK_THROWS_AS(parse_experiment_config(j.dump(), base), ConfigError);
  }
  SUBCASE("missing file") {
    json j = good;
    j["dataset"] = {{"generator", "idx"}, {"images", "absent.idx3"}, {"labels", "absent.idx1"}};
    CHECK_THROWS_AS(parse_experiment_config(j.dump(), base), ConfigError);
  }
  SUBCASE("even k") {
    json j = good;
    j["probe"]["k"] = 4;
    CHECK_THROWS_AS(parse_experiment_config(j.dump(), base), ConfigError);
  }
  SUBCASE("unknown kind") {
    json j = good;
    j["kind"] = "pd-magic";
    CHECK_THROWS_AS(parse_experiment_config(j.dump(), base), ConfigError);
  }
  SUBCASE("too few probes for prediction depth") {
    json j = good;
    j["model"] = "linear";
    CHECK_THROWS_AS(parse_experiment_config(j.dump(), base), ConfigError);
  }
  SUBCASE("not json") { CHECK_THROWS_AS(parse_experiment_config("{seed: 1", base), ConfigError); }
}

TEST_CASE("a failing stage leaves a FAILED marker") {
  const fs::path dir = test_util::scratch_dir("failed_marker");
  json cfg = tiny_patch_pd();
  cfg["dataset"] = {{"generator", "idx"},
                    {"images", (kFixtures / "wrong-magic.idx3").string()},
                    {"labels", (kFixtures / "three-labels.idx1").string()},
                    {"spurious", {{"kind", "patch"}, {"patch_size", 1}}}};
  const fs::path config = write_config(dir, cfg);
  RunOptions opts;
  opts.out_dir = dir / "out";
  CHECK_THROWS_AS(run_experiment(config, opts), FormatError);
  REQUIRE(fs::exists(dir / "out" / "FAILED"));
  const std::string marker = read_file(dir / "out" / "FAILED");
  CHECK(marker.rfind("stage: ", 0) == 0);
  CHECK(marker.find("\nerror: ") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "report.json"));
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  const fs::path dir = test_util::scratch_dir("resume");
  const LabeledDataset ds = gen_glyphs(2, 40, 12, 12, 8);
  const ModelSpec spec = preset_model("mlp-2", ds.sample_shape(), 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 9;

  Model straight(spec, 9);
  const TrainState s3 = train(straight, ds, &ds, cfg);

  Model first(spec, 9);
  TrainConfig two = cfg;
  two.epochs = 2;
  const TrainState s2 = train(first, ds, &ds, two);
  save_checkpoint(dir / "e2.dsck", first, s2);
  Checkpoint ck = load_checkpoint(dir / "e2.dsck");
  CHECK(ck.state.epoch == 2);
  train(ck.model, ck.state, ds, &ds, cfg);

  CHECK(ck.state.epoch == 3);
  CHECK(ck.state.train_loss == s3.train_loss);
  CHECK(ck.state.val_loss == s3.val_loss);
  REQUIRE(ck.model.parameters().size() == straight.parameters().size());
  for (std::size_t i = 0; i < straight.parameters().size(); ++i) {
    CHECK(ck.model.parameters()[i].value == straight.parameters()[i].value);
  }
}

TEST_CASE("checkpoint layout and truncation") {
  const fs::path dir = test_util::scratch_dir("checkpoint");
  const LabeledDataset ds = gen_glyphs(2, 10, 8, 8, 2);
  Model m(preset_model("linear", ds.sample_shape(), 2), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  const TrainState st = train(m, ds, nullptr, cfg);
  save_checkpoint(dir / "m.dsck", m, st);
  const std::string bytes = read_file(dir / "m.dsck");
  REQUIRE(bytes.size() > 16);
  CHECK(bytes.substr(0, 4) == "DSCK");
  // Little-endian u32 version right after the magic.
  CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 0);
  CHECK(bytes[7] == 0);
  const Checkpoint back = load_checkpoint(dir / "m.dsck");
  CHECK(back.model.parameters()[0].value == m.parameters()[0].value);

  for (std::size_t cut : {std::size_t{3}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    write_file(dir / "cut.dsck", bytes.substr(0, cut));
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.dsck"), FormatError);
  }
  std::string wrong = bytes;
  wrong[4] = static_cast<char>(kCheckpointVersion + 1);
  write_file(dir / "ver.dsck", wrong);
  CHECK_THROWS_AS(load_checkpoint(dir / "ver.dsck"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.dsck"), IoError);
}

TEST_CASE("end-to-end run is byte-identical across reruns") {
  const fs::path dir = test_util::scratch_dir("e2e");
  const fs::path config = write_config(dir, tiny_patch_pd());
  RunOptions a, b;
  a.out_dir = dir / "a";
  b.out_dir = dir / "b";
  const RunResult ra = run_experiment(config, a);
  run_experiment(config, b);
  CHECK(ra.report.at("kind") == "patch-pd");
  CHECK(ra.report.at("engine").at("name") == "dsprobe");
  for (const char* f : {"report.json", "config.json", "manifest.json", "pd_histogram_spurious.csv",
                        "pd_histogram_intervened.csv", "pd_records_spurious.csv"}) {
    INFO(f);
    REQUIRE(fs::exists(dir / "a" / f));
    CHECK(read_file(dir / "a" / f) == read_file(dir / "b" / f));
  }
  CHECK(read_file(dir / "a" / "config.json") == read_file(config));
  CHECK(fs::exists(dir / "a" / "metadata.json"));
  CHECK_FALSE(fs::exists(dir / "a" / "FAILED"));

  RunOptions c = a;
  c.seed_override = 5;
  c.out_dir = dir / "c";
  const RunResult rc = run_experiment(config, c);
  CHECK(rc.report.at("seed") == 5);
}

TEST_CASE("cli exit codes") {
  const fs::path dir = test_util::scratch_dir("cli");
  const fs::path good = write_config(dir, tiny_patch_pd());
  CHECK(cli("pd-report --config " + good.string() + " --out " + (dir / "ok").string()) == 0);
  CHECK(fs::exists(dir / "ok" / "report.json"));
  // Wrong verb for the kind.
  CHECK(cli("domino-eval --config " + good.string() + " --out " + (dir / "x").string()) == 2);
  json bad = tiny_patch_pd();
  bad["bogus"] = true;
  write_file(dir / "bad.json", bad.dump());
  CHECK(cli("run --config " + (dir / "bad.json").string() + " --out " + (dir / "y").string()) == 2);
  // Output path blocked by a regular file.
  write_file(dir / "blocker", "x");
  CHECK(cli("run --config " + good.string() + " --out " + (dir / "blocker" / "z").string()) == 3);
}
