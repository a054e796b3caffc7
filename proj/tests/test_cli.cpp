#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "forge/cli/manifest.hpp"
#include "forge/data/bundle_io.hpp"
#include "forge/net/plan.hpp"
#include "forge/train/artifact.hpp"
#include "forge/train/metrics_record.hpp"

namespace fs = std::filesystem;
using namespace forge;

namespace {

struct Run {
  int code;
  std::string output;  // stdout and stderr interleaved
};

Run forge_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + FORGE_CLI_PATH + "' " + args + " 2>&1";
  Run r{-1, {}};
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p)) r.output += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) { return to_string(read_file(p)); }
nlohmann::json json_of(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

void write(const fs::path& p, const std::string& text) { write_text(p, text); }

const char* kSpec = R"({"shape": [12, 24, 24], "spacing": [1, 1, 1],
  "structures": [
    {"name": "bright", "center": [0.5, 0.3, 0.3], "radius_mm": [3.5, 5, 5], "intensity": [1.4, 1.6]},
    {"name": "dim", "center": [0.5, 0.7, 0.7], "radius_mm": [3.5, 5, 5], "intensity": [0.6, 0.8]}],
  "noise_std": 0.05, "morphology_jitter": 0.3})";

// Two tiny levels keep every CLI training run to a second or two.
const char* kQuickConfig = R"({"train": {"epochs": 2, "lr0": 0.01, "steps_per_epoch": 3},
  "planner": {"base_channels": 4, "max_levels": 2}})";

class Cli : public ::testing::Test {
 protected:
  static fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / ("forge_test_cli_" + std::to_string(getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    write(root / "spec.json", kSpec);
    write(root / "quick.json", kQuickConfig);
    ASSERT_EQ(forge_cli("synth --spec " + (root / "spec.json").string() + " --n 4 --seed 1 --out " + (root / "data").string()).code, 0);
    ASSERT_EQ(forge_cli("synth --spec " + (root / "spec.json").string() + " --n 2 --seed 2 --out " + (root / "val").string()).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static std::string data() { return (root / "data").string(); }
  static std::string val() { return (root / "val").string(); }
  static std::string path(const std::string& name) { return (root / name).string(); }

  /// Trains the quick dynunet once per test that needs a pre-trained model.
  static std::string pretrained(const std::string& name) {
    const auto model = path(name + ".model");
    if (!fs::exists(model)) {
      const auto r = forge_cli("train --data " + data() + " --val " + val() + " --arch dynunet --config " +
                               path("quick.json") + " --mem-budget 1e6 --out " + model + " --metrics " + path(name + "_metrics"));
      EXPECT_EQ(r.code, 0) << r.output;
    }
    return model;
  }
};

fs::path Cli::root;

VolumeBundle bundle_with(Shape shape, std::vector<double> spacing) {
  VolumeBundle b;
  b.spatial = std::move(shape);
  b.spacing = std::move(spacing);
  b.image.assign(b.voxels(), 1.0f);
  b.labels.assign(b.voxels(), 0);
  b.labels[0] = 1;
  b.label_names = {{0, "background"}, {1, "a"}};
  return b;
}

}  // namespace

TEST_F(Cli, HelpAndUnknownSubcommand) {
  EXPECT_EQ(forge_cli("--help").code, 0);
  EXPECT_EQ(forge_cli("bogus").code, 2);
  EXPECT_EQ(forge_cli("").code, 2);
  EXPECT_EQ(forge_cli("train --data x").code, 2);  // missing required flags
}

TEST_F(Cli, SynthWritesBundlesSidecarAndManifest) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(root / "data")) n += e.path().extension() == ".bundle";
  EXPECT_EQ(n, 4u);
  EXPECT_TRUE(fs::exists(root / "data" / "phantom_spec.json"));
  const auto m = json_of(root / "data" / kRunManifestName);
  EXPECT_EQ(m["command"], "synth");
  EXPECT_EQ(m["seed"], 1);
  EXPECT_EQ(m["outputs"].size(), 5u);
  EXPECT_EQ(m["config"]["phantom"]["structures"].size(), 2u);
  const auto b = load_bundle(root / "data" / "case_0000.bundle");
  EXPECT_EQ(b.spatial, (Shape{12, 24, 24}));
}

TEST_F(Cli, SynthRejectsZeroCountAndBadSpec) {
  EXPECT_EQ(forge_cli("synth --n 0 --out " + path("zero")).code, 2);
  EXPECT_FALSE(fs::exists(root / "zero"));
  write(root / "bad_spec.json", R"({"noise_std": -1})");
  EXPECT_EQ(forge_cli("synth --spec " + path("bad_spec.json") + " --n 1 --out " + path("bad")).code, 2);
  write(root / "broken_spec.json", "{not json");
  EXPECT_EQ(forge_cli("synth --spec " + path("broken_spec.json") + " --n 1 --out " + path("bad")).code, 2);
  EXPECT_EQ(forge_cli("synth --spec " + path("missing.json") + " --n 1 --out " + path("bad")).code, 2);
}

TEST_F(Cli, SynthRerunIsByteIdentical) {
  const auto out = path("rerun");
  const std::string args = "synth --spec " + path("spec.json") + " --n 2 --seed 5 --deterministic --out " + out;
  ASSERT_EQ(forge_cli(args).code, 0);
  std::map<std::string, std::string> first;
  for (const auto& e : fs::directory_iterator(out)) first[e.path().filename().string()] = slurp(e.path());
  ASSERT_EQ(forge_cli(args).code, 0);
  for (const auto& [name, bytes] : first) EXPECT_EQ(slurp(fs::path(out) / name), bytes) << name;
  EXPECT_EQ(first.size(), 4u);  // 2 bundles, sidecar, manifest
}

TEST_F(Cli, FingerprintOfOneBundleIsItsGeometry) {
  const auto dir = root / "fp_one";
  save_bundle(bundle_with({5, 7, 9}, {2.5, 0.8, 0.7}), dir / "a.bundle");
  ASSERT_EQ(forge_cli("fingerprint --data " + dir.string() + " --out " + path("fp_one.json")).code, 0);
  const auto j = json_of(root / "fp_one.json");
  EXPECT_EQ(j["median_shape"].get<Shape>(), (Shape{5, 7, 9}));
  EXPECT_EQ(j["median_spacing"].get<std::vector<double>>(), (std::vector<double>{2.5, 0.8, 0.7}));
  EXPECT_EQ(j["n_volumes"], 1);
  EXPECT_TRUE(fs::exists(path("fp_one.json") + "." + kRunManifestName));
}

TEST_F(Cli, FingerprintOfThreeBundlesIsPerAxisMedian) {
  const auto dir = root / "fp_three";
  const std::vector<Shape> shapes{{4, 9, 6}, {8, 3, 7}, {6, 5, 2}};
  const std::vector<std::vector<double>> spacings{{3.0, 0.5, 1.0}, {1.0, 0.9, 2.0}, {2.0, 0.7, 0.4}};
  for (std::size_t i = 0; i < 3; ++i) save_bundle(bundle_with(shapes[i], spacings[i]), dir / ("b" + std::to_string(i) + ".bundle"));
  ASSERT_EQ(forge_cli("fingerprint --data " + dir.string() + " --out " + path("fp_three.json")).code, 0);
  const auto j = json_of(root / "fp_three.json");
  for (std::size_t a = 0; a < 3; ++a) {
    std::vector<std::size_t> sh;
    std::vector<double> sp;
    for (std::size_t i = 0; i < 3; ++i) {
      sh.push_back(shapes[i][a]);
      sp.push_back(spacings[i][a]);
    }
    std::sort(sh.begin(), sh.end());
    std::sort(sp.begin(), sp.end());
    EXPECT_EQ(j["median_shape"][a].get<std::size_t>(), sh[1]);
    EXPECT_EQ(j["median_spacing"][a].get<double>(), sp[1]);
  }
}

TEST_F(Cli, FingerprintErrors) {
  fs::create_directories(root / "fp_empty");
  EXPECT_EQ(forge_cli("fingerprint --data " + path("fp_empty") + " --out " + path("x.json")).code, 2);
  const auto dir = root / "fp_bad";
  save_bundle(bundle_with({2, 2, 2}, {1, 1, 1}), dir / "good.bundle");
  write(dir / "broken.bundle", "this is not an archive");
  const auto r = forge_cli("fingerprint --data " + dir.string() + " --out " + path("x.json"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("broken.bundle"), std::string::npos) << r.output;
}

TEST_F(Cli, DynUNetArchitectureMatchesIndependentPlanner) {
  const auto model = pretrained("pre");
  std::vector<VolumeBundle> bundles;
  for (const auto& e : fs::directory_iterator(root / "data"))
    if (e.path().extension() == ".bundle") bundles.push_back(load_bundle(e.path()));
  const auto fp = compute_fingerprint(bundles);
  MemoryBudget mem;
  mem.units = 1e6;
  PlannerOptions opt;
  opt.base_channels = 4;
  opt.max_levels = 2;
  opt.num_classes = 3;
  const auto expected = plan_dynunet(fp, mem, opt);

  const auto arch = nlohmann::json::parse(to_string(unpack_archive(read_file(model)).at("arch.json")));
  EXPECT_EQ(arch["kernels"].get<std::vector<Extents>>(), expected.kernels);
  EXPECT_EQ(arch["strides"].get<std::vector<Extents>>(), expected.strides);
  EXPECT_EQ(arch["channels"].get<std::vector<std::size_t>>(), expected.channels);
  EXPECT_EQ(arch["patch_size"].get<Extents>(), expected.patch_size);
  EXPECT_EQ(arch["batch_size"].get<std::size_t>(), expected.batch_size);

  const auto m = json_of(root / "pre_metrics" / kRunManifestName);
  EXPECT_EQ(m["config"]["run"]["train"]["patience"], 20);  // defaults materialised
  EXPECT_EQ(m["inputs"].size(), 7u);                      // config + 4 train + 2 val bundles
  const auto csv = slurp(root / "pre_metrics" / "metrics.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST_F(Cli, TrainStatusLinesAreKeyValue) {
  const auto r = forge_cli("train --data " + data() + " --val " + val() + " --arch dynunet --config " + path("quick.json") +
                           " --mem-budget 1e6 --out " + path("status.model") + " --metrics " + path("status_metrics"));
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* key : {"epoch=1/2 ", "epoch=2/2 ", "lr=", "train_loss=", "val_loss=", "mean_dsc=", "best_epoch=", "best_mean_dsc="})
    EXPECT_NE(r.output.find(key), std::string::npos) << key;
}

TEST_F(Cli, ManualUNetNeedsHyperparameterFile) {
  EXPECT_EQ(forge_cli("train --data " + data() + " --arch unet3d --out " + path("u.model") + " --metrics " + path("u_m")).code, 2);
  write(root / "unet2d_for_3d.json", R"({"network": {"kernels": [[3,3,3]], "strides": [[1,1,1]], "channels": [4], "patch_size": [8,8,8]}})");
  EXPECT_EQ(forge_cli("train --data " + data() + " --arch unet2d --config " + path("unet2d_for_3d.json") + " --out " +
                      path("u.model") + " --metrics " + path("u_m")).code, 2);
  EXPECT_FALSE(fs::exists(root / "u_m"));
}

TEST_F(Cli, ManualUNet3DTrains) {
  write(root / "unet3d.json", R"({"train": {"epochs": 1, "steps_per_epoch": 2},
    "network": {"kernels": [[3,3,3],[3,3,3]], "strides": [[1,1,1],[2,2,2]], "channels": [4,8], "patch_size": [8,16,16], "batch_size": 2}})");
  const auto r = forge_cli("train --data " + data() + " --val " + val() + " --arch unet3d --config " + path("unet3d.json") +
                           " --out " + path("u3.model") + " --metrics " + path("u3_m"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto art = load_artifact(root / "u3.model");
  EXPECT_EQ(art.plan.channels, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(art.plan.num_classes, 3u);
}

TEST_F(Cli, ManualUNet2DTrainsOnWholeSlices) {
  write(root / "unet2d.json", R"({"train": {"epochs": 1, "steps_per_epoch": 2},
    "network": {"kernels": [[3,3],[3,3]], "strides": [[1,1],[2,2]], "channels": [4,8], "patch_size": "full-slice"}})");
  const auto r = forge_cli("train --data " + data() + " --val " + val() + " --arch unet2d --config " + path("unet2d.json") +
                           " --out " + path("u2.model") + " --metrics " + path("u2_m"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto art = load_artifact(root / "u2.model");
  EXPECT_EQ(art.plan.dims, 2);
  EXPECT_TRUE(art.plan.full_slice());
  EXPECT_EQ(art.plan.norm, NormKind::Batch);
}

TEST_F(Cli, ConfigViolationsExitTwoBeforeTraining) {
  for (const char* cfg : {R"({"train": {"epochs": 0}})", R"({"train": {"lr0": -1}})", R"({"trian": {}})",
                          R"({"train": {"freeze": "gu"}})", R"({"split": {"ratio": 1.5}})", "[1, 2]", "{oops"}) {
    write(root / "bad.json", cfg);
    const auto r = forge_cli("train --data " + data() + " --arch dynunet --config " + path("bad.json") + " --out " +
                             path("bad.model") + " --metrics " + path("bad_m"));
    EXPECT_EQ(r.code, 2) << cfg << "\n" << r.output;
    EXPECT_EQ(r.output.find("epoch="), std::string::npos) << cfg;
  }
  EXPECT_FALSE(fs::exists(root / "bad_m"));
  EXPECT_EQ(forge_cli("train --data " + data() + " --arch dynunet --config " + path("nope.json") + " --out " +
                      path("bad.model") + " --metrics " + path("bad_m")).code, 2);
}

TEST_F(Cli, MemoryBudgetEnvironmentOverridesFlag) {
  const std::string args = "train --data " + data() + " --val " + val() + " --arch dynunet --config " + path("quick.json") +
                           " --out " + path("mem.model") + " --metrics " + path("mem_m");
  const auto tiny = forge_cli(args + " --mem-budget 1e6", "FORGE_MEM_BUDGET=10");
  EXPECT_EQ(tiny.code, 2);
  EXPECT_NE(tiny.output.find("minimal patch requirement"), std::string::npos) << tiny.output;
  EXPECT_EQ(forge_cli(args + " --mem-budget 10", "FORGE_MEM_BUDGET=1e6").code, 0);
  EXPECT_EQ(json_of(root / "mem_m" / kRunManifestName)["config"]["memory_budget"]["units"], 1e6);
  EXPECT_EQ(forge_cli(args, "FORGE_MEM_BUDGET=lots").code, 2);
}

TEST_F(Cli, DeterministicRerunsAreByteIdentical) {
  auto run = [&](const std::string& tag) {
    const auto r = forge_cli("train --data " + data() + " --val " + val() + " --arch dynunet --config " + path("quick.json") +
                             " --mem-budget 1e6 --seed 9 --deterministic --out " + path("det.model") + " --metrics " + path("det_m"));
    EXPECT_EQ(r.code, 0) << tag << r.output;
    return std::vector<std::string>{slurp(root / "det_m" / "metrics.csv"), slurp(root / "det_m" / "metrics.json"),
                                    slurp(root / "det_m" / kRunManifestName), slurp(root / "det.model")};
  };
  const auto a = run("first");
  const auto b = run("second");
  EXPECT_EQ(a[0], b[0]);
  EXPECT_EQ(a[1], b[1]);
  EXPECT_EQ(a[2], b[2]);
  EXPECT_EQ(a[3], b[3]);
  EXPECT_TRUE(json_of(root / "det_m" / kRunManifestName)["started"].is_null());
}

TEST_F(Cli, GradualUnfreezingScheduleRecordedForTwoHundredEpochs) {
  // A five-level network has G = 9 groups: one new group every 20 epochs,
  // the ninth arriving with the full unfreeze at epoch 150.
  NetworkPlan p;
  p.dims = 3;
  p.kernels.assign(5, {3, 3, 3});
  p.strides = {{1, 1, 1}, {1, 2, 2}, {1, 2, 2}, {1, 2, 2}, {1, 1, 1}};
  p.channels = {2, 2, 2, 2, 2};
  p.num_classes = 3;
  p.patch_size = {8, 16, 16};
  p.batch_size = 1;
  std::mt19937_64 rng(1);
  Network<float> net(p);
  net.init_random(rng);
  PreprocessSettings pre;
  pre.target_spacing = {1, 1, 1};
  const auto names = load_bundle(root / "data" / "case_0000.bundle").label_names;
  const auto model = root / "deep.model";
  save_artifact(make_artifact(net, pre, names), model);
  const auto before = slurp(model);

  // Near-zero learning rate and patience 1 end the run after two epochs.
  write(root / "gu200.json", R"({"train": {"epochs": 200, "patience": 1, "lr0": 1e-12, "lr_min": 0, "steps_per_epoch": 1}})");
  const auto r = forge_cli("finetune --model " + model.string() + " --data " + data() + " --val " + val() +
                           " --strategy gu --config " + path("gu200.json") + " --out " + path("gu200.model") +
                           " --metrics " + path("gu200_m"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto m = json_of(root / "gu200_m" / kRunManifestName);
  const auto& fs_json = m["config"]["freeze_schedule"];
  EXPECT_EQ(fs_json["groups"], 9);
  EXPECT_EQ(fs_json["interval"], 20);
  EXPECT_EQ(fs_json["full_unfreeze_epoch"], 150);
  EXPECT_EQ(fs_json["unfreeze_epochs"].get<std::vector<std::size_t>>(),
            (std::vector<std::size_t>{0, 20, 40, 60, 80, 100, 120, 140, 150}));
  EXPECT_EQ(m["config"]["run"]["train"]["lr0"], 1e-12);
  EXPECT_EQ(slurp(model), before);  // input artifact untouched
}

TEST_F(Cli, LoraFineTuneStartsAtLoadedModelScore) {
  const auto model = pretrained("pre");
  const auto before = slurp(model);
  write(root / "ft.json", R"({"train": {"epochs": 1, "steps_per_epoch": 2}})");
  const auto r = forge_cli("finetune --model " + model + " --data " + data() + " --val " + val() +
                           " --lora r=16,alpha=16 --config " + path("ft.json") + " --out " + path("lora.model") +
                           " --metrics " + path("lora_m"));
  ASSERT_EQ(r.code, 0) << r.output;
  ASSERT_EQ(forge_cli("eval --model " + model + " --data " + val() + " --out " + path("pre_eval")).code, 0);
  const double loaded = json_of(root / "pre_eval" / "dice_report.json")["mean_dsc"].get<double>();
  const double initial = json_of(root / "lora_m" / "metrics.json")["initial"]["mean_dsc"].get<double>();
  EXPECT_NEAR(initial, loaded, 1e-12);
  EXPECT_EQ(slurp(model), before);
  const auto art = load_artifact(root / "lora.model");
  ASSERT_TRUE(art.lora.has_value());
  EXPECT_EQ(art.lora->config.rank, 16u);
  EXPECT_EQ(json_of(root / "lora_m" / kRunManifestName)["config"]["run"]["train"]["lr0"], 1e-4);  // fine-tune default
}

TEST_F(Cli, FineTuneErrors) {
  const auto model = pretrained("pre");
  const std::string tail = " --data " + data() + " --val " + val() + " --config " + path("quick.json") + " --metrics " + path("fte_m");
  EXPECT_EQ(forge_cli("finetune --model " + path("missing.model") + tail + " --out " + path("x.model")).code, 2);
  EXPECT_EQ(forge_cli("finetune --model " + model + tail + " --out " + model).code, 2);
  EXPECT_EQ(forge_cli("finetune --model " + model + tail + " --out " + path("x.model") + " --strategy sometimes").code, 2);
  EXPECT_EQ(forge_cli("finetune --model " + model + tail + " --out " + path("x.model") + " --lora r=0").code, 2);
  EXPECT_EQ(forge_cli("finetune --model " + model + tail + " --out " + path("x.model") + " --lora alpha=4").code, 2);
  write(root / "corrupt.model", "garbage");
  EXPECT_EQ(forge_cli("finetune --model " + path("corrupt.model") + tail + " --out " + path("x.model")).code, 3);
}

TEST_F(Cli, LabelMismatchNeedsRemap) {
  const auto model = pretrained("pre");
  write(root / "subset_spec.json", std::string(R"({"label_subset": [2], )") + std::string(kSpec).substr(1));
  ASSERT_EQ(forge_cli("synth --spec " + path("subset_spec.json") + " --n 3 --seed 3 --out " + path("subset")).code, 0);
  const std::string args = "finetune --model " + model + " --data " + path("subset") + " --config " + path("quick.json") +
                           " --out " + path("remap.model") + " --metrics " + path("remap_m");
  EXPECT_EQ(forge_cli(args).code, 3);
  const auto r = forge_cli(args + " --remap-labels --strategy gu");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto art = load_artifact(root / "remap.model");
  EXPECT_EQ(art.plan.num_classes, 2u);
  EXPECT_EQ(art.label_names.at(1), "dim");
}

TEST_F(Cli, NonFiniteWeightsExitFour) {
  auto art = load_artifact(pretrained("pre"));
  for (auto& w : art.weights)
    if (w.name == "enc0.conv_a.weight") w.data.assign(w.data.size(), std::numeric_limits<float>::quiet_NaN());
  save_artifact(art, root / "nan.model");
  const auto r = forge_cli("finetune --model " + path("nan.model") + " --data " + data() + " --val " + val() + " --config " +
                           path("quick.json") + " --out " + path("nan_out.model") + " --metrics " + path("nan_m"));
  EXPECT_EQ(r.code, 4) << r.output;
  EXPECT_NE(r.output.find("epoch 1"), std::string::npos) << r.output;
}

TEST_F(Cli, EvalOfSaturatedModelIsNearOne) {
  // One bright sphere on a dark, noise-free background; fit to its own data.
  write(root / "easy_spec.json", R"({"shape": [12, 24, 24], "noise_std": 0, "morphology_jitter": 0.2,
    "structures": [{"name": "ball", "center": [0.5, 0.5, 0.5], "radius_mm": [4, 7, 7], "intensity": [1.5, 1.5]}]})");
  ASSERT_EQ(forge_cli("synth --spec " + path("easy_spec.json") + " --n 3 --seed 4 --out " + path("easy")).code, 0);
  write(root / "easy.json", R"({"train": {"epochs": 12, "lr0": 0.01, "steps_per_epoch": 8, "augment": "none"},
    "planner": {"base_channels": 4, "max_levels": 2}})");
  const auto r = forge_cli("train --data " + path("easy") + " --val " + path("easy") + " --arch dynunet --config " +
                           path("easy.json") + " --mem-budget 1e6 --out " + path("easy.model") + " --metrics " + path("easy_m"));
  ASSERT_EQ(r.code, 0) << r.output;
  ASSERT_EQ(forge_cli("eval --model " + path("easy.model") + " --data " + path("easy") + " --out " + path("easy_eval")).code, 0);
  const auto rep = json_of(root / "easy_eval" / "dice_report.json");
  EXPECT_GT(rep["mean_dsc"].get<double>(), 0.95);
  EXPECT_EQ(rep["n_volumes"], 3);
  const auto csv = slurp(root / "easy_eval" / "dice_report.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "label_id,label,dsc");
  EXPECT_EQ(forge_cli("eval --model " + path("none.model") + " --data " + path("easy") + " --out " + path("e2")).code, 2);
}

TEST_F(Cli, CompareGainArithmetic) {
  const std::map<std::string, std::vector<double>> curves{
      {"scratch", {0.30, 0.62, 0.7987, 0.79}}, {"gu", {0.81, 0.8864, 0.88, 0.87}}, {"lora", {0.70, 0.84, 0.8512, 0.85}}};
  std::string runs;
  for (const auto& [name, curve] : curves) {
    MetricsRecord rec;
    rec.label_names = {{0, "background"}, {1, "a"}};
    for (std::size_t i = 0; i < curve.size(); ++i) rec.epochs.push_back({i + 1, 1e-3, 0.5, 0.5, {{1, curve[i]}}, curve[i], 10});
    write_metrics(rec, root / "runs" / name);
    runs += " " + (root / "runs" / name).string();
  }
  const auto r = forge_cli("compare --runs" + runs + " --baseline scratch --out " + path("cmp"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream in(root / "cmp" / "comparison.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "strategy,best_avg_dsc,gain_vs_baseline_points,peak_epoch,epoch_at_85");
  const double base = 0.7987;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string name, best, gain;
    std::getline(ss, name, ',');
    std::getline(ss, best, ',');
    std::getline(ss, gain, ',');
    const auto& c = curves.at(name);
    const double peak = *std::max_element(c.begin(), c.end());
    EXPECT_NEAR(std::stod(best), peak, 5e-5);
    EXPECT_NEAR(std::stod(gain), (peak - base) * 100.0, 5e-3) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 3u);
  EXPECT_NE(r.output.find("+8.77 pts"), std::string::npos) << r.output;
  EXPECT_EQ(forge_cli("compare --runs" + runs + " --baseline transfer --out " + path("cmp2")).code, 2);
  EXPECT_FALSE(fs::exists(root / "cmp2"));
  EXPECT_EQ(forge_cli("compare --runs " + path("runs/absent") + " --out " + path("cmp3")).code, 3);
  EXPECT_EQ(forge_cli("compare --runs a=" + (root / "runs" / "gu").string() + " a=" + (root / "runs" / "lora").string() +
                      " --out " + path("cmp4")).code, 2);
}
