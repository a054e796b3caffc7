// forge: command-line front end.
//
//   forge synth        --out DIR --n N [--spec FILE] [--seed S]
//   forge fingerprint  --data DIR --out FILE
//   forge train        --data DIR --arch unet2d|unet3d|dynunet [--config FILE] --out MODEL --metrics DIR
//   forge finetune     --model MODEL --data DIR [--strategy gu|static:<f>|none] [--lora r=<r>,alpha=<a>] ...
//   forge eval         --model MODEL --data DIR --out DIR
//   forge compare      --runs DIR... [--baseline NAME] --out DIR
//
// Exit codes: 0 success, 2 usage/config, 3 data/format, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "forge/cli/manifest.hpp"
#include "forge/cli/run_config.hpp"
#include "forge/data/bundle_io.hpp"
#include "forge/eval/evaluate.hpp"
#include "forge/synth/phantom.hpp"
#include "forge/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace forge;

namespace {

struct Dataset {
  std::vector<fs::path> files;
  std::vector<VolumeBundle> bundles;
};

/// Every *.bundle in `dir`, in file-name order. Checksums go to the manifest.
Dataset load_dataset(const fs::path& dir, RunManifest& manifest) {
  if (!fs::is_directory(dir)) throw UsageError("data directory not found: " + dir.string());
  Dataset d;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == kBundleExtension) d.files.push_back(e.path());
  if (d.files.empty()) throw UsageError("no " + std::string(kBundleExtension) + " files in " + dir.string());
  std::sort(d.files.begin(), d.files.end());
  for (const auto& f : d.files) {
    const Bytes raw = read_file(f);
    manifest.add_input(f, raw);
    d.bundles.push_back(deserialize_bundle(raw, f.string()));
  }
  return d;
}

std::map<int, std::string> common_label_names(const std::vector<VolumeBundle>& bundles) {
  const auto& names = bundles.front().label_names;
  for (const auto& b : bundles)
    if (b.label_names != names) throw DataError("bundles disagree on their label-name tables");
  if (names.size() < 2) throw DataError("bundles declare no foreground label");
  return names;
}

Bytes read_file_checked(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw UsageError("file not found: " + path.string());
  return read_file(path);
}

ModelArtifact load_model(const fs::path& path, RunManifest& manifest) {
  if (!fs::is_regular_file(path)) throw UsageError("model file not found: " + path.string());
  const Bytes raw = read_file(path);
  manifest.add_input(path, raw);
  return deserialize_artifact(raw, path.string());
}

MemoryBudget resolve_budget(const std::optional<double>& flag) {
  MemoryBudget mem;
  if (flag) mem.units = *flag;
  if (const char* env = std::getenv("FORGE_MEM_BUDGET"); env && *env) {
    char* end = nullptr;
    mem.units = std::strtod(env, &end);
    if (end == env || *end != '\0') throw UsageError(std::string("FORGE_MEM_BUDGET is not a number: '") + env + "'");
  }
  if (!(mem.units > 0.0)) throw UsageError("memory budget must be > 0");
  return mem;
}

/// "r=16,alpha=16"; alpha defaults to r.
LoraConfig parse_lora(const std::string& text) {
  LoraConfig c;
  std::optional<double> alpha;
  bool have_rank = false;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--lora: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      std::size_t used = 0;
      if (key == "r" || key == "rank") {
        const long r = std::stol(value, &used);
        if (r < 1) throw UsageError("--lora: rank must be >= 1");
        c.rank = static_cast<std::size_t>(r);
        have_rank = true;
      } else if (key == "alpha") {
        alpha = std::stod(value, &used);
      } else {
        throw UsageError("--lora: unknown key '" + key + "'");
      }
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::logic_error&) {
      throw UsageError("--lora: cannot parse '" + item + "'");
    }
  }
  if (!have_rank) throw UsageError("--lora: r=<rank> is required");
  c.alpha = alpha.value_or(static_cast<double>(c.rank));
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw UsageError(std::string("--lora: ") + e.what());
  }
  return c;
}

nlohmann::ordered_json fingerprint_json(const DatasetFingerprint& fp) {
  return {{"n_volumes", fp.n_volumes},
          {"median_spacing", fp.median_spacing},
          {"median_shape", fp.median_shape},
          {"target_spacing", fp.target_spacing}};
}

std::vector<std::string> file_names(const std::vector<fs::path>& files) {
  std::vector<std::string> out;
  for (const auto& f : files) out.push_back(f.filename().string());
  return out;
}

void print_status(const EpochStatus& s, std::size_t total) {
  std::printf("epoch=%zu/%zu lr=%s train_loss=%.6f val_loss=%.6f mean_dsc=%.6f best_epoch=%zu best_mean_dsc=%.6f time_s=%.2f\n",
              s.metrics.epoch, total, fmt_num(s.metrics.lr).c_str(), s.metrics.train_loss, s.metrics.val_loss,
              s.metrics.mean_dsc, s.best_epoch, s.best_mean_dsc, s.seconds);
  std::fflush(stdout);
}

// ---- options shared by train and finetune -----------------------------------

struct TrainOptions {
  fs::path data, val, config, out, metrics;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

void add_train_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--data", o.data, "Directory of training bundles")->required();
  cmd->add_option("--val", o.val, "Directory of validation bundles (default: seeded split of --data)");
  cmd->add_option("--config", o.config, "Run configuration JSON");
  cmd->add_option("--out", o.out, "Output model artifact")->required();
  cmd->add_option("--metrics", o.metrics, "Output directory for metrics and the run manifest")->required();
  cmd->add_option("--seed", o.seed, "Overrides train.seed");
  cmd->add_flag("--deterministic", o.deterministic, "Omit wall-clock fields so reruns are byte-identical");
}

struct Splits {
  Dataset train, val;
};

Splits split_data(const TrainOptions& o, const RunConfig& cfg, RunManifest& manifest) {
  Splits s;
  Dataset all = load_dataset(o.data, manifest);
  if (!o.val.empty()) {
    s.train = std::move(all);
    s.val = load_dataset(o.val, manifest);
  } else {
    std::vector<std::size_t> idx(all.files.size());
    std::iota(idx.begin(), idx.end(), 0);
    const auto [tr, va] = split_dataset(idx, cfg.split.ratio, cfg.split.seed.value_or(cfg.train.seed));
    for (auto i : tr) {
      s.train.files.push_back(all.files[i]);
      s.train.bundles.push_back(all.bundles[i]);
    }
    for (auto i : va) {
      s.val.files.push_back(all.files[i]);
      s.val.bundles.push_back(all.bundles[i]);
    }
  }
  manifest.extra("split") = {{"train", file_names(s.train.files)}, {"val", file_names(s.val.files)}};
  return s;
}

void finish_run(const TrainOptions& o, const TrainResult& res, RunManifest& manifest) {
  save_artifact(res.artifact, o.out);
  write_metrics(res.metrics, o.metrics);
  manifest.extra("training") = res.artifact.training;
  manifest.extra("result") = {{"best_epoch", res.metrics.best_epoch},
                              {"best_mean_dsc", res.metrics.best_mean_dsc},
                              {"epochs_run", res.metrics.epochs.size()},
                              {"stopped_early", res.metrics.stopped_early}};
  manifest.add_output(o.out);
  manifest.add_output(o.metrics / "metrics.csv");
  manifest.add_output(o.metrics / "metrics.json");
  manifest.write(o.metrics / kRunManifestName);
  std::printf("done best_epoch=%zu best_mean_dsc=%.6f model=%s\n", res.metrics.best_epoch, res.metrics.best_mean_dsc,
              o.out.string().c_str());
}

// ---- commands -----------------------------------------------------------------

struct SynthOptions {
  fs::path spec, out;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  bool deterministic = false;
};

int cmd_synth(const SynthOptions& o, RunManifest manifest) {
  if (o.n == 0) throw UsageError("--n must be >= 1");
  PhantomSpec spec = default_phantom_spec();
  if (!o.spec.empty()) {
    if (!fs::is_regular_file(o.spec)) throw UsageError("spec file not found: " + o.spec.string());
    const Bytes raw = read_file(o.spec);
    manifest.add_input(o.spec, raw);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(to_string(raw));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(o.spec.string() + ": not valid JSON (" + e.what() + ")");
    }
    spec = phantom_spec_from_json(j);
  }
  spec.validate();
  manifest.set_seed(o.seed);
  manifest.config() = {{"n", o.n}, {"seed", o.seed}, {"phantom", to_json(spec)}};
  const auto bundles = generate_dataset(spec, o.n, o.seed);
  fs::create_directories(o.out);
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "case_%04zu%s", i, kBundleExtension);
    save_bundle(bundles[i], o.out / name);
    manifest.add_output(o.out / name);
  }
  write_text(o.out / "phantom_spec.json", to_json(spec).dump(2) + "\n");
  manifest.add_output(o.out / "phantom_spec.json");
  manifest.write(o.out / kRunManifestName);
  std::printf("wrote %zu bundles to %s\n", bundles.size(), o.out.string().c_str());
  return 0;
}

int cmd_fingerprint(const fs::path& data, const fs::path& out, RunManifest manifest) {
  const auto d = load_dataset(data, manifest);
  const auto fp = compute_fingerprint(d.bundles);
  const auto j = fingerprint_json(fp);
  manifest.config() = {{"data", data.string()}};
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out, j.dump(2) + "\n");
  manifest.add_output(out);
  manifest.write(fs::path(out.string() + "." + kRunManifestName));
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_train(const TrainOptions& o, const std::string& arch, const std::optional<double>& mem_flag,
              RunManifest manifest) {
  RunConfig cfg;
  if (!o.config.empty()) {
    manifest.add_input(o.config, read_file_checked(o.config));
    cfg = load_run_config(o.config, cfg);
  }
  if (o.seed) cfg.train.seed = *o.seed;
  cfg.train.validate();
  if (cfg.train.freeze.mode != FreezeMode::None || cfg.train.lora) {
    throw UsageError("freezing and LoRA apply to fine-tuning; use `forge finetune`");
  }
  const int want_dims = arch == "unet2d" ? 2 : 3;
  if (arch != "dynunet") {
    if (!cfg.network) throw UsageError("--arch " + arch + " needs a --config file with a \"network\" section");
    if (cfg.network->dims != want_dims) {
      throw ConfigError("--arch " + arch + " needs " + std::to_string(want_dims) + "-entry kernels and strides");
    }
  }
  const MemoryBudget mem = resolve_budget(mem_flag);
  manifest.set_seed(cfg.train.seed);

  auto data = split_data(o, cfg, manifest);
  const auto names = common_label_names(data.train.bundles);
  if (common_label_names(data.val.bundles) != names) throw DataError("training and validation label tables differ");

  auto fp = compute_fingerprint(data.train.bundles);
  PreprocessSettings pre = cfg.preprocess;
  if (pre.target_spacing.empty()) pre.target_spacing = fp.median_spacing;
  fp.target_spacing = pre.target_spacing;
  NetworkPlan plan;
  if (arch == "dynunet") {
    PlannerOptions opt = cfg.planner;
    opt.in_channels = data.train.bundles.front().channels;
    opt.num_classes = names.size();
    plan = plan_dynunet(fp, mem, opt);
  } else {
    plan = *cfg.network;
    plan.in_channels = data.train.bundles.front().channels;
    plan.num_classes = names.size();
  }
  plan.validate();

  auto resolved = to_json(cfg);
  resolved["preprocess"]["target_spacing"] = pre.target_spacing;
  resolved["split"]["seed"] = cfg.split.seed.value_or(cfg.train.seed);
  manifest.config() = {{"arch", arch},
                       {"run", resolved},
                       {"memory_budget", {{"units", mem.units}, {"max_batch", mem.max_batch}}},
                       {"fingerprint", fingerprint_json(fp)},
                       {"plan", plan_to_json(plan)}};

  TrainInputs in;
  in.plan = plan;
  in.preprocess = pre;
  in.label_names = names;
  const auto train_set = prepare_data(data.train.bundles, pre);
  const auto val_set = prepare_data(data.val.bundles, pre);
  const std::size_t total = cfg.train.epochs;
  const auto res = train(cfg.train, in, train_set, val_set, [total](const EpochStatus& s) { print_status(s, total); });
  finish_run(o, res, manifest);
  return 0;
}

struct FinetuneOptions {
  TrainOptions common;
  fs::path model;
  std::optional<std::string> strategy;
  std::optional<std::string> lora;
  bool remap_labels = false;
};

int cmd_finetune(const FinetuneOptions& f, RunManifest manifest) {
  const auto& o = f.common;
  std::error_code ec;
  if (fs::exists(f.model) && fs::exists(o.out) && fs::equivalent(f.model, o.out, ec)) {
    throw UsageError("--out must differ from --model; the input artifact is never overwritten");
  }
  const ModelArtifact init = load_model(f.model, manifest);

  RunConfig cfg;
  cfg.train = TrainConfig::finetune_defaults();
  if (!o.config.empty()) {
    manifest.add_input(o.config, read_file_checked(o.config));
    cfg = load_run_config(o.config, cfg);
  }
  if (cfg.network) throw ConfigError("fine-tuning inherits the model's network; remove the \"network\" section");
  if (f.strategy) {
    const bool keep = cfg.train.freeze.norm_always_trainable;
    try {
      cfg.train.freeze = FreezePolicy::parse(*f.strategy);
    } catch (const ConfigError& e) {
      throw UsageError(std::string("--strategy: ") + e.what());
    }
    cfg.train.freeze.norm_always_trainable = keep;
  }
  if (f.lora) cfg.train.lora = parse_lora(*f.lora);
  if (o.seed) cfg.train.seed = *o.seed;
  cfg.train.validate();
  manifest.set_seed(cfg.train.seed);

  auto data = split_data(o, cfg, manifest);
  const auto names = common_label_names(data.train.bundles);
  if (common_label_names(data.val.bundles) != names) throw DataError("training and validation label tables differ");
  if (names != init.label_names && !f.remap_labels) {
    throw DataError("label space of the data differs from the model's; pass --remap-labels to train a fresh head");
  }

  const NetworkPlan plan = inherit_plan(init);
  const FreezeSchedule schedule(cfg.train.freeze, plan.group_count(), cfg.train.epochs);
  auto resolved = to_json(cfg);
  resolved["network"] = plan_to_json(plan);
  resolved["preprocess"] = preprocess_to_json(init.preprocess, plan.patch_size);
  resolved["split"]["seed"] = cfg.split.seed.value_or(cfg.train.seed);
  manifest.config() = {{"model", f.model.string()},
                       {"remap_labels", f.remap_labels},
                       {"run", resolved},
                       {"freeze_schedule",
                        {{"strategy", cfg.train.freeze.str()},
                         {"groups", schedule.groups()},
                         {"interval", schedule.interval()},
                         {"full_unfreeze_epoch", schedule.full_unfreeze_epoch()},
                         {"unfreeze_epochs", schedule.unfreeze_epochs()}}}};

  TrainInputs in;
  in.plan = plan;
  in.preprocess = init.preprocess;
  in.label_names = names;
  in.init = &init;
  in.remap_labels = f.remap_labels;
  const auto train_set = prepare_data(data.train.bundles, init.preprocess);
  const auto val_set = prepare_data(data.val.bundles, init.preprocess);
  const std::size_t total = cfg.train.epochs;
  const auto res = train(cfg.train, in, train_set, val_set, [total](const EpochStatus& s) { print_status(s, total); });
  if (res.metrics.initial) std::printf("initial mean_dsc=%.6f\n", res.metrics.initial->mean_dsc);
  finish_run(o, res, manifest);
  return 0;
}

int cmd_eval(const fs::path& model, const fs::path& data, const fs::path& out, double overlap, RunManifest manifest) {
  const auto art = load_model(model, manifest);
  const auto d = load_dataset(data, manifest);
  if (!(overlap >= 0.0 && overlap < 1.0)) throw UsageError("--overlap must lie in [0, 1)");
  manifest.config() = {{"model", model.string()}, {"data", data.string()}, {"overlap", overlap}};
  const auto rep = evaluate(art, d.bundles, overlap);

  nlohmann::ordered_json per_label = nlohmann::ordered_json::object();
  std::string csv = "label_id,label,dsc\n";
  for (const auto& [id, v] : rep.per_label) {
    const auto& name = art.label_names.at(id);
    per_label[name] = v;
    csv += std::to_string(id) + "," + name + "," + fmt_num(v) + "\n";
  }
  csv += ",mean," + fmt_num(rep.mean) + "\n";
  const nlohmann::ordered_json j{{"n_volumes", rep.n_volumes}, {"mean_dsc", rep.mean}, {"per_label", per_label}};
  fs::create_directories(out);
  write_text(out / "dice_report.json", j.dump(2) + "\n");
  write_text(out / "dice_report.csv", csv);
  manifest.add_output(out / "dice_report.json");
  manifest.add_output(out / "dice_report.csv");
  manifest.write(out / kRunManifestName);
  std::printf("mean_dsc=%.6f n_volumes=%zu\n", rep.mean, rep.n_volumes);
  return 0;
}

/// Run names come from "name=dir" or the directory's own name.
int cmd_compare(const std::vector<std::string>& specs, const std::optional<std::string>& baseline, const fs::path& out,
                RunManifest manifest) {
  std::vector<std::pair<std::string, fs::path>> runs;
  std::set<std::string> seen;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    fs::path dir = eq == std::string::npos ? fs::path(s) : fs::path(s.substr(eq + 1));
    std::string name = eq == std::string::npos ? dir.lexically_normal().filename().string() : s.substr(0, eq);
    if (name.empty()) name = dir.lexically_normal().parent_path().filename().string();
    if (!seen.insert(name).second) throw UsageError("duplicate run name '" + name + "'; use name=dir to disambiguate");
    runs.emplace_back(name, dir);
  }
  if (baseline && !seen.count(*baseline)) throw UsageError("baseline '" + *baseline + "' is not among the runs");
  std::vector<NamedRun> named;
  for (const auto& [name, dir] : runs) {
    const auto path = dir / "metrics.json";
    if (fs::exists(path)) manifest.add_input(path, read_file(path));
    named.push_back({name, read_metrics(dir)});
  }
  nlohmann::ordered_json cfg_runs = nlohmann::ordered_json::array();
  for (const auto& [name, dir] : runs) cfg_runs.push_back({{"name", name}, {"dir", dir.string()}});
  manifest.config() = {{"runs", cfg_runs}, {"baseline", baseline ? nlohmann::ordered_json(*baseline) : nlohmann::ordered_json(nullptr)}};
  emit_report(named, out, baseline);
  for (const char* f : {"comparison.csv", "comparison.txt"}) manifest.add_output(out / f);
  for (const auto& r : named) manifest.add_output(out / ("curve_" + r.name + ".csv"));
  manifest.write(out / kRunManifestName);
  std::cout << to_string(read_file(out / "comparison.txt"));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forge: segmentation training and fine-tuning toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  const std::vector<std::string> args(argv, argv + argc);

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
  c_synth->add_option("--spec", synth.spec, "Phantom spec JSON (default: built-in four-structure phantom)");
  c_synth->add_option("--n", synth.n, "Number of volumes")->required();
  c_synth->add_option("--seed", synth.seed, "Dataset seed");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_flag("--deterministic", synth.deterministic, "Omit wall-clock fields");

  fs::path fp_data, fp_out;
  bool fp_det = false;
  auto* c_fp = app.add_subcommand("fingerprint", "Compute the dataset fingerprint");
  c_fp->add_option("--data", fp_data, "Directory of bundles")->required();
  c_fp->add_option("--out", fp_out, "Output JSON file")->required();
  c_fp->add_flag("--deterministic", fp_det, "Omit wall-clock fields");

  TrainOptions tr;
  std::string arch;
  std::optional<double> mem_budget;
  auto* c_train = app.add_subcommand("train", "Train a network from scratch");
  add_train_options(c_train, tr);
  c_train->add_option("--arch", arch, "Network family")->required()->check(CLI::IsMember({"unet2d", "unet3d", "dynunet"}));
  c_train->add_option("--mem-budget", mem_budget, "Planner memory budget in cost units (FORGE_MEM_BUDGET overrides)");

  FinetuneOptions ft;
  auto* c_ft = app.add_subcommand("finetune", "Fine-tune a trained model");
  add_train_options(c_ft, ft.common);
  c_ft->add_option("--model", ft.model, "Pre-trained model artifact")->required();
  c_ft->add_option("--strategy", ft.strategy, "Freezing strategy: gu, static:<f> or none");
  c_ft->add_option("--lora", ft.lora, "LoRA adapters, e.g. r=16,alpha=16");
  c_ft->add_flag("--remap-labels", ft.remap_labels, "Train a fresh output head for a different label set");

  fs::path ev_model, ev_data, ev_out;
  double ev_overlap = 0.5;
  bool ev_det = false;
  auto* c_eval = app.add_subcommand("eval", "Score a model against labelled bundles");
  c_eval->add_option("--model", ev_model, "Model artifact")->required();
  c_eval->add_option("--data", ev_data, "Directory of bundles")->required();
  c_eval->add_option("--out", ev_out, "Report directory")->required();
  c_eval->add_option("--overlap", ev_overlap, "Sliding-window overlap");
  c_eval->add_flag("--deterministic", ev_det, "Omit wall-clock fields");

  std::vector<std::string> cmp_runs;
  std::optional<std::string> cmp_baseline;
  fs::path cmp_out;
  bool cmp_det = false;
  auto* c_cmp = app.add_subcommand("compare", "Tabulate several training runs");
  c_cmp->add_option("--runs", cmp_runs, "Metrics directories (optionally name=dir)")->required();
  c_cmp->add_option("--baseline", cmp_baseline, "Run the gains are measured against");
  c_cmp->add_option("--out", cmp_out, "Output directory")->required();
  c_cmp->add_flag("--deterministic", cmp_det, "Omit wall-clock fields");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*c_synth) return cmd_synth(synth, RunManifest("synth", args, synth.deterministic));
    if (*c_fp) return cmd_fingerprint(fp_data, fp_out, RunManifest("fingerprint", args, fp_det));
    if (*c_train) return cmd_train(tr, arch, mem_budget, RunManifest("train", args, tr.deterministic));
    if (*c_ft) return cmd_finetune(ft, RunManifest("finetune", args, ft.common.deterministic));
    if (*c_eval) return cmd_eval(ev_model, ev_data, ev_out, ev_overlap, RunManifest("eval", args, ev_det));
    if (*c_cmp) return cmd_compare(cmp_runs, cmp_baseline, cmp_out, RunManifest("compare", args, cmp_det));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
