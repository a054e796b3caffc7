#pragma once

// Training loop shared by scratch training and fine-tuning.
//
// Per epoch e (0-based): lr = schedule(e), trainable mask from the freeze
// schedule, `steps` AdamW updates on soft Dice, then validation in raw
// geometry. Patch plans draw 3:1 foreground-centred patches; full-slice 2D
// plans draw whole slices from the foreground-bearing range of one volume per
// batch. The best epoch (strictly highest mean DSC) is snapshotted; training
// stops once `patience` epochs pass without improvement.

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/data/augment.hpp"
#include "forge/data/preprocess.hpp"
#include "forge/data/sampling.hpp"
#include "forge/eval/metrics.hpp"
#include "forge/train/artifact.hpp"
#include "forge/train/freeze.hpp"
#include "forge/train/inference.hpp"
#include "forge/train/loss.hpp"
#include "forge/train/metrics_record.hpp"
#include "forge/train/optim.hpp"
#include "forge/train/schedule.hpp"

namespace forge {

inline constexpr std::size_t kMaxDefaultSteps = 50;

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t patience = 20;
  double lr0 = 1e-3;
  double lr_min = 1e-6;
  double weight_decay = 1e-4;
  LrScheduleKind schedule = LrScheduleKind::Cosine;
  std::optional<std::size_t> batch_size;       // default: plan batch size
  std::optional<std::size_t> steps_per_epoch;  // default: derived from foreground volume
  std::uint64_t seed = 0;
  AugmentPolicy augment = AugmentPolicy::scratch();
  double positive_fraction = kDefaultPositiveFraction;
  double overlap = 0.5;
  FreezePolicy freeze;
  std::optional<LoraConfig> lora;

  static TrainConfig finetune_defaults() {
    TrainConfig c;
    c.lr0 = 1e-4;
    c.augment = AugmentPolicy::finetune();
    return c;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be finite and > 0");
    if (!(lr_min >= 0.0) || lr_min > lr0) throw ConfigError("lr_min must lie in [0, lr0]");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (batch_size && *batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (steps_per_epoch && *steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
    if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) throw ConfigError("positive_fraction must lie in [0, 1]");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("overlap must lie in [0, 1)");
    augment.validate();
    freeze.validate();
    if (lora) lora->validate();
  }
};

inline nlohmann::ordered_json augment_to_json(const AugmentPolicy& a) {
  return {{"flip", a.flip},
          {"rotate90", a.rotate90},
          {"zoom", {a.zoom_lo, a.zoom_hi}},
          {"gaussian_noise_std", a.gaussian_noise_std}};
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["lr0"] = c.lr0;
  j["lr_min"] = c.lr_min;
  j["weight_decay"] = c.weight_decay;
  j["lr_schedule"] = to_string(c.schedule);
  j["batch_size"] = c.batch_size ? nlohmann::ordered_json(*c.batch_size) : nlohmann::ordered_json(nullptr);
  j["steps_per_epoch"] = c.steps_per_epoch ? nlohmann::ordered_json(*c.steps_per_epoch) : nlohmann::ordered_json(nullptr);
  j["seed"] = c.seed;
  j["augment"] = augment_to_json(c.augment);
  j["positive_fraction"] = c.positive_fraction;
  j["overlap"] = c.overlap;
  j["freeze"] = c.freeze.str();
  j["norm_always_trainable"] = c.freeze.norm_always_trainable;
  j["lora"] = c.lora ? lora_config_to_json(*c.lora) : nlohmann::ordered_json(nullptr);
  return j;
}

/// Overlays the keys present in `j` onto `base`. Unknown keys are config errors.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  static const std::vector<std::string> known{"epochs",        "patience", "lr0",    "lr_min",   "weight_decay",
                                              "lr_schedule",   "batch_size", "steps_per_epoch", "seed", "augment",
                                              "positive_fraction", "overlap", "freeze", "norm_always_trainable", "lora"};
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("config: unknown key '" + k + "'");
  try {
    if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("patience")) c.patience = j["patience"].get<std::size_t>();
    if (j.contains("lr0")) c.lr0 = j["lr0"].get<double>();
    if (j.contains("lr_min")) c.lr_min = j["lr_min"].get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("lr_schedule")) c.schedule = lr_schedule_from_string(j["lr_schedule"].get<std::string>());
    if (j.contains("batch_size"))
      c.batch_size = j["batch_size"].is_null() ? std::nullopt : std::optional(j["batch_size"].get<std::size_t>());
    if (j.contains("steps_per_epoch"))
      c.steps_per_epoch =
          j["steps_per_epoch"].is_null() ? std::nullopt : std::optional(j["steps_per_epoch"].get<std::size_t>());
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      if (a.is_string()) {
        const auto s = a.get<std::string>();
        if (s == "none") c.augment = AugmentPolicy::none();
        else if (s == "scratch") c.augment = AugmentPolicy::scratch();
        else if (s == "finetune") c.augment = AugmentPolicy::finetune();
        else throw ConfigError("config: unknown augment preset '" + s + "'");
      } else {
        c.augment.flip = a.value("flip", c.augment.flip);
        c.augment.rotate90 = a.value("rotate90", c.augment.rotate90);
        if (a.contains("zoom")) {
          c.augment.zoom_lo = a["zoom"].at(0).get<double>();
          c.augment.zoom_hi = a["zoom"].at(1).get<double>();
        }
        c.augment.gaussian_noise_std = a.value("gaussian_noise_std", c.augment.gaussian_noise_std);
      }
    }
    if (j.contains("positive_fraction")) c.positive_fraction = j["positive_fraction"].get<double>();
    if (j.contains("overlap")) c.overlap = j["overlap"].get<double>();
    if (j.contains("freeze")) {
      const bool keep = c.freeze.norm_always_trainable;
      c.freeze = FreezePolicy::parse(j["freeze"].get<std::string>());
      c.freeze.norm_always_trainable = keep;
    }
    if (j.contains("norm_always_trainable")) c.freeze.norm_always_trainable = j["norm_always_trainable"].get<bool>();
    if (j.contains("lora")) c.lora = j["lora"].is_null() ? std::nullopt : std::optional(lora_config_from_json(j["lora"]));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Preprocessed volumes plus the raw labels validation is scored against.
struct TrainData {
  std::vector<PreprocessedVolume> volumes;
  std::vector<LabelMap> raw_labels;

  std::size_t size() const { return volumes.size(); }
};

inline TrainData prepare_data(const std::vector<VolumeBundle>& raw, const PreprocessSettings& settings) {
  TrainData d;
  for (const auto& b : raw) {
    d.volumes.push_back(preprocess(b, settings));
    d.raw_labels.push_back(b.labels);
  }
  return d;
}

struct TrainInputs {
  NetworkPlan plan;  // ignored when fine-tuning (inherited from `init`)
  PreprocessSettings preprocess;
  std::map<int, std::string> label_names;
  const ModelArtifact* init = nullptr;
  bool remap_labels = false;
};

struct EpochStatus {
  const EpochMetrics& metrics;
  std::size_t best_epoch;
  double best_mean_dsc;
  double seconds;
};

using StatusCallback = std::function<void(const EpochStatus&)>;

struct TrainResult {
  ModelArtifact artifact;
  MetricsRecord metrics;
};

namespace detail {

template <typename T>
struct Batch {
  Tensor<T> image;
  LabelMap labels;
};

template <typename T>
Batch<T> stack(const std::vector<Sample>& samples) {
  const auto& first = samples.front();
  Shape shape{samples.size(), first.channels};
  shape.insert(shape.end(), first.spatial.begin(), first.spatial.end());
  std::vector<T> img;
  img.reserve(numel(shape));
  LabelMap labels;
  labels.reserve(samples.size() * first.voxels());
  for (const auto& s : samples) {
    if (s.spatial != first.spatial) throw DimensionError("batch: samples differ in shape");
    img.insert(img.end(), s.image.begin(), s.image.end());
    labels.insert(labels.end(), s.labels.begin(), s.labels.end());
  }
  return {Tensor<T>(std::move(shape), std::move(img)), std::move(labels)};
}

// Soft Dice on averaged probabilities, matching dice_loss on logits.
inline double soft_dice_from_probs(const std::vector<float>& probs, const LabelMap& labels, std::size_t k) {
  const std::size_t vol = labels.size();
  double mean = 0.0;
  for (std::size_t c = 1; c < k; ++c) {
    double inter = 0.0, denom = 0.0;
    for (std::size_t v = 0; v < vol; ++v) {
      const double p = probs[c * vol + v];
      const bool t = labels[v] == c;
      denom += p + (t ? 1.0 : 0.0);
      if (t) inter += p;
    }
    mean += (2.0 * inter + kDiceEps) / (denom + kDiceEps) / static_cast<double>(k - 1);
  }
  return 1.0 - mean;
}

}  // namespace detail

/// Default optimizer steps per epoch: ceil(sum_i ceil(fg_i / patch_voxels) / batch), capped.
inline std::size_t default_steps_per_epoch(const TrainData& d, const NetworkPlan& plan, std::size_t batch) {
  std::size_t patches = 0;
  for (const auto& v : d.volumes) {
    const auto& b = v.bundle;
    std::size_t fg = 0;
    for (auto l : b.labels) fg += l != 0;
    std::size_t unit;
    if (!plan.full_slice()) unit = numel(plan.patch_size);
    else unit = b.spatial.size() == static_cast<std::size_t>(plan.dims) ? b.voxels() : b.voxels() / b.spatial[0];
    patches += (fg + unit - 1) / unit;
  }
  const std::size_t steps = (patches + batch - 1) / batch;
  return std::clamp<std::size_t>(steps, 1, kMaxDefaultSteps);
}

/// Draws training batches from preprocessed volumes.
template <typename T>
class BatchSource {
 public:
  BatchSource(const TrainData& data, const NetworkPlan& plan, double positive_fraction) : data_(&data), plan_(&plan) {
    const auto nd = static_cast<std::size_t>(plan.dims);
    for (const auto& v : data.volumes) {
      const auto& b = v.bundle;
      if (b.spatial.size() == nd + 1 && plan.full_slice()) {
        auto s = select_slices(b, 1);
        if (s.empty())
          for (std::size_t i = 0; i < b.spatial[0]; ++i) s.push_back(i);
        slices_.push_back(std::move(s));
      } else if (b.spatial.size() == nd) {
        if (!plan.full_slice()) samplers_.emplace_back(b, plan.patch_size, positive_fraction);
      } else {
        throw DimensionError("training volume rank " + std::to_string(b.spatial.size()) +
                             " incompatible with a " + std::to_string(nd) + "D network");
      }
    }
  }

  template <typename Rng>
  detail::Batch<T> next(std::size_t batch, const AugmentPolicy& aug, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick_vol(0, data_->size() - 1);
    std::vector<Sample> samples;
    if (!slices_.empty()) {
      const std::size_t v = pick_vol(rng);
      const auto& sel = slices_[v];
      std::uniform_int_distribution<std::size_t> pick(0, sel.size() - 1);
      for (std::size_t i = 0; i < batch; ++i)
        samples.push_back(augment(as_sample(extract_slice(data_->volumes[v].bundle, sel[pick(rng)])), aug, rng));
    } else if (!samplers_.empty()) {
      for (std::size_t i = 0; i < batch; ++i) samples.push_back(augment(samplers_[pick_vol(rng)].draw(rng), aug, rng));
    } else {
      const std::size_t v = pick_vol(rng);
      for (std::size_t i = 0; i < batch; ++i) samples.push_back(augment(as_sample(data_->volumes[v].bundle), aug, rng));
    }
    return detail::stack<T>(samples);
  }

 private:
  const TrainData* data_;
  const NetworkPlan* plan_;
  std::vector<PatchSampler> samplers_;
  std::vector<std::vector<std::size_t>> slices_;
};

/// Validation loss and DSC, scored against raw labels in raw geometry.
template <typename T>
ValidationScore validate(Network<T>& net, const TrainData& val, const std::map<int, std::string>& label_names,
                         double overlap) {
  const std::size_t k = net.plan().num_classes;
  std::vector<LabelMap> preds;
  double loss = 0.0;
  for (const auto& v : val.volumes) {
    const auto probs = predict_bundle_probabilities(net, v.bundle, overlap);
    loss += detail::soft_dice_from_probs(probs, v.bundle.labels, k);
    const auto lab = argmax_labels(probs, k, v.bundle.voxels());
    preds.push_back(restore_geometry(lab, v.bundle.spatial, v.trace));
  }
  std::vector<int> fg;
  for (const auto& [id, n] : label_names)
    if (id != 0) fg.push_back(id);
  const auto rep = dice_report(preds, val.raw_labels, fg);
  return {val.volumes.empty() ? 0.0 : loss / static_cast<double>(val.volumes.size()), rep.per_label, rep.mean};
}

/// Parameters updated at epoch `epoch` (0-based). Adapted base weights never are.
template <typename T>
std::vector<ParamRef<T>> trainable_parameters(const Network<T>& net, const FreezeSchedule& schedule, std::size_t epoch) {
  std::vector<ParamRef<T>> out;
  for (const auto& p : net.parameters()) {
    if (p.role == ParamRole::Weight && net.conv(p.layer).lora) continue;
    const bool on = p.is_norm() ? schedule.norm_trainable(p.group, epoch) : schedule.group_trainable(p.group, epoch);
    if (on) out.push_back(p);
  }
  return out;
}

template <typename T>
void apply_mask(Network<T>& net, const std::vector<ParamRef<T>>& trainable) {
  std::set<std::string> on;
  for (const auto& p : trainable) on.insert(p.name);
  for (auto& p : net.parameters()) {
    Tensor<T> h = p.tensor;
    h.set_requires_grad(on.count(p.name) > 0);
    h.zero_grad();
  }
}

/// Runs training; the returned artifact holds the best epoch's weights.
template <typename T = float>
TrainResult train(const TrainConfig& cfg, const TrainInputs& in, const TrainData& train_set, const TrainData& val_set,
                  const StatusCallback& status = {}) {
  cfg.validate();
  if (train_set.size() == 0) throw UsageError("train: empty training set");
  if (val_set.size() == 0) throw UsageError("train: empty validation set");
  const bool fine_tune = in.init != nullptr;
  if (!fine_tune && (cfg.freeze.mode != FreezeMode::None || cfg.lora)) {
    throw UsageError("train: freezing and LoRA adapt a pre-trained model; supply an initial artifact");
  }

  std::mt19937_64 rng(cfg.seed);
  std::optional<Network<T>> holder;
  PreprocessSettings pre = in.preprocess;
  const auto classes = static_cast<std::size_t>(in.label_names.rbegin()->first) + 1;
  bool head_reset = false;
  if (fine_tune) {
    holder.emplace(build_network<T>(*in.init));
    pre = in.init->preprocess;
    if (in.init->label_names != in.label_names) {
      if (!in.remap_labels) {
        throw DataError("label space of the data differs from the model's; use label remapping to train a fresh head");
      }
      holder->reset_head(classes, rng);
      head_reset = true;
    }
  } else {
    auto plan = in.plan;
    plan.num_classes = classes;
    holder.emplace(plan);
    holder->init_random(rng);
  }
  Network<T>& net = *holder;
  if (net.plan().num_classes != classes) throw DataError("train: class count differs from the network head");

  std::optional<LoraConfig> lora = cfg.lora;
  if (lora) {
    if (head_reset) lora->exclude.push_back("head");
    net.inject_lora(*lora, rng);
  }

  const std::size_t batch = cfg.batch_size.value_or(net.plan().batch_size);
  const std::size_t steps = cfg.steps_per_epoch.value_or(default_steps_per_epoch(train_set, net.plan(), batch));
  FreezeSchedule schedule(cfg.freeze, net.group_count(), cfg.epochs);
  AdamW<T> opt({0.9, 0.999, 1e-8, cfg.weight_decay});
  BatchSource<T> source(train_set, net.plan(), cfg.positive_fraction);

  MetricsRecord rec;
  rec.label_names = in.label_names;
  rec.initial = validate(net, val_set, in.label_names, cfg.overlap);

  std::optional<Network<T>> best;
  double best_dsc = -1.0;
  std::size_t since_best = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = scheduled_lr(cfg.schedule, static_cast<double>(e), cfg.lr0, cfg.lr_min, static_cast<double>(cfg.epochs));
    const auto params = trainable_parameters(net, schedule, e);
    apply_mask(net, params);
    std::vector<NamedTensor<T>> named;
    std::size_t n_trainable = 0;
    for (const auto& p : params) {
      named.push_back({p.name, p.tensor});
      n_trainable += p.tensor.numel();
    }

    net.set_training(true);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      auto b = source.next(batch, cfg.augment, rng);
      const auto logits = net.plan().full_slice() ? net.forward_padded(b.image) : net.forward(b.image);
      const auto loss = dice_loss(logits, b.labels);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(e + 1) + ", step " + std::to_string(s + 1));
      }
      loss_sum += lv;
      if (named.empty()) continue;
      loss.backward();
      try {
        opt.step(named, lr);
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " at epoch " + std::to_string(e + 1) + ", step " +
                           std::to_string(s + 1));
      }
      for (auto& p : named) p.tensor.zero_grad();
    }

    const auto score = validate(net, val_set, in.label_names, cfg.overlap);
    EpochMetrics m{e + 1, lr, loss_sum / static_cast<double>(steps), score.val_loss, score.dsc, score.mean_dsc, n_trainable};
    rec.epochs.push_back(m);
    if (m.mean_dsc > best_dsc) {
      best_dsc = m.mean_dsc;
      rec.best_epoch = e + 1;
      rec.best_mean_dsc = m.mean_dsc;
      best.emplace(net.clone());
      since_best = 0;
    } else {
      ++since_best;
    }
    if (status) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      status({rec.epochs.back(), rec.best_epoch, rec.best_mean_dsc, secs});
    }
    if (since_best >= cfg.patience && e + 1 < cfg.epochs) {
      rec.stopped_early = true;
      break;
    }
  }

  nlohmann::ordered_json echo = to_json(cfg);
  echo["mode"] = fine_tune ? "finetune" : "scratch";
  echo["batch_size_effective"] = batch;
  echo["steps_per_epoch_effective"] = steps;
  echo["remap_labels"] = head_reset;
  echo["unfreeze_epochs"] = schedule.unfreeze_epochs();
  TrainResult out;
  out.artifact = make_artifact(*best, pre, in.label_names, lora, echo);
  out.metrics = std::move(rec);
  return out;
}

}  // namespace forge
