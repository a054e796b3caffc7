#pragma once

// Per-epoch training metrics and their metrics.csv / metrics.json encodings.
// Epochs are numbered from 1; `initial` holds the validation scores of the
// starting weights, measured before the first update.

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/data/archive.hpp"

namespace forge {

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::map<int, double> dsc;  // foreground label id -> DSC
  double mean_dsc = 0.0;
  std::size_t trainable_params = 0;
};

struct ValidationScore {
  double val_loss = 0.0;
  std::map<int, double> dsc;
  double mean_dsc = 0.0;
};

struct MetricsRecord {
  std::map<int, std::string> label_names;
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
  double best_mean_dsc = 0.0;
  std::optional<ValidationScore> initial;
  bool stopped_early = false;

  std::vector<double> mean_curve() const {
    std::vector<double> c;
    for (const auto& e : epochs) c.push_back(e.mean_dsc);
    return c;
  }
};

/// Shortest decimal text that reads back to the same double.
inline std::string fmt_num(double v) {
  char buf[40];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string label_column(const std::map<int, std::string>& names, int id) {
  const auto it = names.find(id);
  return "dsc_" + (it == names.end() ? std::to_string(id) : it->second);
}

inline std::string metrics_csv(const MetricsRecord& r) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,val_loss";
  for (const auto& [id, name] : r.label_names)
    if (id != 0) os << ',' << label_column(r.label_names, id);
  os << ",mean_dsc,trainable_params\n";
  for (const auto& e : r.epochs) {
    os << e.epoch << ',' << fmt_num(e.lr) << ',' << fmt_num(e.train_loss) << ',' << fmt_num(e.val_loss);
    for (const auto& [id, name] : r.label_names) {
      if (id == 0) continue;
      const auto it = e.dsc.find(id);
      os << ',' << (it == e.dsc.end() ? std::string("") : fmt_num(it->second));
    }
    os << ',' << fmt_num(e.mean_dsc) << ',' << e.trainable_params << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json dsc_json(const std::map<int, double>& d) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, v] : d) j[std::to_string(id)] = v;
  return j;
}

inline std::map<int, double> dsc_from_json(const nlohmann::json& j) {
  std::map<int, double> d;
  for (const auto& [k, v] : j.items()) d[std::stoi(k)] = v.get<double>();
  return d;
}

inline nlohmann::ordered_json to_json(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json names = nlohmann::ordered_json::object();
  for (const auto& [id, n] : r.label_names) names[std::to_string(id)] = n;
  j["label_names"] = names;
  j["best_epoch"] = r.best_epoch;
  j["best_mean_dsc"] = r.best_mean_dsc;
  j["stopped_early"] = r.stopped_early;
  if (r.initial) {
    j["initial"] = {{"val_loss", r.initial->val_loss}, {"dsc", dsc_json(r.initial->dsc)}, {"mean_dsc", r.initial->mean_dsc}};
  }
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"lr", e.lr},
                    {"train_loss", e.train_loss},
                    {"val_loss", e.val_loss},
                    {"dsc", dsc_json(e.dsc)},
                    {"mean_dsc", e.mean_dsc},
                    {"trainable_params", e.trainable_params}});
  }
  j["epochs"] = rows;
  return j;
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
  MetricsRecord r;
  try {
    for (const auto& [k, v] : j.at("label_names").items()) r.label_names[std::stoi(k)] = v.get<std::string>();
    r.best_epoch = j.at("best_epoch").get<std::size_t>();
    r.best_mean_dsc = j.at("best_mean_dsc").get<double>();
    r.stopped_early = j.value("stopped_early", false);
    if (j.contains("initial")) {
      const auto& i = j.at("initial");
      r.initial = ValidationScore{i.at("val_loss").get<double>(), dsc_from_json(i.at("dsc")), i.at("mean_dsc").get<double>()};
    }
    for (const auto& e : j.at("epochs")) {
      r.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("lr").get<double>(), e.at("train_loss").get<double>(),
                          e.at("val_loss").get<double>(), dsc_from_json(e.at("dsc")), e.at("mean_dsc").get<double>(),
                          e.at("trainable_params").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics.json: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw FormatError("metrics.json: non-integer label key");
  }
  return r;
}

inline void write_metrics(const MetricsRecord& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "metrics.csv", metrics_csv(r));
  write_text(dir / "metrics.json", to_json(r).dump(2) + "\n");
}

inline MetricsRecord read_metrics(const std::filesystem::path& dir) {
  const auto path = dir / "metrics.json";
  if (!std::filesystem::exists(path)) throw DataError("no metrics.json in '" + dir.string() + "'");
  try {
    return metrics_from_json(nlohmann::json::parse(to_string(read_file(path))));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace forge
