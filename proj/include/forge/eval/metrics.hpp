#pragma once

// Overlap scoring and convergence analysis.
//   dsc = 2|P & R| / (|P| + |R|); 1 when both sets are empty.
//   convergence: 1-based peak epoch (earliest on ties) and the first epoch
//   reaching 85% of that run's own peak.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/data/archive.hpp"
#include "forge/data/volume.hpp"
#include "forge/train/metrics_record.hpp"

namespace forge {

inline double dsc(const LabelMap& pred, const LabelMap& ref, std::uint16_t label) {
  if (pred.size() != ref.size()) {
    throw DimensionError("dsc: prediction has " + std::to_string(pred.size()) + " voxels, reference " +
                         std::to_string(ref.size()));
  }
  std::size_t p = 0, r = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] == label, b = ref[i] == label;
    p += a;
    r += b;
    both += a && b;
  }
  if (p + r == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + r);
}

struct DiceReport {
  std::map<int, double> per_label;
  double mean = 0.0;
  std::size_t n_volumes = 0;
};

/// Per-label DSC averaged over volumes where the label occurs in the reference
/// or the prediction; mean over labels occurring in some reference.
inline DiceReport dice_report(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& refs,
                              const std::vector<int>& foreground_labels) {
  if (preds.size() != refs.size()) throw UsageError("dice_report: prediction and reference counts differ");
  DiceReport rep;
  rep.n_volumes = refs.size();
  std::map<int, std::pair<double, std::size_t>> acc;
  std::set<int> in_ref;
  for (std::size_t v = 0; v < refs.size(); ++v) {
    for (int l : foreground_labels) {
      const auto id = static_cast<std::uint16_t>(l);
      bool pr = false, rf = false;
      for (auto x : preds[v]) pr = pr || x == id;
      for (auto x : refs[v]) rf = rf || x == id;
      if (rf) in_ref.insert(l);
      if (!pr && !rf) continue;
      auto& [sum, n] = acc[l];
      sum += dsc(preds[v], refs[v], id);
      ++n;
    }
  }
  for (const auto& [l, sn] : acc) rep.per_label[l] = sn.first / static_cast<double>(sn.second);
  double total = 0.0;
  for (int l : in_ref) total += rep.per_label.at(l);
  rep.mean = in_ref.empty() ? 0.0 : total / static_cast<double>(in_ref.size());
  return rep;
}

using Predictor = std::function<LabelMap(const VolumeBundle&)>;

/// Scores `predict` on raw bundles. Every reference label must be known to the label space.
inline DiceReport evaluate(const Predictor& predict, const std::vector<VolumeBundle>& bundles,
                           const std::map<int, std::string>& label_names) {
  std::vector<int> fg;
  for (const auto& [id, n] : label_names)
    if (id != 0) fg.push_back(id);
  std::vector<LabelMap> preds, refs;
  for (const auto& b : bundles) {
    for (auto l : b.label_ids_present())
      if (!label_names.count(l)) throw DataError("evaluate: reference label " + std::to_string(l) + " unknown to the model");
    auto p = predict(b);
    if (p.size() != b.labels.size()) throw DimensionError("evaluate: prediction size differs from reference");
    preds.push_back(std::move(p));
    refs.push_back(b.labels);
  }
  return dice_report(preds, refs, fg);
}

struct ConvergenceSummary {
  std::size_t peak_epoch = 0;
  double peak_value = 0.0;
  std::size_t epoch_at_85 = 0;
};

inline ConvergenceSummary convergence(const std::vector<double>& curve, double fraction = 0.85) {
  if (curve.empty()) throw UsageError("convergence: empty curve");
  ConvergenceSummary s;
  s.peak_value = curve[0];
  s.peak_epoch = 1;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i] > s.peak_value) {
      s.peak_value = curve[i];
      s.peak_epoch = i + 1;
    }
  const double threshold = fraction * s.peak_value;
  for (std::size_t i = 0; i < curve.size(); ++i)
    if (curve[i] >= threshold) {
      s.epoch_at_85 = i + 1;
      break;
    }
  return s;
}

struct NamedRun {
  std::string name;
  MetricsRecord record;
};

struct ReportRow {
  std::string strategy;
  double best = 0.0;
  std::optional<double> gain_points;
  ConvergenceSummary conv;
};

/// Gain vs baseline in absolute percentage points, rounded to 2 decimals.
inline double gain_points(double value, double baseline) { return std::round((value - baseline) * 1e4) / 1e2; }

inline std::vector<ReportRow> report_rows(const std::vector<NamedRun>& runs, const std::optional<std::string>& baseline) {
  if (runs.empty()) throw UsageError("emit_report: no runs");
  std::optional<double> base;
  if (baseline) {
    for (const auto& r : runs)
      if (r.name == *baseline) base = convergence(r.record.mean_curve()).peak_value;
    if (!base) throw UsageError("emit_report: baseline run '" + *baseline + "' not found");
  }
  std::vector<ReportRow> rows;
  for (const auto& r : runs) {
    ReportRow row;
    row.strategy = r.name;
    row.conv = convergence(r.record.mean_curve());
    row.best = row.conv.peak_value;
    if (base) row.gain_points = gain_points(row.best, *base);
    rows.push_back(row);
  }
  return rows;
}

inline std::string fixed(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string signed_fixed(double v, int prec) { return (v >= 0 ? "+" : "") + fixed(v, prec); }

/// comparison.csv, comparison.txt and curve_<name>.csv under `dir`.
inline void emit_report(const std::vector<NamedRun>& runs, const std::filesystem::path& dir,
                        const std::optional<std::string>& baseline = std::nullopt) {
  const auto rows = report_rows(runs, baseline);
  const bool gain = baseline.has_value();
  std::ostringstream csv, txt;
  csv << "strategy,best_avg_dsc" << (gain ? ",gain_vs_baseline_points" : "") << ",peak_epoch,epoch_at_85\n";
  for (const auto& r : rows) {
    csv << r.strategy << ',' << fixed(r.best, 4);
    if (gain) csv << ',' << signed_fixed(*r.gain_points, 2);
    csv << ',' << r.conv.peak_epoch << ',' << r.conv.epoch_at_85 << '\n';
  }
  char line[256];
  if (gain) {
    std::snprintf(line, sizeof line, "%-16s %13s %14s %10s %10s\n", "Strategy", "Best Avg DSC", "Gain vs " ,
                  "Peak Ep.", "Ep. @85%");
    txt << line;
    std::snprintf(line, sizeof line, "%-16s %13s %14s %10s %10s\n", "", "", baseline->c_str(), "", "");
    txt << line;
  } else {
    std::snprintf(line, sizeof line, "%-16s %13s %10s %10s\n", "Strategy", "Best Avg DSC", "Peak Ep.", "Ep. @85%");
    txt << line;
  }
  for (const auto& r : rows) {
    if (gain) {
      std::snprintf(line, sizeof line, "%-16s %13s %14s %10zu %10zu\n", r.strategy.c_str(), fixed(r.best, 4).c_str(),
                    (signed_fixed(*r.gain_points, 2) + " pts").c_str(), r.conv.peak_epoch, r.conv.epoch_at_85);
    } else {
      std::snprintf(line, sizeof line, "%-16s %13s %10zu %10zu\n", r.strategy.c_str(), fixed(r.best, 4).c_str(),
                    r.conv.peak_epoch, r.conv.epoch_at_85);
    }
    txt << line;
  }
  std::filesystem::create_directories(dir);
  write_text(dir / "comparison.csv", csv.str());
  write_text(dir / "comparison.txt", txt.str());
  for (const auto& run : runs) {
    std::ostringstream c;
    c << "epoch,mean_dsc\n";
    for (const auto& e : run.record.epochs) c << e.epoch << ',' << fmt_num(e.mean_dsc) << '\n';
    write_text(dir / ("curve_" + run.name + ".csv"), c.str());
  }
}

}  // namespace forge
