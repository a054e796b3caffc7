#pragma once

// Artifact-level scoring: raw bundle -> stored preprocessing -> sliding-window
// inference -> raw geometry -> DSC against the raw labels.

#include <memory>
#include <vector>

#include "forge/eval/metrics.hpp"
#include "forge/train/artifact.hpp"
#include "forge/train/inference.hpp"

namespace forge {

template <typename T = float>
Predictor artifact_predictor(const ModelArtifact& art, double overlap = 0.5) {
  auto net = std::make_shared<Network<T>>(build_network<T>(art));
  const PreprocessSettings pre = art.preprocess;
  return [net, pre, overlap](const VolumeBundle& raw) {
    const auto p = preprocess(raw, pre);
    return restore_geometry(sliding_window_infer(*net, p.bundle, overlap), p.bundle.spatial, p.trace);
  };
}

inline DiceReport evaluate(const ModelArtifact& art, const std::vector<VolumeBundle>& bundles, double overlap = 0.5) {
  return evaluate(artifact_predictor(art, overlap), bundles, art.label_names);
}

}  // namespace forge
