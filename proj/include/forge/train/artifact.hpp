#pragma once

// Model artifact: a ustar archive holding
//   manifest.json    format_version, label_names, weight and adapter tables
//                    (name, shape, offset in floats), CRC-32 of every other entry
//   arch.json        NetworkPlan + format_version
//   preprocess.json  target_spacing, patch_size, normalization, crop settings
//   weights.raw      f32 little-endian, concatenated in manifest order
//   lora.json/.raw   optional adapter state (A, B and the pre-merge base weight)
//   training.json    echo of the training configuration
//
// Exported conv weights always carry any adapter merged in, so the artifact
// runs without adapter support; the separate adapter state lets fine-tuning
// resume or inspect the low-rank update.

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/data/archive.hpp"
#include "forge/data/preprocess.hpp"
#include "forge/data/raw.hpp"
#include "forge/net/network.hpp"

namespace forge {

inline constexpr int kArtifactFormatVersion = 1;
inline constexpr const char* kArtifactExtension = ".model";

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct LoraExport {
  LoraConfig config;
  std::vector<std::string> layers;
  std::vector<NamedArray> arrays;  // <layer>.lora_a, <layer>.lora_b, <layer>.base
};

struct ModelArtifact {
  NetworkPlan plan;
  PreprocessSettings preprocess;
  std::map<int, std::string> label_names;
  std::vector<NamedArray> weights;
  std::optional<LoraExport> lora;
  nlohmann::ordered_json training = nlohmann::ordered_json::object();

  const NamedArray& weight(const std::string& name) const {
    for (const auto& w : weights)
      if (w.name == name) return w;
    throw FormatError("artifact: no weight named '" + name + "'");
  }
};

// ---- JSON codecs ------------------------------------------------------------

inline nlohmann::ordered_json plan_to_json(const NetworkPlan& p) {
  nlohmann::ordered_json j;
  j["format_version"] = kArtifactFormatVersion;
  j["dims"] = p.dims;
  j["kernels"] = p.kernels;
  j["strides"] = p.strides;
  j["channels"] = p.channels;
  j["in_channels"] = p.in_channels;
  j["num_classes"] = p.num_classes;
  j["norm"] = to_string(p.norm);
  j["patch_size"] = p.patch_size;
  j["batch_size"] = p.batch_size;
  return j;
}

inline NetworkPlan plan_from_json(const nlohmann::json& j) {
  NetworkPlan p;
  try {
    p.dims = j.at("dims").get<int>();
    p.kernels = j.at("kernels").get<std::vector<Extents>>();
    p.strides = j.at("strides").get<std::vector<Extents>>();
    p.channels = j.at("channels").get<std::vector<std::size_t>>();
    p.in_channels = j.at("in_channels").get<std::size_t>();
    p.num_classes = j.at("num_classes").get<std::size_t>();
    p.norm = norm_kind_from_string(j.at("norm").get<std::string>());
    p.patch_size = j.at("patch_size").get<Extents>();
    p.batch_size = j.at("batch_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("arch.json: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("arch.json: ") + e.what());
  }
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("arch.json: ") + e.what());
  }
  return p;
}

inline nlohmann::ordered_json preprocess_to_json(const PreprocessSettings& s, const Extents& patch) {
  nlohmann::ordered_json j;
  j["target_spacing"] = s.target_spacing;
  j["patch_size"] = patch;
  j["normalization"] = s.normalization;
  j["crop"] = s.crop;
  j["crop_margin"] = s.crop_margin;
  return j;
}

inline PreprocessSettings preprocess_from_json(const nlohmann::json& j) {
  PreprocessSettings s;
  try {
    s.target_spacing = j.at("target_spacing").get<std::vector<double>>();
    s.normalization = j.at("normalization").get<std::string>();
    s.crop = j.value("crop", true);
    s.crop_margin = j.value("crop_margin", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("preprocess.json: ") + e.what());
  }
  return s;
}

inline nlohmann::ordered_json lora_config_to_json(const LoraConfig& c) {
  return {{"rank", c.rank}, {"alpha", c.alpha}, {"adapt_head", c.adapt_head}, {"exclude", c.exclude}};
}

inline LoraConfig lora_config_from_json(const nlohmann::json& j) {
  LoraConfig c;
  c.rank = j.at("rank").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.adapt_head = j.value("adapt_head", true);
  c.exclude = j.value("exclude", std::vector<std::string>{});
  return c;
}

namespace detail {

// Packs arrays into one f32 blob and returns the table describing it.
inline std::pair<Bytes, nlohmann::ordered_json> pack_arrays(const std::vector<NamedArray>& arrays) {
  std::vector<float> flat;
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  for (const auto& a : arrays) {
    if (a.data.size() != numel(a.shape)) throw UsageError("artifact: array '" + a.name + "' size does not match shape");
    table.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", flat.size()}});
    flat.insert(flat.end(), a.data.begin(), a.data.end());
  }
  return {encode_f32(flat), table};
}

inline std::vector<NamedArray> unpack_arrays(const Bytes& raw, const nlohmann::json& table, const std::string& what) {
  std::vector<NamedArray> out;
  std::size_t total = 0;
  try {
    for (const auto& e : table) total = std::max(total, e.at("offset").get<std::size_t>() + numel(e.at("shape").get<Shape>()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
  if (raw.size() != 4 * total) throw FormatError(what + ": size does not match its table");
  const auto flat = decode_f32(raw, total, what);
  for (const auto& e : table) {
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<Shape>();
    const auto off = e.at("offset").get<std::size_t>();
    a.data.assign(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + numel(a.shape)));
    out.push_back(std::move(a));
  }
  return out;
}

inline nlohmann::json parse_entry(const std::map<std::string, Bytes>& entries, const std::string& name,
                                  const std::string& what) {
  try {
    return nlohmann::json::parse(to_string(require_entry(entries, name, what)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(name + ": " + e.what());
  }
}

template <typename T>
NamedArray to_array(const std::string& name, const Tensor<T>& t) {
  return {name, t.shape(), std::vector<float>(t.values().begin(), t.values().end())};
}

template <typename T>
void assign(Tensor<T>& t, const NamedArray& a) {
  if (a.shape != t.shape()) {
    throw FormatError("artifact: '" + a.name + "' has shape " + shape_str(a.shape) + ", network expects " +
                      shape_str(t.shape()));
  }
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(a.data[i]);
}

}  // namespace detail

// ---- archive I/O ------------------------------------------------------------

inline Bytes serialize_artifact(const ModelArtifact& art) {
  const auto [weights_raw, weight_table] = detail::pack_arrays(art.weights);
  std::vector<ArchiveEntry> payload;
  payload.push_back({"arch.json", to_bytes(plan_to_json(art.plan).dump(2) + "\n")});
  payload.push_back({"preprocess.json", to_bytes(preprocess_to_json(art.preprocess, art.plan.patch_size).dump(2) + "\n")});
  payload.push_back({"weights.raw", weights_raw});
  if (art.lora) {
    const auto [lora_raw, lora_table] = detail::pack_arrays(art.lora->arrays);
    nlohmann::ordered_json lj;
    lj["config"] = lora_config_to_json(art.lora->config);
    lj["layers"] = art.lora->layers;
    lj["arrays"] = lora_table;
    payload.push_back({"lora.json", to_bytes(lj.dump(2) + "\n")});
    payload.push_back({"lora.raw", lora_raw});
  }
  payload.push_back({"training.json", to_bytes(art.training.dump(2) + "\n")});

  nlohmann::ordered_json m;
  m["format_version"] = kArtifactFormatVersion;
  nlohmann::ordered_json names = nlohmann::ordered_json::object();
  for (const auto& [id, n] : art.label_names) names[std::to_string(id)] = n;
  m["label_names"] = names;
  m["weights"] = weight_table;
  nlohmann::ordered_json sums = nlohmann::ordered_json::object();
  for (const auto& e : payload) sums[e.name] = crc32_hex(e.data);
  m["checksums"] = sums;

  std::vector<ArchiveEntry> entries{{"manifest.json", to_bytes(m.dump(2) + "\n")}};
  entries.insert(entries.end(), payload.begin(), payload.end());
  return pack_archive(entries);
}

inline ModelArtifact deserialize_artifact(const Bytes& raw, const std::string& what = "model") {
  const auto entries = unpack_archive(raw, what);
  const auto m = detail::parse_entry(entries, "manifest.json", what);
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kArtifactFormatVersion) {
      throw VersionError(what + ": unsupported artifact format_version " + std::to_string(version) + " (expected " +
                         std::to_string(kArtifactFormatVersion) + ")");
    }
    for (const auto& [name, sum] : m.at("checksums").items()) {
      if (crc32_hex(require_entry(entries, name, what)) != sum.get<std::string>()) {
        throw FormatError(what + ": checksum mismatch in " + name);
      }
    }
    for (const char* required : {"arch.json", "preprocess.json", "weights.raw", "training.json"}) {
      if (!m.at("checksums").contains(required)) throw FormatError(what + ": manifest lacks a checksum for " + required);
    }
    ModelArtifact art;
    art.plan = plan_from_json(detail::parse_entry(entries, "arch.json", what));
    art.preprocess = preprocess_from_json(detail::parse_entry(entries, "preprocess.json", what));
    for (const auto& [k, v] : m.at("label_names").items()) art.label_names[std::stoi(k)] = v.get<std::string>();
    art.weights = detail::unpack_arrays(require_entry(entries, "weights.raw", what), m.at("weights"), "weights.raw");
    art.training = nlohmann::ordered_json::parse(to_string(require_entry(entries, "training.json", what)));
    if (m.at("checksums").contains("lora.json")) {
      const auto lj = detail::parse_entry(entries, "lora.json", what);
      LoraExport le;
      le.config = lora_config_from_json(lj.at("config"));
      le.layers = lj.at("layers").get<std::vector<std::string>>();
      le.arrays = detail::unpack_arrays(require_entry(entries, "lora.raw", what), lj.at("arrays"), "lora.raw");
      art.lora = std::move(le);
    }
    return art;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed manifest (" + e.what() + ")");
  } catch (const std::invalid_argument&) {
    throw FormatError(what + ": non-integer label id in manifest");
  }
}

inline void save_artifact(const ModelArtifact& art, const std::filesystem::path& path) {
  write_file(path, serialize_artifact(art));
}

inline ModelArtifact load_artifact(const std::filesystem::path& path) {
  return deserialize_artifact(read_file(path), path.string());
}

/// The stored architecture, ready to rebuild an identical network.
inline NetworkPlan inherit_plan(const ModelArtifact& art) {
  try {
    art.plan.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("artifact plan: ") + e.what());
  }
  return art.plan;
}

// ---- network <-> artifact ---------------------------------------------------

/// Weight table in layer order; adapters merged, batch-norm running statistics included.
template <typename T>
std::vector<NamedArray> export_weights(const Network<T>& net) {
  std::vector<NamedArray> out;
  for (const auto& c : net.convs()) {
    const ConvLayer<T> plain = c.lora ? merged_copy(c) : c;
    out.push_back(detail::to_array(c.name + ".weight", plain.weight));
    if (c.bias) out.push_back(detail::to_array(c.name + ".bias", *c.bias));
  }
  for (const auto& n : net.norms()) {
    out.push_back(detail::to_array(n.name + ".gamma", n.gamma));
    out.push_back(detail::to_array(n.name + ".beta", n.beta));
    if (n.kind == NormKind::Batch) {
      const Shape s{n.stats.mean.size()};
      out.push_back({n.name + ".running_mean", s, std::vector<float>(n.stats.mean.begin(), n.stats.mean.end())});
      out.push_back({n.name + ".running_var", s, std::vector<float>(n.stats.var.begin(), n.stats.var.end())});
    }
  }
  return out;
}

template <typename T>
std::optional<LoraExport> export_lora(const Network<T>& net, const LoraConfig& cfg) {
  if (!net.has_lora()) return std::nullopt;
  LoraExport le;
  le.config = cfg;
  for (const auto& c : net.convs()) {
    if (!c.lora) continue;
    le.layers.push_back(c.name);
    le.arrays.push_back(detail::to_array(c.name + ".lora_a", c.lora->a));
    le.arrays.push_back(detail::to_array(c.name + ".lora_b", c.lora->b));
    le.arrays.push_back(detail::to_array(c.name + ".base", c.lora->frozen_weight));
  }
  return le;
}

template <typename T>
ModelArtifact make_artifact(const Network<T>& net, const PreprocessSettings& pre, std::map<int, std::string> label_names,
                            const std::optional<LoraConfig>& lora = std::nullopt,
                            nlohmann::ordered_json training = nlohmann::ordered_json::object()) {
  ModelArtifact art;
  art.plan = net.plan();
  art.preprocess = pre;
  art.label_names = std::move(label_names);
  art.weights = export_weights(net);
  if (lora) art.lora = export_lora(net, *lora);
  art.training = std::move(training);
  return art;
}

/// Rebuilds the network. With `with_adapters`, adapted layers get their stored
/// base weight and A/B factors back instead of the merged weight.
template <typename T>
Network<T> build_network(const ModelArtifact& art, bool with_adapters = false) {
  Network<T> net(inherit_plan(art));
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& w : art.weights) by_name[w.name] = &w;
  auto take = [&](const std::string& name) -> const NamedArray& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("artifact: weight '" + name + "' missing");
    return *it->second;
  };
  for (auto& c : net.convs()) {
    detail::assign(c.weight, take(c.name + ".weight"));
    if (c.bias) detail::assign(*c.bias, take(c.name + ".bias"));
  }
  for (auto& n : net.norms()) {
    detail::assign(n.gamma, take(n.name + ".gamma"));
    detail::assign(n.beta, take(n.name + ".beta"));
    if (n.kind == NormKind::Batch) {
      const auto& m = take(n.name + ".running_mean");
      const auto& v = take(n.name + ".running_var");
      if (m.data.size() != n.stats.mean.size() || v.data.size() != n.stats.var.size()) {
        throw FormatError("artifact: running statistics of '" + n.name + "' have the wrong size");
      }
      n.stats.mean.assign(m.data.begin(), m.data.end());
      n.stats.var.assign(v.data.begin(), v.data.end());
    }
  }
  if (with_adapters && art.lora) {
    std::map<std::string, const NamedArray*> la;
    for (const auto& a : art.lora->arrays) la[a.name] = &a;
    auto get = [&](const std::string& name) -> const NamedArray& {
      const auto it = la.find(name);
      if (it == la.end()) throw FormatError("artifact: adapter array '" + name + "' missing");
      return *it->second;
    };
    for (const auto& layer : art.lora->layers) {
      auto& c = net.conv(layer);
      detail::assign(c.weight, get(layer + ".base"));
      LoraState<T> st;
      st.spec = c.spec;
      st.rank = art.lora->config.rank;
      st.alpha = art.lora->config.alpha;
      st.a = Tensor<T>::zeros(lora_a_shape(c.spec, st.rank), true);
      st.b = Tensor<T>::zeros(lora_b_shape(c.spec, st.rank), true);
      detail::assign(st.a, get(layer + ".lora_a"));
      detail::assign(st.b, get(layer + ".lora_b"));
      c.weight.set_requires_grad(false);
      st.frozen_weight = c.weight;
      c.lora = std::move(st);
    }
  }
  return net;
}

}  // namespace forge
