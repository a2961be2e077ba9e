// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "dgamil/bagging.hpp"
#include "dgamil/io_util.hpp"
#include "dgamil/model.hpp"

namespace dgamil {

using json = nlohmann::json;

inline json gat_config_json(const GatConfig& g) {
  return json{{"heads", g.heads},       {"d_k", g.d_k},
              {"leaky_slope", g.leaky_slope}, {"n_edges", g.n_edges},
              {"edge_mode", to_string(g.edge_mode)}, {"ffn_hidden", g.ffn_hidden}};
}

inline GatConfig gat_config_from_json(const json& j) {
  GatConfig g;
  g.heads = j.at("heads").get<int>();
  g.d_k = j.at("d_k").get<int>();
  g.leaky_slope = j.at("leaky_slope").get<double>();
  g.n_edges = j.at("n_edges").get<int>();
  g.edge_mode = edge_mode_from_string(j.at("edge_mode").get<std::string>());
  g.ffn_hidden = j.at("ffn_hidden").get<int>();
  return g;
}

inline json model_config_json(const ModelConfig& m) {
  return json{{"backbone",
               {{"channels", m.backbone.channels},
                {"blocks_per_stage", m.backbone.blocks_per_stage},
                {"in_channels", m.backbone.in_channels},
                {"input_h", m.backbone.input_h},
                {"input_w", m.backbone.input_w},
                {"post_1x1_blocks", m.backbone.post_1x1_blocks}}},
              {"spatial_gat", gat_config_json(m.spatial_gat)},
              {"instance_gat", gat_config_json(m.instance_gat)},
              {"use_spatial_agg", m.use_spatial_agg},
              {"use_instance_agg", m.use_instance_agg},
              {"use_disentangle", m.use_disentangle},
              {"head_hidden", m.head_hidden},
              {"prelim_hidden", m.prelim_hidden},
              {"decp2_random_partner", m.decp2_random_partner}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  const json& b = j.at("backbone");
  m.backbone.channels = b.at("channels").get<std::vector<int64_t>>();
  m.backbone.blocks_per_stage = b.at("blocks_per_stage").get<int>();
  m.backbone.in_channels = b.at("in_channels").get<int>();
  m.backbone.input_h = b.at("input_h").get<int>();
  m.backbone.input_w = b.at("input_w").get<int>();
  m.backbone.post_1x1_blocks = b.at("post_1x1_blocks").get<int>();
  m.spatial_gat = gat_config_from_json(j.at("spatial_gat"));
  m.instance_gat = gat_config_from_json(j.at("instance_gat"));
  m.use_spatial_agg = j.at("use_spatial_agg").get<bool>();
  m.use_instance_agg = j.at("use_instance_agg").get<bool>();
  m.use_disentangle = j.at("use_disentangle").get<bool>();
  m.head_hidden = j.at("head_hidden").get<int>();
  m.prelim_hidden = j.at("prelim_hidden").get<int>();
  m.decp2_random_partner = j.at("decp2_random_partner").get<bool>();
  return m;
}

inline json bag_config_json(const BagConfig& b) {
  return json{{"m", b.m},       {"k", b.k},
              {"axis", b.axis}, {"norm", to_string(b.norm)},
              {"pad_multiple", b.pad_multiple}};
}

inline BagConfig bag_config_from_json(const json& j) {
  BagConfig b;
  b.m = j.at("m").get<int>();
  b.k = j.at("k").get<int>();
  b.axis = j.at("axis").get<int>();
  b.norm = norm_mode_from_string(j.at("norm").get<std::string>());
  b.pad_multiple = j.at("pad_multiple").get<int>();
  return b;
}

// Checkpoint layout: "DGACKPT1 <json_bytes>\n", the JSON manifest (model and
// bagging config plus named tensor shapes/offsets), then the raw f64le
// payload. Doubles round-trip bit-exactly.
inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            const ModelConfig& mcfg, const BagConfig& bag, const json& meta) {
  json manifest;
  manifest["version"] = 1;
  manifest["model"] = model_config_json(mcfg);
  manifest["bagging"] = bag_config_json(bag);
  manifest["meta"] = meta;
  json params = json::array();
  int64_t offset = 0;
  for (const Param& p : store.all()) {
    params.push_back(json{{"name", p.name},
                          {"shape", p.value.shape},
                          {"offset", offset},
                          {"trainable", p.trainable}});
    offset += p.value.numel();
  }
  manifest["params"] = params;
  manifest["total_scalars"] = offset;
  const std::string text = manifest.dump();

  auto os = open_out(path);
  os << "DGACKPT1 " << text.size() << "\n" << text;
  for (const Param& p : store.all())
    os.write(reinterpret_cast<const char*>(p.value.data.data()),
             static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
  if (!os) throw std::runtime_error("save_checkpoint: I/O failure on " + path);
}

struct LoadedCheckpoint {
  ParamStore store;
  AgeModel model;
  BagConfig bag;
  json meta;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  auto is = open_in(path);
  std::string magic, len_str;
  is >> magic >> len_str;
  if (magic != "DGACKPT1") throw FormatError("checkpoint: bad magic string");
  is.get();  // newline
  size_t len = 0;
  try {
    len = std::stoull(len_str);
  } catch (...) {
    throw FormatError("checkpoint: bad manifest length");
  }
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<size_t>(is.gcount()) != len) throw FormatError("checkpoint: truncated manifest");
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: manifest parse error: ") + e.what());
  }

  LoadedCheckpoint out;
  const ModelConfig mcfg = model_config_from_json(manifest.at("model"));
  out.bag = bag_config_from_json(manifest.at("bagging"));
  out.meta = manifest.at("meta");
  Rng rng(0);  // every parameter is overwritten below
  out.model = AgeModel::build(out.store, mcfg, rng);

  const json& params = manifest.at("params");
  if (params.size() != out.store.size())
    throw FormatError("checkpoint: parameter count " + std::to_string(params.size()) +
                      " does not match architecture (" + std::to_string(out.store.size()) + ")");
  for (const json& pj : params) {
    const std::string name = pj.at("name").get<std::string>();
    const int id = out.store.find(name);
    if (id < 0) throw FormatError("checkpoint: unknown parameter '" + name + "'");
    Param& p = out.store.at(id);
    const auto shape = pj.at("shape").get<std::vector<int64_t>>();
    if (shape != p.value.shape)
      throw FormatError("checkpoint: parameter '" + name + "' expected shape " +
                        p.value.shape_str());
    is.read(reinterpret_cast<char*>(p.value.data.data()),
            static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
    if (static_cast<size_t>(is.gcount()) != p.value.data.size() * sizeof(double))
      throw FormatError("checkpoint: payload truncated at parameter '" + name + "'");
  }
  return out;
}

// Names of parameters in checkpoint order; the manifest view used by tests
// and the ablation bookkeeping.
inline std::vector<std::string> checkpoint_param_names(const std::string& path) {
  auto is = open_in(path);
  std::string magic, len_str;
  is >> magic >> len_str;
  if (magic != "DGACKPT1") throw FormatError("checkpoint: bad magic string");
  is.get();
  std::string text(std::stoull(len_str), '\0');
  is.read(text.data(), static_cast<std::streamsize>(text.size()));
  const json manifest = json::parse(text);
  std::vector<std::string> names;
  for (const json& pj : manifest.at("params")) names.push_back(pj.at("name").get<std::string>());
  return names;
}

}  // namespace dgamil
