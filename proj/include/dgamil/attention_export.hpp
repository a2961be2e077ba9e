// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dgamil/model.hpp"
#include "dgamil/bagging.hpp"

namespace dgamil {

// Per-bag interpretability record: instance contribution scores plus the
// per-instance spatial attention maps, with the planted-slab ground truth
// carried along for localization checks.
struct AttentionRecord {
  uint64_t subject_seed = 0;
  double age = 0.0;
  double yhat = 0.0;
  Tensor scores;                  // [K]
  std::vector<Tensor> maps;       // K maps of [H', W']; empty if A_S is ablated
  int slab_ilo = -1, slab_ihi = -1;
};

inline AttentionRecord make_attention_record(ParamStore& store, const AgeModel& model,
                                             const Bag& bag) {
  BatchInput in;
  in.bags = 1;
  in.k = bag.k();
  in.instances = bag.instances;
  in.ages = {bag.age};
  Tape t;
  BoundParams b = bind_params(t, store, false);
  ForwardOptions opt;
  opt.training = false;
  opt.with_loss = false;
  opt.want_views = true;
  BatchResult r = model.forward(t, store, b, in, opt);
  AttentionRecord rec;
  rec.subject_seed = bag.subject_seed;
  rec.age = bag.age;
  rec.yhat = r.views[0].yhat;
  rec.scores = r.views[0].instance_scores;
  rec.maps = r.views[0].spatial_maps;
  const auto range = bag.slab_instance_range();
  rec.slab_ilo = range.first;
  rec.slab_ihi = range.second;
  return rec;
}

inline void write_attention_record(const AttentionRecord& rec, const std::string& path) {
  const int64_t k = rec.scores.numel();
  const int64_t h = rec.maps.empty() ? 0 : rec.maps[0].dim(0);
  const int64_t w = rec.maps.empty() ? 0 : rec.maps[0].dim(1);
  auto os = open_out(path);
  std::string header = "DGAATT1 k=" + std::to_string(k) + " h=" + std::to_string(h) +
                       " w=" + std::to_string(w) + " dtype=f32le seed=" +
                       std::to_string(rec.subject_seed) + " age=" + f64_str(rec.age) +
                       " pred=" + f64_str(rec.yhat) + " slab_ilo=" + std::to_string(rec.slab_ilo) +
                       " slab_ihi=" + std::to_string(rec.slab_ihi);
  write_fixed_header(os, header);
  std::vector<float> payload;
  payload.reserve(static_cast<size_t>(k + k * h * w));
  for (int64_t i = 0; i < k; ++i) payload.push_back(static_cast<float>(rec.scores[i]));
  for (const Tensor& m : rec.maps)
    for (double v : m.data) payload.push_back(static_cast<float>(v));
  write_f32_payload(os, payload);
  if (!os) throw std::runtime_error("write_attention_record: I/O failure on " + path);
}

inline AttentionRecord read_attention_record(const std::string& path) {
  auto is = open_in(path);
  const auto kv = parse_kv(read_fixed_header(is, "DGAATT1"));
  AttentionRecord rec;
  const int64_t k = kv_i64(kv, "k"), h = kv_i64(kv, "h"), w = kv_i64(kv, "w");
  if (kv_get(kv, "dtype") != "f32le") throw FormatError("header: unsupported dtype");
  rec.subject_seed = kv_u64(kv, "seed");
  rec.age = kv_f64(kv, "age");
  rec.yhat = kv_f64(kv, "pred");
  rec.slab_ilo = static_cast<int>(kv_i64(kv, "slab_ilo"));
  rec.slab_ihi = static_cast<int>(kv_i64(kv, "slab_ihi"));
  const std::vector<float> payload =
      read_f32_payload(is, static_cast<size_t>(k + k * h * w), "attention");
  rec.scores = Tensor::zeros({k});
  for (int64_t i = 0; i < k; ++i) rec.scores[i] = payload[static_cast<size_t>(i)];
  for (int64_t j = 0; j < k && h > 0; ++j) {
    Tensor m({h, w});
    for (int64_t i = 0; i < h * w; ++i) m[i] = payload[static_cast<size_t>(k + j * h * w + i)];
    rec.maps.push_back(std::move(m));
  }
  return rec;
}

// Indices of the two largest scores (ties by lower index).
inline std::pair<int, int> top2_instances(const Tensor& scores) {
  int best = 0;
  for (int64_t i = 1; i < scores.numel(); ++i)
    if (scores[i] > scores[best]) best = static_cast<int>(i);
  int second = best == 0 ? 1 : 0;
  for (int64_t i = 0; i < scores.numel(); ++i) {
    if (static_cast<int>(i) == best) continue;
    if (scores[i] > scores[second]) second = static_cast<int>(i);
  }
  return {best, second};
}

}  // namespace dgamil
