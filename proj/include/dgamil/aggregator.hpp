// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dgamil/gat.hpp"

namespace dgamil {

// Spatial aggregator A_S: attention over the H'*W' positions of one
// instance's feature map. Score head: GAT block -> linear reduction to one
// logit per position -> softmax; pooling is the score-weighted channel sum.
struct SpatialAggregatorParams {
  GatBlockParams block;
  int reduce_w = -1, reduce_b = -1;
  GatConfig cfg;
};

inline SpatialAggregatorParams build_spatial_aggregator(ParamStore& store,
                                                        const std::string& prefix, int channels,
                                                        const GatConfig& cfg, Rng& rng) {
  SpatialAggregatorParams p;
  p.cfg = cfg;
  p.block = build_gat_block(store, prefix + ".gat", channels, cfg, rng);
  p.reduce_w = store.add(prefix + ".reduce.weight", normal_init({p.block.width, 1}, p.block.width, rng));
  p.reduce_b = store.add(prefix + ".reduce.bias", Tensor::zeros({1}));
  return p;
}

struct SpatialResult {
  Var scores = nullptr;  // [P], sums to 1
  Var pooled = nullptr;  // [C]
};

// nodes: [P, C] channel vectors of the spatial positions; (map_h, map_w)
// locate them for grid4 edges. Without parameters (ablated A_S) this is
// global average pooling.
inline SpatialResult spatial_aggregate(Tape& t, const BoundParams& b,
                                       const std::optional<SpatialAggregatorParams>& p, Var nodes,
                                       int map_h, int map_w) {
  SpatialResult r;
  if (!p) {
    r.pooled = gap_rows(t, nodes);
    return r;
  }
  const AttentionGraph g = p->cfg.edge_mode == EdgeMode::Grid4
                               ? build_graph_grid4(map_h, map_w)
                               : build_graph_cosine(nodes->value, p->cfg.n_edges, p->cfg.edge_mode);
  Var feat = gat_block_forward(t, b, p->block, nodes, g);
  Var logits = reshape(t, linear(t, feat, b[p->reduce_w], b[p->reduce_b]), {nodes->value.dim(0)});
  r.scores = softmax1d(t, logits);
  r.pooled = weighted_pool_rows(t, nodes, r.scores);
  return r;
}

// Instance aggregator A_I: cosine graph over the K pooled instance vectors,
// GAT block, scalar score per instance (no bias, matching the s_i softmax
// formulation), softmax, weighted sum into the bag embedding z.
struct InstanceAggregatorParams {
  GatBlockParams block;
  int score_w = -1;
  GatConfig cfg;
};

inline InstanceAggregatorParams build_instance_aggregator(ParamStore& store,
                                                          const std::string& prefix, int channels,
                                                          const GatConfig& cfg, Rng& rng) {
  InstanceAggregatorParams p;
  p.cfg = cfg;
  p.block = build_gat_block(store, prefix + ".gat", channels, cfg, rng);
  p.score_w = store.add(prefix + ".score.weight", normal_init({p.block.width, 1}, p.block.width, rng));
  return p;
}

struct InstanceResult {
  Var scores = nullptr;  // [K] simplex
  Var z = nullptr;       // [C]
};

inline InstanceResult instance_aggregate(Tape& t, const BoundParams& b,
                                         const std::optional<InstanceAggregatorParams>& p,
                                         Var instances) {
  InstanceResult r;
  const int64_t k = instances->value.dim(0), c = instances->value.dim(1);
  if (k == 1) {
    warn("bag with a single instance: attention degenerates to identity");
    r.scores = t.leaf(Tensor::full({1}, 1.0));
    r.z = reshape(t, instances, {c});
    return r;
  }
  if (!p) {
    r.scores = t.leaf(Tensor::full({k}, 1.0 / static_cast<double>(k)));
    r.z = gap_rows(t, instances);
    return r;
  }
  if (p->cfg.edge_mode == EdgeMode::Grid4)
    throw ConfigError("instance aggregator: grid4 edges are only defined for spatial maps");
  const AttentionGraph g = build_graph_cosine(instances->value, p->cfg.n_edges, p->cfg.edge_mode);
  Var feat = gat_block_forward(t, b, p->block, instances, g);
  Var logits = reshape(t, linear(t, feat, b[p->score_w]), {k});
  r.scores = softmax1d(t, logits);
  r.z = weighted_pool_rows(t, instances, r.scores);
  return r;
}

}  // namespace dgamil
