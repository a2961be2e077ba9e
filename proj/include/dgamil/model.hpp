// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dgamil/aggregator.hpp"
#include "dgamil/backbone.hpp"
#include "dgamil/disentangle.hpp"

namespace dgamil {

struct LossWeights {
  double lambda2 = 0.1;
  double lambda3 = 0.05;
  double lambda4 = 1.0;
};

// L = L_MSE + l2*L_MSE0 + l3*L_decp1 + l4*L_decp2 (missing components drop out).
inline Var total_loss(Tape& t, Var mse, Var mse0, Var decp1, Var decp2, const LossWeights& w) {
  Var total = mse;
  if (mse0) total = add(t, total, scale(t, mse0, w.lambda2));
  if (decp1) total = add(t, total, scale(t, decp1, w.lambda3));
  if (decp2) total = add(t, total, scale(t, decp2, w.lambda4));
  return total;
}

struct ModelConfig {
  BackboneConfig backbone;
  GatConfig spatial_gat;   // edge_mode may be grid4
  GatConfig instance_gat;
  bool use_spatial_agg = true;
  bool use_instance_agg = true;
  bool use_disentangle = true;
  int head_hidden = 32;
  int prelim_hidden = 32;
  bool decp2_random_partner = false;  // literal random-k variant of the bag-level loss
};

struct HeadParams {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

// Bag tensors ready for the network: B bags of K instances each.
struct BatchInput {
  Tensor instances;          // [B*K, m, S, S]
  int64_t bags = 0;
  int64_t k = 0;
  std::vector<double> ages;  // length B
};

struct BagView {
  double yhat = 0.0;
  Tensor z;                          // [C] age-branch bag embedding
  Tensor instance_scores;            // [K]
  std::vector<Tensor> spatial_maps;  // per instance [H', W'] (empty if A_S ablated)
};

struct BatchResult {
  Var total = nullptr;
  Var mse = nullptr;
  Var mse0 = nullptr;    // null when disentanglement is off
  Var decp1 = nullptr;
  Var decp2 = nullptr;
  Var yhat = nullptr;    // [B]
  std::vector<BagView> views;
};

struct ForwardOptions {
  bool training = false;
  bool with_loss = true;
  LossWeights loss;
  Rng* pairing = nullptr;     // required when with_loss and disentangle are on
  bool want_views = false;
};

struct AgeModel {
  ModelConfig cfg;
  Backbone backbone;
  std::optional<DecouplerParams> decoupler;
  std::optional<PrelimHeadParams> prelim;
  std::optional<SpatialAggregatorParams> spatial_agg;
  std::optional<InstanceAggregatorParams> instance_agg;
  HeadParams head;

  static AgeModel build(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
    AgeModel m;
    m.cfg = cfg;
    m.backbone = Backbone::build(store, cfg.backbone, rng);
    const int c = static_cast<int>(m.backbone.out_channels);
    if (cfg.use_disentangle) {
      m.decoupler = build_decoupler(store, "decoupler", c, rng);
      m.prelim = build_prelim_head(store, "prelim", c, cfg.prelim_hidden, rng);
    }
    if (cfg.use_spatial_agg)
      m.spatial_agg = build_spatial_aggregator(store, "agg.spatial", c, cfg.spatial_gat, rng);
    if (cfg.use_instance_agg)
      m.instance_agg = build_instance_aggregator(store, "agg.instance", c, cfg.instance_gat, rng);
    m.head.w1 = store.add("head.w1", normal_init({c, cfg.head_hidden}, c, rng));
    m.head.b1 = store.add("head.b1", Tensor::zeros({cfg.head_hidden}));
    m.head.w2 = store.add("head.w2", Tensor::zeros({cfg.head_hidden, 1}));
    m.head.b2 = store.add("head.b2", Tensor::zeros({1}));
    return m;
  }

  // Final (and preliminary) bias start at the train-mean age, so the fresh
  // model predicts that mean for any input.
  void set_output_bias(ParamStore& store, double mean_age) const {
    store.at(head.b2).value[0] = mean_age;
    if (prelim) store.at(prelim->b2).value[0] = mean_age;
  }

  // Zeroes both score heads; with disentanglement off this makes the model
  // equal GAP + mean pooling exactly.
  void zero_score_heads(ParamStore& store) const {
    if (spatial_agg) {
      auto& w = store.at(spatial_agg->reduce_w).value;
      std::fill(w.data.begin(), w.data.end(), 0.0);
      store.at(spatial_agg->reduce_b).value[0] = 0.0;
    }
    if (instance_agg) {
      auto& w = store.at(instance_agg->score_w).value;
      std::fill(w.data.begin(), w.data.end(), 0.0);
    }
  }

  Var head_forward(Tape& t, const BoundParams& b, Var z) const {
    Var row = reshape(t, z, {1, z->value.numel()});
    Var h = relu(t, linear(t, row, b[head.w1], b[head.b1]));
    return reshape(t, linear(t, h, b[head.w2], b[head.b2]), {1});
  }

  BatchResult forward(Tape& t, ParamStore& store, const BoundParams& b, const BatchInput& in,
                      const ForwardOptions& opt) const {
    const int64_t bags = in.bags, k = in.k;
    if (bags < 1 || k < 1) throw ConfigError("forward: empty batch");
    if (in.instances.dim(0) != bags * k)
      throw ShapeError("forward: instance stack " + in.instances.shape_str() + " vs B*K = " +
                       std::to_string(bags * k));

    Var x = t.leaf(in.instances);
    Var e = backbone.forward(t, store, b, x, opt.training);
    const int64_t c = backbone.out_channels, mh = backbone.out_h, mw = backbone.out_w;
    const int64_t hw = mh * mw;

    Var e_age4 = e, e_stru4 = nullptr;
    if (decoupler) {
      Decoupled dec = decouple(t, b, *decoupler, e);
      e_age4 = dec.age;
      e_stru4 = dec.stru;
    }
    Var age_flat = reshape(t, e_age4, {bags * k, c * hw});
    Var stru_flat = e_stru4 ? reshape(t, e_stru4, {bags * k, c * hw}) : nullptr;
    Var gap_age = prelim ? gap_spatial(t, e_age4) : nullptr;

    BatchResult out;
    std::vector<Var> yhat_bags, y0_bags, z_age_rows, z_stru_rows, stru_per_bag;
    for (int64_t bag = 0; bag < bags; ++bag) {
      InstanceResult inst_age, inst_stru;
      for (int branch = 0; branch < (stru_flat ? 2 : 1); ++branch) {
        Var flat = branch == 0 ? age_flat : stru_flat;
        std::vector<Var> pooled;
        std::vector<Var> maps;
        for (int64_t j = 0; j < k; ++j) {
          Var row = slice_rows(t, flat, bag * k + j, bag * k + j + 1);
          Var nodes = transpose2d(t, reshape(t, row, {c, hw}));
          SpatialResult sr = spatial_aggregate(t, b, spatial_agg, nodes,
                                               static_cast<int>(mh), static_cast<int>(mw));
          pooled.push_back(sr.pooled);
          if (branch == 0 && opt.want_views && sr.scores) maps.push_back(sr.scores);
        }
        Var g_mat = stack_rows(t, pooled);
        InstanceResult ir = instance_aggregate(t, b, instance_agg, g_mat);
        if (branch == 0) {
          inst_age = ir;
          if (opt.want_views) {
            BagView view;
            view.z = ir.z->value;
            view.instance_scores = ir.scores->value;
            for (Var mvar : maps) {
              Tensor m2({mh, mw}, std::vector<double>(mvar->value.data));
              view.spatial_maps.push_back(std::move(m2));
            }
            out.views.push_back(std::move(view));
          }
        } else {
          inst_stru = ir;
        }
      }
      Var yb = head_forward(t, b, inst_age.z);
      yhat_bags.push_back(yb);
      if (opt.want_views) out.views[static_cast<size_t>(bag)].yhat = yb->value[0];
      z_age_rows.push_back(inst_age.z);
      if (stru_flat) {
        z_stru_rows.push_back(inst_stru.z);
        stru_per_bag.push_back(slice_rows(t, stru_flat, bag * k, (bag + 1) * k));
        Var gbag = slice_rows(t, gap_age, bag * k, (bag + 1) * k);
        y0_bags.push_back(preliminary_age(t, b, *prelim, gbag));
      }
    }

    out.yhat = stack_scalars(t, yhat_bags);
    if (!opt.with_loss) return out;

    if (static_cast<int64_t>(in.ages.size()) != bags)
      throw ConfigError("forward: ages length does not match bag count");
    Tensor targets({bags});
    for (int64_t i = 0; i < bags; ++i) targets[i] = in.ages[static_cast<size_t>(i)];
    out.mse = mse_to_const(t, out.yhat, targets);
    if (stru_flat) {
      if (!opt.pairing) throw ConfigError("forward: pairing rng required for decoupling losses");
      out.mse0 = loss_mse0(t, stack_scalars(t, y0_bags), targets);
      const std::vector<int> partner = draw_partners(static_cast<size_t>(bags), *opt.pairing);
      out.decp1 = loss_decp1(t, stru_per_bag, partner);
      Var z_age_mat = stack_rows(t, z_age_rows);
      Var z_stru_mat = stack_rows(t, z_stru_rows);
      if (cfg.decp2_random_partner) {
        const std::vector<int> p2 = draw_partners(static_cast<size_t>(bags), *opt.pairing);
        std::vector<int> idx(p2.begin(), p2.end());
        z_age_mat = gather_rows(t, z_age_mat, idx);
      }
      out.decp2 = loss_decp2(t, z_stru_mat, z_age_mat);
    }
    out.total = total_loss(t, out.mse, out.mse0, out.decp1, out.decp2, opt.loss);
    return out;
  }
};

}  // namespace dgamil
