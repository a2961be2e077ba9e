// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch.hpp>

#include <cstdio>
#include <filesystem>

#include "dgamil/checkpoint.hpp"
#include "testers.hpp"

using namespace dgamil;
using dgamil::testing::random_tensor;

namespace {

ModelConfig micro_config(bool sagg = true, bool iagg = true, bool dis = true) {
  ModelConfig m;
  m.backbone.channels = {4, 8};
  m.backbone.blocks_per_stage = 2;
  m.backbone.in_channels = 3;
  m.backbone.input_h = 12;
  m.backbone.input_w = 12;
  m.backbone.post_1x1_blocks = 1;
  m.spatial_gat.heads = 2;
  m.spatial_gat.n_edges = 4;
  m.instance_gat.heads = 2;
  m.instance_gat.n_edges = 3;
  m.use_spatial_agg = sagg;
  m.use_instance_agg = iagg;
  m.use_disentangle = dis;
  m.head_hidden = 8;
  m.prelim_hidden = 8;
  return m;
}

BatchInput random_batch(int bags, int k, Rng& rng) {
  BatchInput in;
  in.bags = bags;
  in.k = k;
  in.instances = random_tensor({static_cast<int64_t>(bags) * k, 3, 12, 12}, rng);
  for (int i = 0; i < bags; ++i) in.ages.push_back(rng.uniform(44, 82));
  return in;
}

}  // namespace

TEST_CASE("total_loss recombines with the configured weights", "[model]") {
  Tape t;
  Var mse = t.leaf(Tensor::scalar(1.0), true);
  Var mse0 = t.leaf(Tensor::scalar(2.0), true);
  Var d1 = t.leaf(Tensor::scalar(-1.0), true);
  Var d2 = t.leaf(Tensor::scalar(0.5), true);
  LossWeights w;  // 0.1, 0.05, 1.0
  Var total = total_loss(t, mse, mse0, d1, d2, w);
  REQUIRE(total->value[0] == Approx(1.65).epsilon(1e-12));
  t.backward(total);
  REQUIRE(mse->grad[0] == Approx(1.0).epsilon(1e-12));
  REQUIRE(mse0->grad[0] == Approx(0.1).epsilon(1e-12));
  REQUIRE(d1->grad[0] == Approx(0.05).epsilon(1e-12));
  REQUIRE(d2->grad[0] == Approx(1.0).epsilon(1e-12));

  // zero weights reduce to the MSE alone
  Tape t2;
  Var m2 = t2.leaf(Tensor::scalar(3.25));
  Var z = total_loss(t2, m2, t2.leaf(Tensor::scalar(9.0)), t2.leaf(Tensor::scalar(9.0)),
                     t2.leaf(Tensor::scalar(9.0)), LossWeights{0, 0, 0});
  REQUIRE(z->value[0] == 3.25);
}

TEST_CASE("fresh model with mean-age bias predicts the mean age", "[model]") {
  ParamStore store;
  Rng rng(3);
  AgeModel model = AgeModel::build(store, micro_config(), rng);
  model.set_output_bias(store, 63.217);
  Rng drng(5);
  BatchInput in = random_batch(2, 4, drng);
  Tape t;
  BoundParams b = bind_params(t, store, false);
  ForwardOptions opt;
  opt.with_loss = false;
  BatchResult r = model.forward(t, store, b, in, opt);
  REQUIRE(r.yhat->value[0] == 63.217);
  REQUIRE(r.yhat->value[1] == 63.217);
}

TEST_CASE("loss decomposition matches the logged components", "[model]") {
  ParamStore store;
  Rng rng(7);
  AgeModel model = AgeModel::build(store, micro_config(), rng);
  model.set_output_bias(store, 60.0);
  Rng drng(9);
  BatchInput in = random_batch(3, 4, drng);
  Rng pairing(11);
  Tape t;
  BoundParams b = bind_params(t, store, false);
  ForwardOptions opt;
  opt.training = false;
  opt.with_loss = true;
  opt.loss = LossWeights{0.1, 0.05, 1.0};
  opt.pairing = &pairing;
  BatchResult r = model.forward(t, store, b, in, opt);
  const double recombined = ((r.mse->value[0] + 0.1 * r.mse0->value[0]) + 0.05 * r.decp1->value[0]) +
                            1.0 * r.decp2->value[0];
  REQUIRE(r.total->value[0] == Approx(recombined).margin(1e-6));
  REQUIRE(r.total->value[0] == recombined);  // same association order, bitwise
}

TEST_CASE("ablated architectures carry no aggregator or decoupler parameters", "[model]") {
  ParamStore full_store, none_store, nodis_store;
  Rng r1(1), r2(1), r3(1);
  AgeModel::build(full_store, micro_config(true, true, true), r1);
  AgeModel::build(none_store, micro_config(false, false, false), r2);
  AgeModel::build(nodis_store, micro_config(true, true, false), r3);

  bool full_has_gat = false;
  for (const auto& p : full_store.all())
    if (p.name.rfind("agg.", 0) == 0) full_has_gat = true;
  REQUIRE(full_has_gat);
  for (const auto& p : none_store.all()) {
    REQUIRE(p.name.rfind("agg.", 0) != 0);
    REQUIRE(p.name.rfind("decoupler", 0) != 0);
    REQUIRE(p.name.rfind("prelim", 0) != 0);
  }

  // shared dual aggregator: the disentangled model adds no aggregator copies
  auto agg_names = [](const ParamStore& s) {
    std::vector<std::string> names;
    for (const auto& p : s.all())
      if (p.name.rfind("agg.", 0) == 0) names.push_back(p.name);
    return names;
  };
  REQUIRE(agg_names(full_store) == agg_names(nodis_store));
}

TEST_CASE("zeroed score heads reproduce the GAP+mean baseline bitwise", "[model]") {
  // degenerate full model (disentanglement off, score heads zeroed)
  ParamStore a_store;
  Rng rng(13);
  AgeModel a_model = AgeModel::build(a_store, micro_config(true, true, false), rng);
  a_model.set_output_bias(a_store, 60.0);
  a_model.zero_score_heads(a_store);

  // directly coded baseline: GAP over space, mean over instances
  ParamStore b_store;
  Rng rng2(17);
  AgeModel b_model = AgeModel::build(b_store, micro_config(false, false, false), rng2);
  for (auto& p : b_store.all()) {
    const int src = a_store.find(p.name);
    REQUIRE(src >= 0);  // baseline params are a subset (backbone + head)
    p.value = a_store.at(src).value;
  }

  Rng drng(19);
  BatchInput in = random_batch(3, 5, drng);
  ForwardOptions opt;
  opt.with_loss = false;
  opt.want_views = true;

  Tape ta;
  BatchResult ra = a_model.forward(ta, a_store, bind_params(ta, a_store, false), in, opt);
  Tape tb;
  BatchResult rb = b_model.forward(tb, b_store, bind_params(tb, b_store, false), in, opt);

  for (int i = 0; i < 3; ++i) {
    REQUIRE(ra.yhat->value[i] == rb.yhat->value[i]);  // bitwise
    REQUIRE(ra.views[static_cast<size_t>(i)].z.data == rb.views[static_cast<size_t>(i)].z.data);
    for (int64_t j = 0; j < 5; ++j) {
      REQUIRE(ra.views[static_cast<size_t>(i)].instance_scores[j] == 1.0 / 5.0);
      REQUIRE(rb.views[static_cast<size_t>(i)].instance_scores[j] == 1.0 / 5.0);
    }
  }
}

TEST_CASE("checkpoint round trip restores every tensor and prediction", "[model]") {
  ParamStore store;
  Rng rng(23);
  AgeModel model = AgeModel::build(store, micro_config(), rng);
  model.set_output_bias(store, 58.75);
  // make running buffers non-trivial
  for (auto& p : store.all())
    if (!p.trainable)
      for (auto& v : p.value.data) v += 0.125;

  const std::string path =
      (std::filesystem::temp_directory_path() / "dgamil_ckpt_test.ckpt").string();
  BagConfig bag;
  bag.m = 3;
  json meta;
  meta["mean_train_age"] = 58.75;
  save_checkpoint(path, store, model.cfg, bag, meta);

  LoadedCheckpoint ck = load_checkpoint(path);
  REQUIRE(ck.store.size() == store.size());
  for (size_t i = 0; i < store.size(); ++i) {
    const Param& orig = store.all()[i];
    const int id = ck.store.find(orig.name);
    REQUIRE(id >= 0);
    REQUIRE(ck.store.at(id).value.data == orig.value.data);
    REQUIRE(ck.store.at(id).trainable == orig.trainable);
  }
  REQUIRE(ck.bag.m == 3);
  REQUIRE(ck.meta.at("mean_train_age").get<double>() == 58.75);

  Rng drng(29);
  BatchInput in = random_batch(2, 4, drng);
  ForwardOptions opt;
  opt.with_loss = false;
  Tape t1, t2;
  BatchResult r1 = model.forward(t1, store, bind_params(t1, store, false), in, opt);
  BatchResult r2 = ck.model.forward(t2, ck.store, bind_params(t2, ck.store, false), in, opt);
  for (int i = 0; i < 2; ++i) REQUIRE(r1.yhat->value[i] == r2.yhat->value[i]);

  const auto names = checkpoint_param_names(path);
  REQUIRE(names.size() == store.size());
  REQUIRE(std::find(names.begin(), names.end(), "backbone.stage0.block0.conv.weight") != names.end());
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected with field names", "[model]") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "dgamil_ckpt_bad.ckpt").string();
  {
    std::ofstream os(path, std::ios::binary);
    os << "WRONGMAG 10\n0123456789";
  }
  REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Contains("magic"));

  // truncated payload
  ParamStore store;
  Rng rng(31);
  AgeModel model = AgeModel::build(store, micro_config(false, false, false), rng);
  save_checkpoint(path, store, model.cfg, BagConfig{}, json::object());
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 64);
  REQUIRE_THROWS_WITH(load_checkpoint(path), Catch::Contains("truncated"));
  std::remove(path.c_str());
}

TEST_CASE("forward validates batch geometry", "[model]") {
  ParamStore store;
  Rng rng(37);
  AgeModel model = AgeModel::build(store, micro_config(), rng);
  Rng drng(41);
  BatchInput in = random_batch(2, 4, drng);
  in.bags = 3;  // inconsistent with the instance stack
  Tape t;
  BoundParams b = bind_params(t, store, false);
  ForwardOptions opt;
  opt.with_loss = false;
  REQUIRE_THROWS_AS(model.forward(t, store, b, in, opt), ShapeError);

  BatchInput in2 = random_batch(2, 4, drng);
  in2.ages.pop_back();
  Tape t2;
  BoundParams b2 = bind_params(t2, store, false);
  ForwardOptions opt2;
  opt2.with_loss = true;
  Rng pairing(1);
  opt2.pairing = &pairing;
  REQUIRE_THROWS_AS(model.forward(t2, store, b2, in2, opt2), ConfigError);
}
