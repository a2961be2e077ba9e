// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch.hpp>

#include <cmath>

#include "dgamil/disentangle.hpp"
#include "testers.hpp"

using namespace dgamil;
using dgamil::testing::fd_max_rel_err;
using dgamil::testing::random_tensor;

TEST_CASE("zeroed final layer makes the structural branch vanish", "[disentangle]") {
  ParamStore store;
  Rng rng(1);
  DecouplerParams p = build_decoupler(store, "dec", 3, rng);
  store.at(p.lin_w).value = Tensor::zeros({3, 3, 1, 1});
  store.at(p.lin_b).value = Tensor::zeros({3});
  Tensor e = random_tensor({2, 3, 2, 2}, rng);
  Tape t;
  BoundParams b = bind_params(t, store, false);
  Decoupled d = decouple(t, b, p, t.leaf(e));
  for (int64_t i = 0; i < e.numel(); ++i) {
    REQUIRE(d.stru->value[i] == 0.0);
    REQUIRE(d.age->value[i] == e[i]);
  }
}

TEST_CASE("decomposition is the defining subtraction, exact to construction", "[disentangle]") {
  ParamStore store;
  Rng rng(3);
  DecouplerParams p = build_decoupler(store, "dec", 4, rng);
  Tensor e = random_tensor({3, 4, 2, 2}, rng);
  Tape t;
  BoundParams b = bind_params(t, store, false);
  Decoupled d = decouple(t, b, p, t.leaf(e));
  for (int64_t i = 0; i < e.numel(); ++i) {
    // the defining identity holds bitwise
    REQUIRE(d.age->value[i] == e[i] - d.stru->value[i]);
    // re-adding the halves reconstructs e at the precision of the larger
    // operand (one rounding each for the subtraction and the re-addition)
    const double sum = d.age->value[i] + d.stru->value[i];
    const double mag =
        std::max({std::abs(d.age->value[i]), std::abs(d.stru->value[i]), std::abs(e[i]), 1e-300});
    REQUIRE(std::abs(sum - e[i]) <= std::ldexp(mag, -51));
  }
}

TEST_CASE("decoupler gradients pass finite differences", "[disentangle]") {
  ParamStore store;
  Rng rng(5);
  DecouplerParams p = build_decoupler(store, "dec", 3, rng);
  Tensor e = random_tensor({2, 3, 2, 2}, rng);
  Tensor proj_a = random_tensor({2, 3, 2, 2}, rng), proj_s = random_tensor({2, 3, 2, 2}, rng);

  std::vector<Tensor*> inputs{&e};
  for (auto& par : store.all()) inputs.push_back(&par.value);
  std::vector<Tensor> analytic;
  auto run = [&](bool grads, std::vector<Tensor>* out_g) {
    Tape t;
    BoundParams b = bind_params(t, store, grads);
    Var ve = t.leaf(e, grads);
    Decoupled d = decouple(t, b, p, ve);
    Var loss = add(t, sum_all(t, mul(t, d.age, t.leaf(proj_a))),
                   sum_all(t, mul(t, d.stru, t.leaf(proj_s))));
    if (grads) {
      t.backward(loss);
      out_g->push_back(ve->grad);
      for (size_t i = 0; i < store.size(); ++i) {
        Var v = b.vars[i];
        out_g->push_back(v && v->grad.numel() ? v->grad
                                              : Tensor::zeros(store.at(static_cast<int>(i)).value.shape));
      }
    }
    return loss->value[0];
  };
  run(true, &analytic);
  REQUIRE(fd_max_rel_err(inputs, [&] { return run(false, nullptr); }, analytic) < 1e-4);
}

TEST_CASE("preliminary head: GAP of constant maps and zeroed MLP", "[disentangle]") {
  ParamStore store;
  Rng rng(7);
  PrelimHeadParams p = build_prelim_head(store, "phi", 3, 4, rng);
  store.at(p.b2).value[0] = 57.5;

  // constant per-channel maps -> GAP is that constant per channel
  Tensor gapped({4, 3});
  for (int j = 0; j < 4; ++j)
    for (int c = 0; c < 3; ++c) gapped.at(j, c) = 1.5 * c;
  Tape t;
  BoundParams b = bind_params(t, store, false);
  Var y0 = preliminary_age(t, b, p, t.leaf(gapped));
  // zero final weights -> bias exactly
  REQUIRE(y0->value[0] == 57.5);

  // hand-set one-layer dot product: make hidden layer identity-ish
  ParamStore store2;
  Rng rng2(8);
  PrelimHeadParams p2 = build_prelim_head(store2, "phi", 2, 2, rng2);
  store2.at(p2.w1).value = Tensor({2, 2}, {1, 0, 0, 1});
  store2.at(p2.b1).value = Tensor({2}, {0, 0});
  store2.at(p2.w2).value = Tensor({2, 1}, {0.5, -2.0});
  store2.at(p2.b2).value = Tensor({1}, {3.0});
  Tensor g2({1, 2}, {4.0, 1.0});  // single instance, GAP = itself
  Tape t2;
  BoundParams b2 = bind_params(t2, store2, false);
  Var y = preliminary_age(t2, b2, p2, t2.leaf(g2));
  REQUIRE(y->value[0] == Approx(0.5 * 4.0 - 2.0 * 1.0 + 3.0).margin(1e-12));
}

TEST_CASE("loss_decp1 hits its closed-form values", "[disentangle]") {
  // identical nonzero structural maps, partner always != self -> exactly -1
  Tensor flat({2, 6});
  for (int j = 0; j < 2; ++j)
    for (int q = 0; q < 6; ++q) flat.at(j, q) = 0.3 * q + 1.0;
  Tape t;
  Var b0 = t.leaf(flat), b1 = t.leaf(flat), b2 = t.leaf(flat);
  Var loss = loss_decp1(t, {b0, b1, b2}, {1, 2, 0});
  REQUIRE(loss->value[0] == Approx(-1.0).epsilon(1e-12));

  // orthogonal structural maps -> 0
  Tensor fa({1, 2}, {1, 0}), fb({1, 2}, {0, 1});
  Tape t2;
  Var loss2 = loss_decp1(t2, {t2.leaf(fa), t2.leaf(fb)}, {1, 0});
  REQUIRE(loss2->value[0] == Approx(0.0).margin(1e-12));

  // i == k terms vanish through the indicator; literal Eq transcription
  Rng rng(11);
  Tensor x0 = random_tensor({3, 4}, rng), x1 = random_tensor({3, 4}, rng),
         x2 = random_tensor({3, 4}, rng);
  const std::vector<int> partner{1, 1, 2};  // bags 1 and 2 pair with themselves
  Tape t3;
  Var loss3 = loss_decp1(t3, {t3.leaf(x0), t3.leaf(x1), t3.leaf(x2)}, partner);
  auto cosv = [](const Tensor& a, const Tensor& b, int row) {
    double dot = 0, na = 0, nb = 0;
    for (int q = 0; q < 4; ++q) {
      dot += a.at(row, q) * b.at(row, q);
      na += a.at(row, q) * a.at(row, q);
      nb += b.at(row, q) * b.at(row, q);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double expect = 0.0;
  for (int j = 0; j < 3; ++j) expect += cosv(x0, x1, j) / 3.0;  // only i=0 contributes
  expect = -expect / 3.0;
  REQUIRE(loss3->value[0] == Approx(expect).margin(1e-12));

  // batch of one: warning and zero loss
  int warnings = 0;
  auto old = warn_handler();
  warn_handler() = [&](const std::string&) { ++warnings; };
  Tape t4;
  Var loss4 = loss_decp1(t4, {t4.leaf(x0)}, {0});
  warn_handler() = old;
  REQUIRE(warnings == 1);
  REQUIRE(loss4->value[0] == 0.0);
}

TEST_CASE("loss_decp2 closed-form values and bounds", "[disentangle]") {
  Tensor za({2, 2}, {1, 0, 0, 2});
  Tensor zs_orth({2, 2}, {0, 1, -3, 0});
  Tensor zs_same = za;
  Tensor zs_anti({2, 2}, {-1, 0, 0, -2});
  Tape t;
  REQUIRE(loss_decp2(t, t.leaf(zs_orth), t.leaf(za))->value[0] == Approx(0.0).margin(1e-12));
  REQUIRE(loss_decp2(t, t.leaf(zs_same), t.leaf(za))->value[0] == Approx(1.0).epsilon(1e-12));
  REQUIRE(loss_decp2(t, t.leaf(zs_anti), t.leaf(za))->value[0] == Approx(-1.0).epsilon(1e-12));

  Rng rng(13);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor a = random_tensor({4, 5}, rng), b = random_tensor({4, 5}, rng);
    Tape tt;
    const double v = loss_decp2(tt, tt.leaf(a), tt.leaf(b))->value[0];
    REQUIRE(v >= -1.0 - 1e-12);
    REQUIRE(v <= 1.0 + 1e-12);
  }
}

TEST_CASE("decoupling losses pass finite differences", "[disentangle]") {
  Rng rng(17);
  Tensor x0 = random_tensor({3, 4}, rng), x1 = random_tensor({3, 4}, rng);
  Tensor za = random_tensor({2, 5}, rng), zs = random_tensor({2, 5}, rng);
  Tensor g0, g1, gza, gzs;
  auto run = [&](bool grads) {
    Tape t;
    Var v0 = t.leaf(x0, grads), v1 = t.leaf(x1, grads);
    Var va = t.leaf(za, grads), vs = t.leaf(zs, grads);
    Var l = add(t, loss_decp1(t, {v0, v1}, {1, 0}), loss_decp2(t, vs, va));
    if (grads) {
      t.backward(l);
      g0 = v0->grad;
      g1 = v1->grad;
      gza = va->grad;
      gzs = vs->grad;
    }
    return l->value[0];
  };
  run(true);
  REQUIRE(fd_max_rel_err({&x0, &x1, &za, &zs}, [&] { return run(false); }, {g0, g1, gza, gzs}) <
          1e-4);
}

TEST_CASE("decp1 bounds hold for random batches", "[disentangle]") {
  Rng rng(19);
  for (int rep = 0; rep < 30; ++rep) {
    Tape t;
    std::vector<Var> bags;
    for (int i = 0; i < 4; ++i) bags.push_back(t.leaf(random_tensor({3, 6}, rng)));
    Rng prng(rep);
    Var l = loss_decp1(t, bags, draw_partners(4, prng));
    REQUIRE(l->value[0] >= -1.0 - 1e-12);
    REQUIRE(l->value[0] <= 1.0 + 1e-12);
  }
}
