// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dgamil/nn_ops.hpp"
#include "dgamil/param_store.hpp"
#include "dgamil/rng.hpp"

namespace dgamil {

// Decoupling unit: 1x1 conv -> ReLU -> 1x1 conv -> per-position linear map
// over channels (realized as a biased 1x1 conv, which is the same map).
// Produces the structural features; age features are the residual e - stru.
struct DecouplerParams {
  int c1_w = -1, c1_b = -1;
  int c2_w = -1, c2_b = -1;
  int lin_w = -1, lin_b = -1;
};

inline DecouplerParams build_decoupler(ParamStore& store, const std::string& prefix, int channels,
                                       Rng& rng) {
  DecouplerParams p;
  p.c1_w = store.add(prefix + ".conv1.weight", kaiming_normal({channels, channels, 1, 1}, channels, rng));
  p.c1_b = store.add(prefix + ".conv1.bias", Tensor::zeros({channels}));
  p.c2_w = store.add(prefix + ".conv2.weight", kaiming_normal({channels, channels, 1, 1}, channels, rng));
  p.c2_b = store.add(prefix + ".conv2.bias", Tensor::zeros({channels}));
  p.lin_w = store.add(prefix + ".linear.weight", normal_init({channels, channels, 1, 1}, channels, rng));
  p.lin_b = store.add(prefix + ".linear.bias", Tensor::zeros({channels}));
  return p;
}

struct Decoupled {
  Var age = nullptr;   // e - stru
  Var stru = nullptr;  // Psi(e)
};

inline Decoupled decouple(Tape& t, const BoundParams& b, const DecouplerParams& p, Var e) {
  Var h = relu(t, conv2d(t, e, b[p.c1_w], b[p.c1_b], 0));
  h = conv2d(t, h, b[p.c2_w], b[p.c2_b], 0);
  Var stru = conv2d(t, h, b[p.lin_w], b[p.lin_b], 0);
  return {sub(t, e, stru), stru};
}

// Preliminary age head phi: GAP over space, mean over instances, small MLP.
struct PrelimHeadParams {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

inline PrelimHeadParams build_prelim_head(ParamStore& store, const std::string& prefix,
                                          int channels, int hidden, Rng& rng) {
  PrelimHeadParams p;
  p.w1 = store.add(prefix + ".w1", normal_init({channels, hidden}, channels, rng));
  p.b1 = store.add(prefix + ".b1", Tensor::zeros({hidden}));
  // final layer zeroed; its bias is set to the train-mean age before step 0
  p.w2 = store.add(prefix + ".w2", Tensor::zeros({hidden, 1}));
  p.b2 = store.add(prefix + ".b2", Tensor::zeros({1}));
  return p;
}

// gapped: [K, C] spatially pooled age features of one bag -> scalar years.
inline Var preliminary_age(Tape& t, const BoundParams& b, const PrelimHeadParams& p, Var gapped) {
  Var pooled = reshape(t, gap_rows(t, gapped), {1, gapped->value.dim(1)});
  Var h = relu(t, linear(t, pooled, b[p.w1], b[p.b1]));
  return reshape(t, linear(t, h, b[p.w2], b[p.b2]), {1});
}

// L_MSE0 over a batch of preliminary predictions.
inline Var loss_mse0(Tape& t, Var y0, Tensor targets) { return mse_to_const(t, y0, std::move(targets)); }

// L_decp1: for each bag i and its random partner k_i, the mean per-instance
// cosine of structural maps, negated and averaged. Terms with k_i == i
// vanish through the indicator. per_bag[i] is [K, C*H*W].
inline Var loss_decp1(Tape& t, const std::vector<Var>& per_bag, const std::vector<int>& partner) {
  const size_t n = per_bag.size();
  if (n < 2) {
    warn("decp1: batch of size " + std::to_string(n) + " has no partner pairs; loss is 0");
    return t.leaf(Tensor::scalar(0.0));
  }
  Var acc = nullptr;
  for (size_t i = 0; i < n; ++i) {
    const int k = partner[i];
    if (k == static_cast<int>(i)) continue;
    Var cos = cosine_rows(t, per_bag[i], per_bag[static_cast<size_t>(k)]);
    Var li = mean_all(t, cos);
    acc = acc ? add(t, acc, li) : li;
  }
  if (!acc) return t.leaf(Tensor::scalar(0.0));
  return scale(t, acc, -1.0 / static_cast<double>(n));
}

inline std::vector<int> draw_partners(size_t n, Rng& rng) {
  std::vector<int> partner(n);
  for (size_t i = 0; i < n; ++i)
    partner[i] = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(n) - 1));
  return partner;
}

// L_decp2: mean cosine between the bag-level structural and age embeddings,
// same-index pairing.
inline Var loss_decp2(Tape& t, Var z_stru, Var z_age) {
  return mean_all(t, cosine_rows(t, z_stru, z_age));
}

}  // namespace dgamil
