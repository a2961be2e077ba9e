// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dgamil/graph.hpp"
#include "dgamil/nn_ops.hpp"
#include "dgamil/param_store.hpp"

namespace dgamil {

struct GatConfig {
  int heads = 8;
  int d_k = 0;             // 0: derive as width / heads
  double leaky_slope = 0.2;
  int n_edges = 8;
  EdgeMode edge_mode = EdgeMode::LowestSimilarity;
  int ffn_hidden = 0;      // 0: same as block width
};

// Per-head projection W^k [d_in, d_k] and attention vector a^k [2*d_k, 1].
struct GatAttentionParams {
  std::vector<int> proj;
  std::vector<int> attn_vec;
  int heads = 0;
  int d_in = 0;
  int d_k = 0;
  double slope = 0.2;

  int width() const { return heads * d_k; }
};

inline GatAttentionParams build_gat_attention(ParamStore& store, const std::string& prefix,
                                              int d_in, int heads, int d_k, double slope,
                                              Rng& rng) {
  if (heads < 1) throw ConfigError("gat: heads must be >= 1");
  if (d_k < 1) throw ConfigError("gat: d_k must be >= 1");
  GatAttentionParams p;
  p.heads = heads;
  p.d_in = d_in;
  p.d_k = d_k;
  p.slope = slope;
  for (int k = 0; k < heads; ++k) {
    p.proj.push_back(store.add(prefix + ".head" + std::to_string(k) + ".proj",
                               normal_init({d_in, d_k}, d_in, rng)));
    p.attn_vec.push_back(store.add(prefix + ".head" + std::to_string(k) + ".attn",
                                   normal_init({2 * d_k, 1}, 2 * d_k, rng)));
  }
  return p;
}

namespace detail {

struct GatHeads {
  std::vector<Var> v;      // per head [n, d_k]
  std::vector<Var> alpha;  // per head [E]
};

inline GatHeads gat_heads(Tape& t, const BoundParams& b, const GatAttentionParams& p, Var h,
                          const AttentionGraph& g) {
  g.validate();
  if (h->value.dim(0) != g.node_count)
    throw ShapeError("gat: " + std::to_string(g.node_count) + " graph nodes vs features " +
                     h->value.shape_str());
  if (h->value.dim(1) != p.d_in)
    throw ShapeError("gat: feature width " + std::to_string(h->value.dim(1)) +
                     " vs configured d = " + std::to_string(p.d_in));
  GatHeads out;
  for (int k = 0; k < p.heads; ++k) {
    Var v = linear(t, h, b[p.proj[static_cast<size_t>(k)]]);
    Var vi = gather_rows(t, v, g.tgt);
    Var vj = gather_rows(t, v, g.src);
    Var cat = concat_cols(t, {vi, vj});
    Var logits = reshape(t, linear(t, cat, b[p.attn_vec[static_cast<size_t>(k)]]),
                         {static_cast<int64_t>(g.edge_count())});
    Var act = leaky_relu(t, logits, p.slope);
    out.v.push_back(v);
    out.alpha.push_back(segment_softmax(t, act, g.row_ptr));
  }
  return out;
}

}  // namespace detail

// Per-head attention coefficients alpha^k over the edges of g; each target
// node's incoming coefficients sum to 1.
inline std::vector<Var> gat_scores(Tape& t, const BoundParams& b, const GatAttentionParams& p,
                                   Var h, const AttentionGraph& g) {
  return detail::gat_heads(t, b, p, h, g).alpha;
}

// h~_i = ||_k sum_{j in N_i} alpha^k_{ij} v^k_j, given externally supplied
// coefficients (recomputes the projections from h).
inline Var gat_aggregate(Tape& t, const BoundParams& b, const GatAttentionParams& p, Var h,
                         const std::vector<Var>& alphas, const AttentionGraph& g) {
  if (static_cast<int>(alphas.size()) != p.heads)
    throw ShapeError("gat_aggregate: expected " + std::to_string(p.heads) + " heads");
  std::vector<Var> head_out;
  for (int k = 0; k < p.heads; ++k) {
    Var v = linear(t, h, b[p.proj[static_cast<size_t>(k)]]);
    Var vj = gather_rows(t, v, g.src);
    Var weighted = scale_rows(t, vj, alphas[static_cast<size_t>(k)]);
    head_out.push_back(segment_sum_rows(t, weighted, g.row_ptr));
  }
  return concat_cols(t, head_out);
}

// Fused scores + aggregation (single projection pass).
inline Var gat_attention(Tape& t, const BoundParams& b, const GatAttentionParams& p, Var h,
                         const AttentionGraph& g) {
  detail::GatHeads heads = detail::gat_heads(t, b, p, h, g);
  std::vector<Var> head_out;
  for (int k = 0; k < p.heads; ++k) {
    Var vj = gather_rows(t, heads.v[static_cast<size_t>(k)], g.src);
    Var weighted = scale_rows(t, vj, heads.alpha[static_cast<size_t>(k)]);
    head_out.push_back(segment_sum_rows(t, weighted, g.row_ptr));
  }
  return concat_cols(t, head_out);
}

// Full block: out = LN(skip(x) + attention(x)); out = LN(out + FFN(out)).
// The skip path gains a learned projection when the attention width differs
// from the input width.
struct GatBlockParams {
  GatAttentionParams attn;
  int skip_proj = -1;
  int ln1_gamma = -1, ln1_beta = -1;
  int ffn_w1 = -1, ffn_b1 = -1, ffn_w2 = -1, ffn_b2 = -1;
  int ln2_gamma = -1, ln2_beta = -1;
  int width = 0;
};

inline GatBlockParams build_gat_block(ParamStore& store, const std::string& prefix, int d_in,
                                      const GatConfig& cfg, Rng& rng) {
  GatBlockParams p;
  int d_k = cfg.d_k;
  if (d_k == 0) {
    if (d_in % cfg.heads != 0)
      throw ConfigError("gat block " + prefix + ": width " + std::to_string(d_in) +
                        " not divisible by " + std::to_string(cfg.heads) + " heads");
    d_k = d_in / cfg.heads;
  }
  p.attn = build_gat_attention(store, prefix + ".attn", d_in, cfg.heads, d_k, cfg.leaky_slope, rng);
  p.width = p.attn.width();
  if (p.width != d_in)
    p.skip_proj = store.add(prefix + ".skip_proj", normal_init({d_in, p.width}, d_in, rng));
  const int hidden = cfg.ffn_hidden > 0 ? cfg.ffn_hidden : p.width;
  p.ln1_gamma = store.add(prefix + ".ln1.gamma", Tensor::full({p.width}, 1.0));
  p.ln1_beta = store.add(prefix + ".ln1.beta", Tensor::zeros({p.width}));
  p.ffn_w1 = store.add(prefix + ".ffn.w1", normal_init({p.width, hidden}, p.width, rng));
  p.ffn_b1 = store.add(prefix + ".ffn.b1", Tensor::zeros({hidden}));
  p.ffn_w2 = store.add(prefix + ".ffn.w2", normal_init({hidden, p.width}, hidden, rng));
  p.ffn_b2 = store.add(prefix + ".ffn.b2", Tensor::zeros({p.width}));
  p.ln2_gamma = store.add(prefix + ".ln2.gamma", Tensor::full({p.width}, 1.0));
  p.ln2_beta = store.add(prefix + ".ln2.beta", Tensor::zeros({p.width}));
  return p;
}

inline Var gat_block_forward(Tape& t, const BoundParams& b, const GatBlockParams& p, Var h,
                             const AttentionGraph& g) {
  Var att = gat_attention(t, b, p.attn, h, g);
  Var skip = p.skip_proj >= 0 ? linear(t, h, b[p.skip_proj]) : h;
  Var u = layer_norm(t, add(t, skip, att), b[p.ln1_gamma], b[p.ln1_beta]);
  Var f = linear(t, relu(t, linear(t, u, b[p.ffn_w1], b[p.ffn_b1])), b[p.ffn_w2], b[p.ffn_b2]);
  return layer_norm(t, add(t, u, f), b[p.ln2_gamma], b[p.ln2_beta]);
}

}  // namespace dgamil
