// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "dgamil/tensor.hpp"

namespace dgamil::testing {

// Literal dense reference of the attention equations: projections v = h W,
// pairwise scores LeakyReLU(a . [v_i || v_j]) over explicit neighbor sets,
// masked softmax per node, head-wise weighted sums concatenated. Written with
// plain loops, independent of the tape implementation.
struct DenseGatResult {
  std::vector<Tensor> alpha;  // per head: [n, n], zero where no edge
  Tensor aggregated;          // [n, heads * d_k]
};

inline DenseGatResult dense_gat_reference(const Tensor& h, const std::vector<Tensor>& W,
                                          const std::vector<Tensor>& a, double slope,
                                          const std::vector<std::vector<int>>& neighbors) {
  const int n = static_cast<int>(h.dim(0));
  const int d = static_cast<int>(h.dim(1));
  const int heads = static_cast<int>(W.size());
  const int dk = static_cast<int>(W[0].dim(1));
  DenseGatResult out;
  out.aggregated = Tensor::zeros({n, static_cast<int64_t>(heads) * dk});
  for (int k = 0; k < heads; ++k) {
    Tensor v({n, dk});
    for (int i = 0; i < n; ++i)
      for (int q = 0; q < dk; ++q) {
        double acc = 0.0;
        for (int m = 0; m < d; ++m) acc += h.at(i, m) * W[static_cast<size_t>(k)].at(m, q);
        v.at(i, q) = acc;
      }
    Tensor alpha = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i) {
      const auto& nbrs = neighbors[static_cast<size_t>(i)];
      std::vector<double> scores;
      for (int j : nbrs) {
        double s = 0.0;
        for (int q = 0; q < dk; ++q) s += a[static_cast<size_t>(k)][q] * v.at(i, q);
        for (int q = 0; q < dk; ++q) s += a[static_cast<size_t>(k)][dk + q] * v.at(j, q);
        scores.push_back(s > 0.0 ? s : slope * s);
      }
      double mx = scores[0];
      for (double s : scores) mx = std::max(mx, s);
      double z = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (size_t e = 0; e < nbrs.size(); ++e) alpha.at(i, nbrs[e]) = scores[e] / z;
    }
    for (int i = 0; i < n; ++i)
      for (int j : neighbors[static_cast<size_t>(i)])
        for (int q = 0; q < dk; ++q)
          out.aggregated.at(i, static_cast<int64_t>(k) * dk + q) += alpha.at(i, j) * v.at(j, q);
    out.alpha.push_back(std::move(alpha));
  }
  return out;
}

// Enumerates all labeled connected undirected graphs on n nodes as neighbor
// lists (no self-loops; callers add them if the construction requires).
inline std::vector<std::vector<std::vector<int>>> all_connected_graphs(int n) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  std::vector<std::vector<std::vector<int>>> out;
  const int masks = 1 << pairs.size();
  for (int mask = 0; mask < masks; ++mask) {
    std::vector<std::vector<int>> adj(static_cast<size_t>(n));
    for (size_t p = 0; p < pairs.size(); ++p)
      if (mask & (1 << p)) {
        adj[static_cast<size_t>(pairs[p].first)].push_back(pairs[p].second);
        adj[static_cast<size_t>(pairs[p].second)].push_back(pairs[p].first);
      }
    // connectivity check
    std::vector<int> seen(static_cast<size_t>(n), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int w : adj[static_cast<size_t>(u)])
        if (!seen[static_cast<size_t>(w)]) {
          seen[static_cast<size_t>(w)] = 1;
          ++count;
          stack.push_back(w);
        }
    }
    if (count == n) out.push_back(std::move(adj));
  }
  return out;
}

}  // namespace dgamil::testing
