// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dgamil/common.hpp"
#include "dgamil/tensor.hpp"

namespace dgamil {

enum class EdgeMode { LowestSimilarity, HighestSimilarity, Grid4 };

inline std::string to_string(EdgeMode m) {
  switch (m) {
    case EdgeMode::LowestSimilarity: return "lowest";
    case EdgeMode::HighestSimilarity: return "highest";
    case EdgeMode::Grid4: return "grid4";
  }
  return "?";
}

inline EdgeMode edge_mode_from_string(const std::string& s) {
  if (s == "lowest") return EdgeMode::LowestSimilarity;
  if (s == "highest") return EdgeMode::HighestSimilarity;
  if (s == "grid4") return EdgeMode::Grid4;
  throw ConfigError("unknown edge mode: " + s + " (expected lowest|highest|grid4)");
}

// Directed edge list grouped by target node. Edge e carries information from
// src[e] into tgt[e]; the edges of target i occupy [row_ptr[i], row_ptr[i+1]).
// Every node has a self-loop, so no neighborhood is ever empty.
struct AttentionGraph {
  int node_count = 0;
  std::vector<int> src;
  std::vector<int> tgt;
  std::vector<int> row_ptr;

  int edge_count() const { return static_cast<int>(src.size()); }

  const std::vector<int>& targets_row_ptr() const { return row_ptr; }

  void validate() const {
    if (node_count <= 0) throw ConfigError("graph: empty node set");
    if (static_cast<int>(row_ptr.size()) != node_count + 1)
      throw ConfigError("graph: bad row_ptr");
    for (int i = 0; i < node_count; ++i)
      if (row_ptr[i] >= row_ptr[i + 1])
        throw ConfigError("graph: node " + std::to_string(i) + " has no incoming edge");
  }
};

namespace detail {

inline AttentionGraph assemble(int n, const std::vector<std::vector<int>>& sources_per_target) {
  AttentionGraph g;
  g.node_count = n;
  g.row_ptr.assign(static_cast<size_t>(n) + 1, 0);
  for (int i = 0; i < n; ++i) {
    std::vector<int> srcs = sources_per_target[static_cast<size_t>(i)];
    std::sort(srcs.begin(), srcs.end());
    srcs.erase(std::unique(srcs.begin(), srcs.end()), srcs.end());
    for (int j : srcs) {
      g.tgt.push_back(i);
      g.src.push_back(j);
    }
    g.row_ptr[static_cast<size_t>(i) + 1] = static_cast<int>(g.src.size());
  }
  return g;
}

}  // namespace detail

// Builds the instance/spatial graph from pairwise cosine similarity: each
// node i receives edges from the n_edges nodes with the most extreme
// similarity to it (lowest by default, per config), ties broken by ascending
// node index. A self-loop is always added and n_edges is clamped to
// node_count - 1. Zero vectors compare as similarity 0 to everything.
inline AttentionGraph build_graph_cosine(const Tensor& feats, int n_edges, EdgeMode mode) {
  if (feats.rank() != 2) throw ShapeError("build_graph_cosine: expected [n, d] features");
  const int n = static_cast<int>(feats.dim(0));
  const int64_t d = feats.dim(1);
  if (n < 1) throw ConfigError("build_graph_cosine: no nodes");
  if (mode == EdgeMode::Grid4)
    throw ConfigError("build_graph_cosine: grid4 mode requires build_graph_grid4");
  std::vector<std::vector<int>> per_target(static_cast<size_t>(n));
  if (n == 1) {
    warn("graph over a single node: self-loop only");
    per_target[0] = {0};
    return detail::assemble(1, per_target);
  }

  std::vector<double> norms(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += feats.at(i, j) * feats.at(i, j);
    norms[static_cast<size_t>(i)] = std::sqrt(s);
  }
  const int take = std::min(n_edges, n - 1);
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double sim = 0.0;
      if (norms[static_cast<size_t>(i)] != 0.0 && norms[static_cast<size_t>(j)] != 0.0) {
        double dot = 0.0;
        for (int64_t k = 0; k < d; ++k) dot += feats.at(i, k) * feats.at(j, k);
        sim = dot / (norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)]);
      }
      cand.emplace_back(sim, j);
    }
    if (mode == EdgeMode::LowestSimilarity)
      std::sort(cand.begin(), cand.end());
    else
      std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
    auto& srcs = per_target[static_cast<size_t>(i)];
    srcs.push_back(i);  // self-loop
    for (int k = 0; k < take; ++k) srcs.push_back(cand[static_cast<size_t>(k)].second);
  }
  return detail::assemble(n, per_target);
}

// 4-neighborhood over an h x w grid of spatial positions (row-major node
// ids), plus self-loops. The alternative spatial-edge scheme.
inline AttentionGraph build_graph_grid4(int h, int w) {
  if (h < 1 || w < 1) throw ConfigError("build_graph_grid4: empty grid");
  const int n = h * w;
  std::vector<std::vector<int>> per_target(static_cast<size_t>(n));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int i = r * w + c;
      auto& srcs = per_target[static_cast<size_t>(i)];
      srcs.push_back(i);
      if (r > 0) srcs.push_back(i - w);
      if (r + 1 < h) srcs.push_back(i + w);
      if (c > 0) srcs.push_back(i - 1);
      if (c + 1 < w) srcs.push_back(i + 1);
    }
  if (n == 1) warn("graph over a single node: self-loop only");
  return detail::assemble(n, per_target);
}

}  // namespace dgamil
