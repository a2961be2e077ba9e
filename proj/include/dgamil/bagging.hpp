// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dgamil/tensor.hpp"
#include "dgamil/volume.hpp"

namespace dgamil {

// zscore standardizes every voxel; zscore_nz takes statistics over nonzero
// voxels and leaves exact zeros (background, future padding) untouched, the
// usual choice for masked volumes and the pipeline default.
enum class NormMode { None, ZScore, ZScoreNonzero, MinMax };

inline std::string to_string(NormMode m) {
  switch (m) {
    case NormMode::None: return "none";
    case NormMode::ZScore: return "zscore";
    case NormMode::ZScoreNonzero: return "zscore_nz";
    case NormMode::MinMax: return "minmax";
  }
  return "?";
}

inline NormMode norm_mode_from_string(const std::string& s) {
  if (s == "none") return NormMode::None;
  if (s == "zscore") return NormMode::ZScore;
  if (s == "zscore_nz") return NormMode::ZScoreNonzero;
  if (s == "minmax") return NormMode::MinMax;
  throw ConfigError("unknown normalization mode: " + s + " (expected none|zscore|zscore_nz|minmax)");
}

struct BagConfig {
  int m = 3;
  int k = 0;  // 0: fill the axis (axis_len / m)
  int axis = 1;
  NormMode norm = NormMode::ZScoreNonzero;
  int pad_multiple = 16;  // pad instance H/W up to a multiple; 0 disables
};

// K non-overlapping instances of m adjacent slices, plus everything needed
// to trace attention back to volume coordinates.
struct Bag {
  Tensor instances;  // [K, m, H, W]
  double age = 0.0;
  uint64_t subject_seed = 0;
  int axis = 1;
  int m = 3;
  int start_slice = 0;  // first slice covered by instance 0
  int src_h = 0, src_w = 0;  // pre-padding slice size
  int pad_top = 0, pad_left = 0;
  SignalSlab slab;

  int64_t k() const { return instances.dim(0); }
  int64_t h() const { return instances.dim(2); }
  int64_t w() const { return instances.dim(3); }

  std::vector<std::pair<int, int>> instance_axis_ranges() const {
    std::vector<std::pair<int, int>> r;
    for (int64_t j = 0; j < k(); ++j)
      r.emplace_back(start_slice + static_cast<int>(j) * m, start_slice + static_cast<int>(j + 1) * m);
    return r;
  }

  // Instances whose slice range intersects the signal slab: [ilo, ihi]
  // inclusive, or (-1, -1) when the slab is absent.
  std::pair<int, int> slab_instance_range() const {
    if (slab.lo < 0) return {-1, -1};
    int ilo = -1, ihi = -1;
    for (int64_t j = 0; j < k(); ++j) {
      const int s0 = start_slice + static_cast<int>(j) * m, s1 = s0 + m - 1;
      if (s1 >= slab.lo && s0 <= slab.hi) {
        if (ilo < 0) ilo = static_cast<int>(j);
        ihi = static_cast<int>(j);
      }
    }
    return {ilo, ihi};
  }
};

// Minimal axis-aligned bounding box of strictly positive voxels; metadata is
// preserved and slab indices shift with the crop.
inline Volume crop_to_mask(const Volume& v) {
  int64_t lo[3] = {v.dx, v.dy, v.dz}, hi[3] = {-1, -1, -1};
  for (int64_t x = 0; x < v.dx; ++x)
    for (int64_t y = 0; y < v.dy; ++y)
      for (int64_t z = 0; z < v.dz; ++z)
        if (v.at(x, y, z) > 0.0f) {
          const int64_t c[3] = {x, y, z};
          for (int d = 0; d < 3; ++d) {
            lo[d] = std::min(lo[d], c[d]);
            hi[d] = std::max(hi[d], c[d]);
          }
        }
  if (hi[0] < 0) throw DegenerateInputError("crop_to_mask: all-zero volume");
  Volume out;
  out.dx = hi[0] - lo[0] + 1;
  out.dy = hi[1] - lo[1] + 1;
  out.dz = hi[2] - lo[2] + 1;
  out.age = v.age;
  out.subject_seed = v.subject_seed;
  out.voxels.resize(static_cast<size_t>(out.numel()));
  for (int64_t x = 0; x < out.dx; ++x)
    for (int64_t y = 0; y < out.dy; ++y)
      for (int64_t z = 0; z < out.dz; ++z)
        out.at(x, y, z) = v.at(x + lo[0], y + lo[1], z + lo[2]);
  if (v.slab.lo >= 0) {
    const int64_t axis_lo = lo[1];  // slab indexes the bagging axis (y by convention)
    const int64_t axis_hi = hi[1];
    out.slab.lo = static_cast<int>(std::max<int64_t>(v.slab.lo - axis_lo, 0));
    out.slab.hi = static_cast<int>(std::min<int64_t>(v.slab.hi - axis_lo, axis_hi - axis_lo));
    if (out.slab.hi < out.slab.lo) out.slab = {-1, -1};
  }
  return out;
}

inline Volume normalize_volume(const Volume& v, NormMode mode) {
  if (!v.all_finite()) throw DegenerateInputError("normalize_volume: non-finite voxels");
  Volume out = v;
  if (mode == NormMode::None) return out;
  if (mode == NormMode::ZScore || mode == NormMode::ZScoreNonzero) {
    const bool masked = mode == NormMode::ZScoreNonzero;
    double sum = 0.0, sumsq = 0.0;
    int64_t n = 0;
    for (float f : v.voxels) {
      if (masked && f == 0.0f) continue;
      sum += f;
      sumsq += static_cast<double>(f) * f;
      ++n;
    }
    if (n == 0) throw DegenerateInputError("normalize_volume: all-zero volume under z-score");
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sumsq / static_cast<double>(n) - mean * mean);
    const double sd = std::sqrt(var);
    if (sd == 0.0) throw DegenerateInputError("normalize_volume: constant volume under z-score");
    for (auto& f : out.voxels) {
      if (masked && f == 0.0f) continue;
      f = static_cast<float>((f - mean) / sd);
    }
    return out;
  }
  // min-max
  double vmin = v.voxels[0], vmax = v.voxels[0];
  for (float f : v.voxels) {
    vmin = std::min<double>(vmin, f);
    vmax = std::max<double>(vmax, f);
  }
  if (vmax == vmin) throw DegenerateInputError("normalize_volume: constant volume under min-max");
  for (auto& f : out.voxels) f = static_cast<float>((f - vmin) / (vmax - vmin));
  return out;
}

// Slices the volume along cfg.axis into K instances of m adjacent slices.
// When K*m < axis length the centered K*m slices are used. Instance images
// are zero-padded symmetrically up to pad_multiple.
inline Bag make_bag(const Volume& v, const BagConfig& cfg) {
  if (cfg.m < 1) throw ConfigError("make_bag: m must be >= 1");
  if (cfg.axis < 0 || cfg.axis > 2) throw ConfigError("make_bag: axis must be 0, 1 or 2");
  const int64_t axis_len = v.axis_len(cfg.axis);
  const int64_t k = cfg.k > 0 ? cfg.k : axis_len / cfg.m;
  if (k < 1) throw ConfigError("make_bag: axis of length " + std::to_string(axis_len) +
                               " too short for m = " + std::to_string(cfg.m));
  if (k * cfg.m > axis_len)
    throw ConfigError("make_bag: K*m = " + std::to_string(k * cfg.m) + " exceeds axis length " +
                      std::to_string(axis_len));
  const int64_t start = (axis_len - k * cfg.m) / 2;

  int64_t src_h, src_w;
  switch (cfg.axis) {
    case 0: src_h = v.dy; src_w = v.dz; break;
    case 1: src_h = v.dx; src_w = v.dz; break;
    default: src_h = v.dx; src_w = v.dy; break;
  }
  auto pad_to = [&](int64_t s) {
    if (cfg.pad_multiple <= 1) return s;
    const int64_t q = cfg.pad_multiple;
    return (s + q - 1) / q * q;
  };
  const int64_t h = pad_to(src_h), w = pad_to(src_w);
  const int64_t pt = (h - src_h) / 2, pl = (w - src_w) / 2;

  Bag bag;
  bag.instances = Tensor::zeros({k, cfg.m, h, w});
  bag.age = v.age;
  bag.subject_seed = v.subject_seed;
  bag.axis = cfg.axis;
  bag.m = cfg.m;
  bag.start_slice = static_cast<int>(start);
  bag.src_h = static_cast<int>(src_h);
  bag.src_w = static_cast<int>(src_w);
  bag.pad_top = static_cast<int>(pt);
  bag.pad_left = static_cast<int>(pl);
  bag.slab = v.slab;

  for (int64_t j = 0; j < k; ++j)
    for (int64_t c = 0; c < cfg.m; ++c) {
      const int64_t slice = start + j * cfg.m + c;
      for (int64_t a = 0; a < src_h; ++a)
        for (int64_t b = 0; b < src_w; ++b) {
          float val;
          switch (cfg.axis) {
            case 0: val = v.at(slice, a, b); break;
            case 1: val = v.at(a, slice, b); break;
            default: val = v.at(a, b, slice); break;
          }
          bag.instances.at(j, c, a + pt, b + pl) = val;
        }
    }
  return bag;
}

inline void write_bag(const Bag& bag, const std::string& path) {
  auto os = open_out(path);
  std::string header = "DGABAG1 k=" + std::to_string(bag.k()) + " m=" + std::to_string(bag.m) +
                       " h=" + std::to_string(bag.h()) + " w=" + std::to_string(bag.w()) +
                       " axis=" + std::to_string(bag.axis) + " start=" + std::to_string(bag.start_slice) +
                       " srch=" + std::to_string(bag.src_h) + " srcw=" + std::to_string(bag.src_w) +
                       " padt=" + std::to_string(bag.pad_top) + " padl=" + std::to_string(bag.pad_left) +
                       " dtype=f32le age=" + f64_str(bag.age) + " seed=" + std::to_string(bag.subject_seed) +
                       " slab=" + std::to_string(bag.slab.lo) + ":" + std::to_string(bag.slab.hi);
  write_fixed_header(os, header);
  std::vector<float> payload(static_cast<size_t>(bag.instances.numel()));
  for (size_t i = 0; i < payload.size(); ++i)
    payload[i] = static_cast<float>(bag.instances.data[i]);
  write_f32_payload(os, payload);
  if (!os) throw std::runtime_error("write_bag: I/O failure on " + path);
}

inline Bag read_bag(const std::string& path) {
  auto is = open_in(path);
  const auto kv = parse_kv(read_fixed_header(is, "DGABAG1"));
  Bag bag;
  const int64_t k = kv_i64(kv, "k");
  bag.m = static_cast<int>(kv_i64(kv, "m"));
  const int64_t h = kv_i64(kv, "h"), w = kv_i64(kv, "w");
  bag.axis = static_cast<int>(kv_i64(kv, "axis"));
  bag.start_slice = static_cast<int>(kv_i64(kv, "start"));
  bag.src_h = static_cast<int>(kv_i64(kv, "srch"));
  bag.src_w = static_cast<int>(kv_i64(kv, "srcw"));
  bag.pad_top = static_cast<int>(kv_i64(kv, "padt"));
  bag.pad_left = static_cast<int>(kv_i64(kv, "padl"));
  if (kv_get(kv, "dtype") != "f32le") throw FormatError("header: unsupported dtype");
  bag.age = kv_f64(kv, "age");
  bag.subject_seed = kv_u64(kv, "seed");
  const std::string& slab = kv_get(kv, "slab");
  bag.slab.lo = std::stoi(slab.substr(0, slab.find(':')));
  bag.slab.hi = std::stoi(slab.substr(slab.find(':') + 1));
  const size_t count = static_cast<size_t>(k * bag.m * h * w);
  const std::vector<float> payload = read_f32_payload(is, count, "bag");
  bag.instances = Tensor::zeros({k, bag.m, h, w});
  for (size_t i = 0; i < count; ++i) bag.instances.data[i] = payload[i];
  return bag;
}

}  // namespace dgamil
