// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dgamil/io_util.hpp"

namespace dgamil {

// Inclusive slice range along the bagging axis where the age signal lives.
struct SignalSlab {
  int lo = -1;
  int hi = -1;
};

// A 3D scalar field with its age label and planted-signal metadata. Voxels
// are stored as f32 (the on-disk dtype); all statistics run in double.
struct Volume {
  int64_t dx = 0, dy = 0, dz = 0;
  std::vector<float> voxels;  // row-major (x, y, z)
  double age = 0.0;
  uint64_t subject_seed = 0;
  SignalSlab slab;

  int64_t numel() const { return dx * dy * dz; }

  float& at(int64_t x, int64_t y, int64_t z) {
    return voxels[static_cast<size_t>((x * dy + y) * dz + z)];
  }
  float at(int64_t x, int64_t y, int64_t z) const {
    return voxels[static_cast<size_t>((x * dy + y) * dz + z)];
  }

  int64_t axis_len(int axis) const { return axis == 0 ? dx : axis == 1 ? dy : dz; }

  bool all_finite() const {
    for (float v : voxels)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void write_volume(const Volume& v, const std::string& path) {
  if (static_cast<int64_t>(v.voxels.size()) != v.numel())
    throw ShapeError("write_volume: voxel count does not match shape");
  if (!v.all_finite()) throw DegenerateInputError("write_volume: non-finite voxels");
  auto os = open_out(path);
  std::string header = "DGAVOL1 dx=" + std::to_string(v.dx) + " dy=" + std::to_string(v.dy) +
                       " dz=" + std::to_string(v.dz) + " dtype=f32le age=" + f64_str(v.age) +
                       " seed=" + std::to_string(v.subject_seed) +
                       " slab=" + std::to_string(v.slab.lo) + ":" + std::to_string(v.slab.hi);
  write_fixed_header(os, header);
  write_f32_payload(os, v.voxels);
  if (!os) throw std::runtime_error("write_volume: I/O failure on " + path);
}

inline Volume read_volume(const std::string& path) {
  auto is = open_in(path);
  const std::string header = read_fixed_header(is, "DGAVOL1");
  const auto kv = parse_kv(header);
  Volume v;
  v.dx = kv_i64(kv, "dx");
  v.dy = kv_i64(kv, "dy");
  v.dz = kv_i64(kv, "dz");
  if (v.dx <= 0 || v.dy <= 0 || v.dz <= 0) throw FormatError("header: non-positive shape field");
  if (kv_get(kv, "dtype") != "f32le")
    throw FormatError("header: unsupported dtype '" + kv_get(kv, "dtype") + "'");
  v.age = kv_f64(kv, "age");
  v.subject_seed = kv_u64(kv, "seed");
  const std::string& slab = kv_get(kv, "slab");
  const size_t colon = slab.find(':');
  if (colon == std::string::npos) throw FormatError("header: field 'slab' must be lo:hi");
  try {
    v.slab.lo = std::stoi(slab.substr(0, colon));
    v.slab.hi = std::stoi(slab.substr(colon + 1));
  } catch (...) {
    throw FormatError("header: field 'slab' must be lo:hi integers");
  }
  v.voxels = read_f32_payload(is, static_cast<size_t>(v.numel()), "volume");
  return v;
}

}  // namespace dgamil
