// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "dgamil/rng.hpp"
#include "dgamil/volume.hpp"

namespace dgamil {

// Synthetic aging-phantom generator. Each volume is
//   smooth base template (two 3D Gaussians: head + cortex band)
// + per-subject smooth perturbation       (seeded, age-independent):
//   low-frequency cosine modes plus a few random ellipsoidal artifact blobs
// + planted age signal: an ellipsoidal darkening confined to the signal
//   slab along the bagging axis, whose radius grows affinely with age
// + white Gaussian noise                  (seeded, age-independent).
// Every term is a pure function of (subject_seed, age, config). The artifact
// blobs give the bag genuinely uninformative instances: they mimic the age
// region's appearance but sit at random positions with random sign, so only
// the slab is a reliable predictor.
struct GeneratorConfig {
  int64_t dx = 40, dy = 48, dz = 40;     // 5:6:5, the paper ratio at desk scale
  int axis = 1;                          // bagging axis
  double age_min = 44.0, age_max = 82.0;
  int slab_lo = -1, slab_hi = -1;        // -1: centered quarter of the axis
  double noise_sigma = 0.05;             // fraction of template dynamic range
  double perturb_amp = 0.03;             // smooth-mode amplitude (fraction of range)
  int artifact_max = 3;                  // blobs per subject drawn from 1..artifact_max
  double artifact_amp = 0.7;             // blob peak amplitude (fraction of range); 0 disables
  double signal_depth = 0.85;            // darkening at region center
  double radius_frac_min = 0.20;         // in-plane radius at age_min (of half-axis)
  double radius_frac_max = 0.45;         // in-plane radius at age_max
  int m_hint = 3;                        // slices per instance, for shape checks
  int min_bag_size = 1;
};

inline SignalSlab resolve_slab(const GeneratorConfig& cfg) {
  if (cfg.slab_lo >= 0 && cfg.slab_hi >= 0) return {cfg.slab_lo, cfg.slab_hi};
  const int64_t len = cfg.axis == 0 ? cfg.dx : cfg.axis == 1 ? cfg.dy : cfg.dz;
  const int64_t span = std::max<int64_t>(len / 8, 1);
  const int64_t lo = (len - span) / 2;
  return {static_cast<int>(lo), static_cast<int>(lo + span - 1)};
}

inline void validate_generator_config(const GeneratorConfig& cfg) {
  if (cfg.dx < cfg.m_hint || cfg.dy < cfg.m_hint || cfg.dz < cfg.m_hint)
    throw ConfigError("generator: degenerate shape (" + std::to_string(cfg.dx) + "," +
                      std::to_string(cfg.dy) + "," + std::to_string(cfg.dz) + "), every axis must be >= m = " +
                      std::to_string(cfg.m_hint));
  if (cfg.axis < 0 || cfg.axis > 2) throw ConfigError("generator: axis must be 0, 1 or 2");
  const int64_t axis_len = cfg.axis == 0 ? cfg.dx : cfg.axis == 1 ? cfg.dy : cfg.dz;
  if (axis_len < static_cast<int64_t>(cfg.m_hint) * cfg.min_bag_size)
    throw ConfigError("generator: bagging axis length " + std::to_string(axis_len) +
                      " < m * min bag size = " + std::to_string(cfg.m_hint * cfg.min_bag_size));
  if (!(cfg.age_min < cfg.age_max)) throw ConfigError("generator: empty age range");
  const SignalSlab slab = resolve_slab(cfg);
  if (slab.lo < 0 || slab.hi < slab.lo || slab.hi >= axis_len)
    throw ConfigError("generator: signal slab [" + std::to_string(slab.lo) + "," +
                      std::to_string(slab.hi) + "] outside axis of length " + std::to_string(axis_len));
}

namespace detail {

struct TemplateField {
  std::vector<double> values;
  double range = 1.0;
};

inline double gauss3(double ux, double uy, double uz, double cx, double cy, double cz, double sx,
                     double sy, double sz) {
  const double qx = (ux - cx) / sx, qy = (uy - cy) / sy, qz = (uz - cz) / sz;
  return std::exp(-(qx * qx + qy * qy + qz * qz));
}

inline TemplateField base_template(const GeneratorConfig& cfg) {
  TemplateField f;
  f.values.resize(static_cast<size_t>(cfg.dx * cfg.dy * cfg.dz));
  double vmin = 1e300, vmax = -1e300;
  size_t i = 0;
  for (int64_t x = 0; x < cfg.dx; ++x)
    for (int64_t y = 0; y < cfg.dy; ++y)
      for (int64_t z = 0; z < cfg.dz; ++z, ++i) {
        const double ux = cfg.dx > 1 ? 2.0 * x / (cfg.dx - 1) - 1.0 : 0.0;
        const double uy = cfg.dy > 1 ? 2.0 * y / (cfg.dy - 1) - 1.0 : 0.0;
        const double uz = cfg.dz > 1 ? 2.0 * z / (cfg.dz - 1) - 1.0 : 0.0;
        const double head = gauss3(ux, uy, uz, 0, 0, 0, 0.55, 0.85, 0.55);
        const double band = 0.55 * gauss3(ux, uy, uz, 0, 0.18, 0, 0.33, 0.52, 0.33);
        const double v = head + band;
        f.values[i] = v;
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
  f.range = vmax - vmin;
  return f;
}

}  // namespace detail

inline Volume synth_subject(uint64_t subject_seed, double age, const GeneratorConfig& cfg) {
  validate_generator_config(cfg);
  if (age < cfg.age_min || age > cfg.age_max)
    throw ConfigError("synth_subject: age " + f64_str(age) + " outside configured range [" +
                      f64_str(cfg.age_min) + ", " + f64_str(cfg.age_max) + "]");
  const SignalSlab slab = resolve_slab(cfg);
  const detail::TemplateField tmpl = detail::base_template(cfg);

  Volume v;
  v.dx = cfg.dx;
  v.dy = cfg.dy;
  v.dz = cfg.dz;
  v.age = age;
  v.subject_seed = subject_seed;
  v.slab = slab;
  v.voxels.resize(static_cast<size_t>(v.numel()));

  // age-independent per-subject streams
  Rng base(subject_seed);
  Rng perturb_rng = base.fork(1);
  Rng noise_rng = base.fork(2);

  // smooth perturbation: six random low-frequency cosine modes
  constexpr int kModes = 6;
  double kvec[kModes][3], phase[kModes], amp[kModes];
  for (int md = 0; md < kModes; ++md) {
    for (double& kd : kvec[md]) kd = 2.0 * M_PI * perturb_rng.uniform(0.4, 1.2) *
                                      (perturb_rng.uniform() < 0.5 ? -1.0 : 1.0);
    phase[md] = perturb_rng.uniform(0.0, 2.0 * M_PI);
    amp[md] = perturb_rng.normal() / std::sqrt(double(kModes));
  }

  // artifact blobs: random centers, semi-axes, and signed amplitudes
  struct Blob {
    double cen[3], semi[3], amp;
  };
  std::vector<Blob> blobs;
  if (cfg.artifact_amp != 0.0 && cfg.artifact_max > 0) {
    const int64_t dims[3] = {cfg.dx, cfg.dy, cfg.dz};
    const int count = static_cast<int>(perturb_rng.uniform_int(1, cfg.artifact_max));
    for (int bi = 0; bi < count; ++bi) {
      Blob b;
      for (int d = 0; d < 3; ++d) {
        b.semi[d] = perturb_rng.uniform(0.12, 0.25) * static_cast<double>(dims[d]);
        b.cen[d] = perturb_rng.uniform(0.2, 0.8) * static_cast<double>(dims[d]);
      }
      b.amp = perturb_rng.uniform(0.6, 1.0) * (perturb_rng.uniform() < 0.5 ? -1.0 : 1.0);
      blobs.push_back(b);
    }
  }

  // planted signal geometry: in-plane radius grows from radius_frac_min to
  // radius_frac_max of the half-axis over the age range; along the bagging
  // axis the ellipsoid scales proportionally but always stays inside the slab
  const double t = (age - cfg.age_min) / (cfg.age_max - cfg.age_min);
  const double frac = cfg.radius_frac_min + (cfg.radius_frac_max - cfg.radius_frac_min) * t;
  const double span = static_cast<double>(slab.hi - slab.lo + 1);
  const double slab_center = slab.lo + 0.5 * span;
  const double slab_room = 0.5 * span;
  const double axis_len[3] = {static_cast<double>(cfg.dx), static_cast<double>(cfg.dy),
                              static_cast<double>(cfg.dz)};
  double semi_x, semi_y, semi_z, cen_x, cen_y, cen_z;
  {
    double semi[3], cen[3];
    for (int d = 0; d < 3; ++d) {
      if (d == cfg.axis) {
        semi[d] = std::max(frac / cfg.radius_frac_max * 0.98 * slab_room, 0.25);
        cen[d] = slab_center;
      } else {
        semi[d] = std::max(frac * axis_len[d] / 2.0, 0.5);
        cen[d] = axis_len[d] / 2.0;
      }
    }
    semi_x = semi[0];
    semi_y = semi[1];
    semi_z = semi[2];
    cen_x = cen[0];
    cen_y = cen[1];
    cen_z = cen[2];
  }

  const double depth = cfg.signal_depth * tmpl.range;
  const double namp = cfg.noise_sigma * tmpl.range;
  const double pamp = cfg.perturb_amp * tmpl.range;
  const double bamp = cfg.artifact_amp * tmpl.range;

  size_t i = 0;
  for (int64_t x = 0; x < cfg.dx; ++x)
    for (int64_t y = 0; y < cfg.dy; ++y)
      for (int64_t z = 0; z < cfg.dz; ++z, ++i) {
        double val = tmpl.values[i];
        if (pamp != 0.0) {
          const double ux = cfg.dx > 1 ? 2.0 * x / (cfg.dx - 1) - 1.0 : 0.0;
          const double uy = cfg.dy > 1 ? 2.0 * y / (cfg.dy - 1) - 1.0 : 0.0;
          const double uz = cfg.dz > 1 ? 2.0 * z / (cfg.dz - 1) - 1.0 : 0.0;
          double p = 0.0;
          for (int md = 0; md < kModes; ++md)
            p += amp[md] * std::cos(kvec[md][0] * ux + kvec[md][1] * uy + kvec[md][2] * uz + phase[md]);
          val += pamp * p;
        }
        for (const Blob& b : blobs) {
          const double bx = (x + 0.5 - b.cen[0]) / b.semi[0];
          const double by = (y + 0.5 - b.cen[1]) / b.semi[1];
          const double bz = (z + 0.5 - b.cen[2]) / b.semi[2];
          const double r2 = bx * bx + by * by + bz * bz;
          if (r2 < 1.0) val += bamp * b.amp * (1.0 - r2) * (1.0 - r2);
        }
        const double rx = (x + 0.5 - cen_x) / semi_x;
        const double ry = (y + 0.5 - cen_y) / semi_y;
        const double rz = (z + 0.5 - cen_z) / semi_z;
        const double rho2 = rx * rx + ry * ry + rz * rz;
        if (rho2 < 1.0) {
          const double prof = (1.0 - rho2) * (1.0 - rho2);
          val -= depth * prof;
        }
        if (namp != 0.0) val += namp * noise_rng.normal();
        v.voxels[i] = static_cast<float>(val);
      }
  return v;
}

}  // namespace dgamil
