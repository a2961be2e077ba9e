// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "dgamil/phantom.hpp"
#include "dgamil/sha1.hpp"

namespace dgamil {

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  double age = 0.0;
  uint64_t subject_seed = 0;
  std::string split;  // train | val | test
};

struct DatasetManifest {
  int format_version = 1;
  GeneratorConfig config;
  uint64_t master_seed = 0;
  std::vector<ManifestEntry> entries;
  std::string dir;  // set on load/write, not serialized

  std::vector<ManifestEntry> split(const std::string& tag) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == tag) out.push_back(e);
    return out;
  }

  std::string resolve(const ManifestEntry& e) const {
    return (std::filesystem::path(dir) / e.path).string();
  }
};

namespace detail {

inline void put_kv(std::string& out, const std::string& k, const std::string& v) {
  out += k;
  out += '=';
  out += v;
  out += '\n';
}

}  // namespace detail

inline std::string manifest_text(const DatasetManifest& m) {
  std::string out = "DGAMANIFEST1 version=" + std::to_string(m.format_version) + "\n[config]\n";
  const GeneratorConfig& c = m.config;
  detail::put_kv(out, "dx", std::to_string(c.dx));
  detail::put_kv(out, "dy", std::to_string(c.dy));
  detail::put_kv(out, "dz", std::to_string(c.dz));
  detail::put_kv(out, "axis", std::to_string(c.axis));
  detail::put_kv(out, "age_min", f64_str(c.age_min));
  detail::put_kv(out, "age_max", f64_str(c.age_max));
  const SignalSlab slab = resolve_slab(c);
  detail::put_kv(out, "slab", std::to_string(slab.lo) + ":" + std::to_string(slab.hi));
  detail::put_kv(out, "noise_sigma", f64_str(c.noise_sigma));
  detail::put_kv(out, "perturb_amp", f64_str(c.perturb_amp));
  detail::put_kv(out, "artifact_max", std::to_string(c.artifact_max));
  detail::put_kv(out, "artifact_amp", f64_str(c.artifact_amp));
  detail::put_kv(out, "signal_depth", f64_str(c.signal_depth));
  detail::put_kv(out, "radius_frac_min", f64_str(c.radius_frac_min));
  detail::put_kv(out, "radius_frac_max", f64_str(c.radius_frac_max));
  detail::put_kv(out, "master_seed", std::to_string(m.master_seed));
  out += "[entries]\n";
  for (const auto& e : m.entries) {
    out += e.path;
    out += '\t';
    out += f64_str(e.age);
    out += '\t';
    out += std::to_string(e.subject_seed);
    out += '\t';
    out += e.split;
    out += '\n';
  }
  return out;
}

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  auto os = open_out(path);
  const std::string text = manifest_text(m);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw std::runtime_error("write_manifest: I/O failure on " + path);
}

inline DatasetManifest read_manifest(const std::string& path) {
  auto is = open_in(path);
  DatasetManifest m;
  m.dir = std::filesystem::path(path).parent_path().string();
  if (m.dir.empty()) m.dir = ".";
  std::string line;
  if (!std::getline(is, line) || line.rfind("DGAMANIFEST1", 0) != 0)
    throw FormatError("manifest: bad magic line");
  enum { None, Config, Entries } section = None;
  std::map<std::string, std::string> cfg;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line == "[config]") {
      section = Config;
      continue;
    }
    if (line == "[entries]") {
      section = Entries;
      continue;
    }
    if (section == Config) {
      const size_t eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("manifest: malformed config line '" + line + "'");
      cfg[line.substr(0, eq)] = line.substr(eq + 1);
    } else if (section == Entries) {
      ManifestEntry e;
      std::array<std::string, 4> fields;
      size_t start = 0;
      for (int f = 0; f < 4; ++f) {
        const size_t tab = f < 3 ? line.find('\t', start) : line.size();
        if (tab == std::string::npos) throw FormatError("manifest: entry line needs 4 tab-separated fields");
        fields[static_cast<size_t>(f)] = line.substr(start, tab - start);
        start = tab + 1;
      }
      e.path = fields[0];
      try {
        e.age = std::stod(fields[1]);
        e.subject_seed = std::stoull(fields[2]);
      } catch (...) {
        throw FormatError("manifest: bad numeric field in entry '" + fields[0] + "'");
      }
      e.split = fields[3];
      if (e.split != "train" && e.split != "val" && e.split != "test")
        throw FormatError("manifest: unknown split tag '" + e.split + "'");
      m.entries.push_back(std::move(e));
    } else {
      throw FormatError("manifest: content before [config]");
    }
  }
  GeneratorConfig& c = m.config;
  c.dx = kv_i64(cfg, "dx");
  c.dy = kv_i64(cfg, "dy");
  c.dz = kv_i64(cfg, "dz");
  c.axis = static_cast<int>(kv_i64(cfg, "axis"));
  c.age_min = kv_f64(cfg, "age_min");
  c.age_max = kv_f64(cfg, "age_max");
  const std::string slab = kv_get(cfg, "slab");
  c.slab_lo = std::stoi(slab.substr(0, slab.find(':')));
  c.slab_hi = std::stoi(slab.substr(slab.find(':') + 1));
  c.noise_sigma = kv_f64(cfg, "noise_sigma");
  c.perturb_amp = kv_f64(cfg, "perturb_amp");
  c.artifact_max = static_cast<int>(kv_i64(cfg, "artifact_max"));
  c.artifact_amp = kv_f64(cfg, "artifact_amp");
  c.signal_depth = kv_f64(cfg, "signal_depth");
  c.radius_frac_min = kv_f64(cfg, "radius_frac_min");
  c.radius_frac_max = kv_f64(cfg, "radius_frac_max");
  m.master_seed = kv_u64(cfg, "master_seed");
  return m;
}

inline std::string manifest_sha1(const std::string& path) {
  auto is = open_in(path);
  std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return sha1_hex(content);
}

struct SplitFractions {
  double train = 0.8, val = 0.1, test = 0.1;
};

// Floor every split size and give the remainder to train.
inline std::array<int64_t, 3> split_sizes(int64_t n, const SplitFractions& f) {
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1 (got " + f64_str(f.train + f.val + f.test) + ")");
  if (f.train < 0 || f.val < 0 || f.test < 0) throw ConfigError("split fractions must be non-negative");
  std::array<int64_t, 3> sizes{static_cast<int64_t>(std::floor(f.train * static_cast<double>(n))),
                               static_cast<int64_t>(std::floor(f.val * static_cast<double>(n))),
                               static_cast<int64_t>(std::floor(f.test * static_cast<double>(n)))};
  sizes[0] += n - sizes[0] - sizes[1] - sizes[2];
  return sizes;
}

// Generates n_subjects volumes (ages uniform over the configured range),
// writes them plus the manifest into out_dir.
inline DatasetManifest synth_dataset(const GeneratorConfig& cfg, int64_t n_subjects,
                                     const SplitFractions& fractions, uint64_t master_seed,
                                     const std::string& out_dir) {
  validate_generator_config(cfg);
  if (n_subjects < 3) throw ConfigError("synth_dataset: need at least 3 subjects, got " +
                                        std::to_string(n_subjects));
  const auto sizes = split_sizes(n_subjects, fractions);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("synth_dataset: cannot create directory " + out_dir);

  DatasetManifest m;
  m.config = cfg;
  m.master_seed = master_seed;
  m.dir = out_dir;

  Rng master(master_seed);
  Rng age_rng = master.fork(101);
  Rng seed_rng = master.fork(202);
  for (int64_t i = 0; i < n_subjects; ++i) {
    ManifestEntry e;
    char name[32];
    std::snprintf(name, sizeof(name), "vol_%06lld.dgavol", static_cast<long long>(i));
    e.path = name;
    e.age = age_rng.uniform(cfg.age_min, cfg.age_max);
    e.subject_seed = seed_rng.next_u64();
    e.split = i < sizes[0] ? "train" : i < sizes[0] + sizes[1] ? "val" : "test";
    const Volume v = synth_subject(e.subject_seed, e.age, cfg);
    write_volume(v, m.resolve(e));
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, (std::filesystem::path(out_dir) / "manifest.txt").string());
  return m;
}

}  // namespace dgamil
