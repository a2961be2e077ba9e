// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch.hpp>

#include <filesystem>
#include <set>

#include "dgamil/dataset.hpp"

using namespace dgamil;

namespace {

GeneratorConfig tiny_cfg() {
  GeneratorConfig cfg;
  cfg.dx = 8;
  cfg.dy = 12;
  cfg.dz = 8;
  return cfg;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const char* name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("sha1 known vectors", "[dataset]") {
  REQUIRE(sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
  REQUIRE(sha1_hex("") == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
  REQUIRE(sha1_hex(std::string(1000, 'x')) != sha1_hex(std::string(1001, 'x')));
}

TEST_CASE("split sizes floor with remainder to train", "[dataset]") {
  const auto s1 = split_sizes(10, SplitFractions{0.8, 0.1, 0.1});
  REQUIRE(s1 == std::array<int64_t, 3>{8, 1, 1});
  const auto s2 = split_sizes(7, SplitFractions{0.5, 0.25, 0.25});
  REQUIRE(s2 == std::array<int64_t, 3>{5, 1, 1});
  const auto s3 = split_sizes(5, SplitFractions{1.0, 0.0, 0.0});
  REQUIRE(s3 == std::array<int64_t, 3>{5, 0, 0});
  REQUIRE_THROWS_AS(split_sizes(10, SplitFractions{0.8, 0.1, 0.2}), ConfigError);
}

TEST_CASE("synth_dataset writes volumes, splits and a manifest", "[dataset]") {
  TempDir dir("dgamil_ds_test");
  const DatasetManifest m = synth_dataset(tiny_cfg(), 10, SplitFractions{0.8, 0.1, 0.1}, 7,
                                          dir.path.string());
  REQUIRE(m.entries.size() == 10);
  REQUIRE(m.split("train").size() == 8);
  REQUIRE(m.split("val").size() == 1);
  REQUIRE(m.split("test").size() == 1);
  // paths unique, every file exists, ages in range
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    REQUIRE(seen.insert(e.path).second);
    REQUIRE(std::filesystem::exists(m.resolve(e)));
    REQUIRE(e.age >= m.config.age_min);
    REQUIRE(e.age <= m.config.age_max);
  }
  // volumes carry the manifest metadata
  const Volume v = read_volume(m.resolve(m.entries[3]));
  REQUIRE(v.age == m.entries[3].age);
  REQUIRE(v.subject_seed == m.entries[3].subject_seed);

  // manifest round trip
  const DatasetManifest r = read_manifest((dir.path / "manifest.txt").string());
  REQUIRE(r.entries.size() == m.entries.size());
  for (size_t i = 0; i < r.entries.size(); ++i) {
    REQUIRE(r.entries[i].path == m.entries[i].path);
    REQUIRE(r.entries[i].age == m.entries[i].age);
    REQUIRE(r.entries[i].subject_seed == m.entries[i].subject_seed);
    REQUIRE(r.entries[i].split == m.entries[i].split);
  }
  REQUIRE(r.config.dx == m.config.dx);
  REQUIRE(r.master_seed == m.master_seed);
  REQUIRE(manifest_text(r) == manifest_text(m));

  // content hash stable and content-sensitive
  const std::string h1 = manifest_sha1((dir.path / "manifest.txt").string());
  REQUIRE(h1 == sha1_hex(manifest_text(m)));
}

TEST_CASE("all-train fractions tag every entry train", "[dataset]") {
  TempDir dir("dgamil_ds_train_only");
  const DatasetManifest m =
      synth_dataset(tiny_cfg(), 5, SplitFractions{1.0, 0.0, 0.0}, 3, dir.path.string());
  for (const auto& e : m.entries) REQUIRE(e.split == "train");
}

TEST_CASE("empirical age mean approaches the range midpoint", "[dataset]") {
  TempDir dir("dgamil_ds_mc");
  GeneratorConfig cfg = tiny_cfg();
  const DatasetManifest m = synth_dataset(cfg, 100, SplitFractions{0.8, 0.1, 0.1}, 11,
                                          dir.path.string());
  double mean = 0.0;
  for (const auto& e : m.entries) mean += e.age;
  mean /= static_cast<double>(m.entries.size());
  REQUIRE(std::abs(mean - 63.0) < 3.0);
}

TEST_CASE("dataset preconditions are enforced", "[dataset]") {
  TempDir dir("dgamil_ds_bad");
  REQUIRE_THROWS_AS(
      synth_dataset(tiny_cfg(), 2, SplitFractions{0.8, 0.1, 0.1}, 1, dir.path.string()),
      ConfigError);
  REQUIRE_THROWS_AS(
      synth_dataset(tiny_cfg(), 10, SplitFractions{0.9, 0.2, 0.1}, 1, dir.path.string()),
      ConfigError);
}

TEST_CASE("manifest parser names malformed content", "[dataset]") {
  TempDir dir("dgamil_ds_parse");
  const auto path = dir.path / "manifest.txt";
  {
    std::ofstream os(path);
    os << "WRONGMAGIC\n";
  }
  REQUIRE_THROWS_WITH(read_manifest(path.string()), Catch::Contains("magic"));
  {
    std::ofstream os(path);
    os << "DGAMANIFEST1 version=1\n[config]\ndx=8\n[entries]\nonly_two_fields\t50\n";
  }
  REQUIRE_THROWS_AS(read_manifest(path.string()), FormatError);
}
