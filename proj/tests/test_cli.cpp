// SPDX-License-Identifier: Apache-2.0
// End-to-end smoke of the command line binary: synth -> bag -> train -> eval
// -> attention -> sigma, plus exit-code conventions.
#include <catch2/catch.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dgamil/attention_export.hpp"
#include "dgamil/dataset.hpp"
#include "dgamil/metrics.hpp"

using namespace dgamil;

namespace {

const std::filesystem::path kRoot = std::filesystem::temp_directory_path() / "dgamil_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(DGAMIL_CLI_PATH) + " " + args + " >> " +
                          (kRoot / "cli.log").string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("cli pipeline: synth, bag, train, eval, attention, sigma", "[cli]") {
  std::filesystem::remove_all(kRoot);
  std::filesystem::create_directories(kRoot);
  const std::string data = (kRoot / "data").string();
  const std::string manifest = data + "/manifest.txt";

  REQUIRE(run("synth --out " + data + " --n 10 --shape 12,18,12 --seed 5") == 0);
  REQUIRE(std::filesystem::exists(manifest));
  const DatasetManifest m = read_manifest(manifest);
  REQUIRE(m.entries.size() == 10);

  // same seed reproduces identical bytes
  const std::string data2 = (kRoot / "data2").string();
  REQUIRE(run("synth --out " + data2 + " --n 10 --shape 12,18,12 --seed 5") == 0);
  {
    std::ifstream a(data + "/vol_000003.dgavol", std::ios::binary);
    std::ifstream b(data2 + "/vol_000003.dgavol", std::ios::binary);
    std::string ca((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    REQUIRE(ca == cb);
  }

  REQUIRE(run("bag --manifest " + manifest + " --out " + (kRoot / "bags").string() +
              " --m 3 --pad 4 --norm zscore_nz") == 0);
  REQUIRE(std::filesystem::exists(kRoot / "bags" / "vol_000000.dgabag"));

  REQUIRE(run("train --manifest " + manifest + " --out " + (kRoot / "run").string() +
              " --channels 4,8 --heads 2 --n-edges 3 --max-epochs 2 --batch 4 --pad 4 --lr 1e-3 --quiet") == 0);
  const std::string ckpt = (kRoot / "run" / "best.ckpt").string();
  REQUIRE(std::filesystem::exists(ckpt));
  REQUIRE(std::filesystem::exists(kRoot / "run" / "run.txt"));

  REQUIRE(run("eval --checkpoint " + ckpt + " --manifest " + manifest + " --split test --out " +
              (kRoot / "eval").string()) == 0);
  REQUIRE(std::filesystem::exists(kRoot / "eval" / "report.csv"));
  const auto rows = read_predictions_csv((kRoot / "eval" / "predictions.csv").string());
  REQUIRE(rows.size() == m.split("test").size());

  REQUIRE(run("attention --checkpoint " + ckpt + " --manifest " + manifest + " --split test --out " +
              (kRoot / "att").string()) == 0);
  REQUIRE(std::filesystem::exists(kRoot / "att" / "scores.csv"));
  bool found_record = false;
  for (const auto& entry : std::filesystem::directory_iterator(kRoot / "att"))
    if (entry.path().extension() == ".dgaatt") {
      const AttentionRecord rec = read_attention_record(entry.path().string());
      double sum = 0.0;
      for (int64_t i = 0; i < rec.scores.numel(); ++i) sum += rec.scores[i];
      REQUIRE(sum == Approx(1.0).margin(1e-5));
      found_record = true;
      break;
    }
  REQUIRE(found_record);

  REQUIRE(run("sigma --predictions " + (kRoot / "eval" / "predictions.csv").string() + " --out " +
              (kRoot / "sigma.csv").string() + " --bin-width 4") == 0);
  REQUIRE(std::filesystem::exists(kRoot / "sigma.csv"));
}

TEST_CASE("relative --out paths resolve under DGAMIL_OUT_ROOT", "[cli]") {
  std::filesystem::create_directories(kRoot / "envroot");
  const std::string cmd = std::string("DGAMIL_OUT_ROOT=") + (kRoot / "envroot").string() + " " +
                          DGAMIL_CLI_PATH + " synth --out rel_data --n 4 --shape 8,12,8 >> " +
                          (kRoot / "cli.log").string() + " 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  REQUIRE(std::filesystem::exists(kRoot / "envroot" / "rel_data" / "manifest.txt"));
}

TEST_CASE("cli exit codes: config errors return 2", "[cli]") {
  std::filesystem::create_directories(kRoot);
  // age range inverted -> generator config error
  REQUIRE(run("synth --out " + (kRoot / "bad").string() +
              " --n 5 --shape 12,18,12 --age-min 80 --age-max 50") == 2);
  // malformed shape
  REQUIRE(run("synth --out " + (kRoot / "bad2").string() + " --n 5 --shape 12,18") == 2);
  // missing required option
  REQUIRE(run("synth") == 2);
  // unknown manifest file -> generic error (1)
  REQUIRE(run("bag --manifest /nonexistent/manifest.txt --out " + (kRoot / "x").string()) == 1);
}
