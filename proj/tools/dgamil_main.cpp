// SPDX-License-Identifier: Apache-2.0
//
// dgamil command line: synthetic dataset generation, bagging, training,
// evaluation, attention export, ablations and sigma profiles.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
// 1 any other failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "dgamil/attention_export.hpp"
#include "dgamil/train.hpp"

using namespace dgamil;

namespace {

std::string resolve_out(const std::string& path) {
  if (path.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  if (const char* root = std::getenv("DGAMIL_OUT_ROOT")) return (std::filesystem::path(root) / p).string();
  return path;
}

std::vector<int64_t> parse_i64_list(const std::string& s, size_t expect, const char* what) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoll(tok));
    } catch (...) {
      throw ConfigError(std::string(what) + ": bad integer '" + tok + "'");
    }
  }
  if (expect != 0 && out.size() != expect)
    throw ConfigError(std::string(what) + ": expected " + std::to_string(expect) + " values");
  return out;
}

struct BagFlags {
  int m = 3, k = 0, axis = 1, pad = 16;
  std::string norm = "zscore_nz";
  bool crop = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--m", m, "slices per instance");
    cmd->add_option("--k", k, "instances per bag (0 = fill the axis)");
    cmd->add_option("--axis", axis, "bagging axis (0..2)");
    cmd->add_option("--norm", norm, "normalization: none|zscore|zscore_nz|minmax");
    cmd->add_option("--pad", pad, "pad instance H/W to a multiple (0 = off)");
    cmd->add_flag("--crop", crop, "crop to the positive-voxel bounding box first");
  }

  BagConfig to_config() const {
    BagConfig b;
    b.m = m;
    b.k = k;
    b.axis = axis;
    b.norm = norm_mode_from_string(norm);
    b.pad_multiple = pad;
    return b;
  }
};

struct TrainFlags {
  double lr = 1e-4;
  int batch = 8;
  double lambda2 = 0.1, lambda3 = 0.05, lambda4 = 1.0;
  double decay_factor = 0.8;
  int decay_patience = 5, max_epochs = 120, stop_patience = 20;
  uint64_t seed_params = 1, seed_data = 2, seed_pairing = 3;
  std::string channels = "8,16,32,64";
  int heads = 8, n_edges = 8;
  std::string edge_mode = "lowest", spatial_edge_mode = "lowest";
  bool no_spatial = false, no_instance = false, no_disentangle = false;
  int head_hidden = 32, prelim_hidden = 32;
  bool quiet = false;
  BagFlags bag;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--lr", lr, "initial learning rate");
    cmd->add_option("--batch", batch, "bags per optimization step");
    cmd->add_option("--lambda2", lambda2, "preliminary-MSE weight");
    cmd->add_option("--lambda3", lambda3, "instance decoupling weight");
    cmd->add_option("--lambda4", lambda4, "bag decoupling weight");
    cmd->add_option("--decay-factor", decay_factor, "LR decay factor on plateau");
    cmd->add_option("--decay-patience", decay_patience, "epochs without a new loss minimum before decay");
    cmd->add_option("--max-epochs", max_epochs, "epoch cap");
    cmd->add_option("--stop-patience", stop_patience, "epochs without a new loss minimum before stopping");
    cmd->add_option("--seed-params", seed_params, "parameter init seed");
    cmd->add_option("--seed-data", seed_data, "data order seed");
    cmd->add_option("--seed-pairing", seed_pairing, "decoupling pairing seed");
    cmd->add_option("--channels", channels, "backbone channel plan, e.g. 8,16,32,64");
    cmd->add_option("--heads", heads, "attention heads");
    cmd->add_option("--n-edges", n_edges, "graph edges per node");
    cmd->add_option("--edge-mode", edge_mode, "instance graph edges: lowest|highest");
    cmd->add_option("--spatial-edge-mode", spatial_edge_mode, "spatial graph edges: lowest|highest|grid4");
    cmd->add_flag("--no-spatial-agg", no_spatial, "replace A_S with global average pooling");
    cmd->add_flag("--no-instance-agg", no_instance, "replace A_I with mean pooling");
    cmd->add_flag("--no-disentangle", no_disentangle, "drop the decoupling branch");
    cmd->add_option("--head-hidden", head_hidden, "regression head hidden width");
    cmd->add_option("--prelim-hidden", prelim_hidden, "preliminary head hidden width");
    cmd->add_flag("--quiet", quiet, "suppress per-epoch progress");
    bag.add_to(cmd);
  }

  TrainConfig to_config(const DatasetManifest& manifest) const {
    TrainConfig cfg;
    cfg.lr = lr;
    cfg.batch_size = batch;
    cfg.loss = LossWeights{lambda2, lambda3, lambda4};
    cfg.decay_factor = decay_factor;
    cfg.decay_patience = decay_patience;
    cfg.max_epochs = max_epochs;
    cfg.stop_patience = stop_patience;
    cfg.seed_params = seed_params;
    cfg.seed_data = seed_data;
    cfg.seed_pairing = seed_pairing;
    cfg.crop = bag.crop;
    cfg.bag = bag.to_config();
    cfg.verbose = !quiet;

    // instance geometry comes from the first train subject
    const auto train_entries = manifest.split("train");
    if (train_entries.empty()) throw ConfigError("train: manifest has no train split");
    const Volume probe = read_volume(manifest.resolve(train_entries.front()));
    const Bag probe_bag = prepare_bag(probe, cfg.bag, cfg.crop);

    ModelConfig& m = cfg.model;
    m.backbone.channels = parse_i64_list(channels, 0, "--channels");
    m.backbone.in_channels = cfg.bag.m;
    m.backbone.input_h = static_cast<int>(probe_bag.h());
    m.backbone.input_w = static_cast<int>(probe_bag.w());
    m.spatial_gat.heads = heads;
    m.spatial_gat.n_edges = n_edges;
    m.spatial_gat.edge_mode = edge_mode_from_string(spatial_edge_mode);
    m.instance_gat.heads = heads;
    m.instance_gat.n_edges = n_edges;
    m.instance_gat.edge_mode = edge_mode_from_string(edge_mode);
    m.use_spatial_agg = !no_spatial;
    m.use_instance_agg = !no_instance;
    m.use_disentangle = !no_disentangle;
    m.head_hidden = head_hidden;
    m.prelim_hidden = prelim_hidden;
    return cfg;
  }
};

int cmd_synth(const std::string& out, int64_t n, const std::string& shape, double age_min,
              double age_max, uint64_t seed, double noise, double perturb, double artifact_amp,
              int artifact_max, double depth, int axis, const std::string& slab,
              const std::string& fractions) {
  GeneratorConfig cfg;
  const auto dims = parse_i64_list(shape, 3, "--shape");
  cfg.dx = dims[0];
  cfg.dy = dims[1];
  cfg.dz = dims[2];
  cfg.age_min = age_min;
  cfg.age_max = age_max;
  cfg.noise_sigma = noise;
  cfg.perturb_amp = perturb;
  cfg.artifact_amp = artifact_amp;
  cfg.artifact_max = artifact_max;
  cfg.signal_depth = depth;
  cfg.axis = axis;
  if (!slab.empty()) {
    const size_t colon = slab.find(':');
    if (colon == std::string::npos) throw ConfigError("--slab must be lo:hi");
    cfg.slab_lo = std::stoi(slab.substr(0, colon));
    cfg.slab_hi = std::stoi(slab.substr(colon + 1));
  }
  SplitFractions f;
  const auto fr = [&] {
    std::vector<double> out_f;
    std::stringstream ss(fractions);
    std::string tok;
    while (std::getline(ss, tok, ',')) out_f.push_back(std::stod(tok));
    return out_f;
  }();
  if (fr.size() != 3) throw ConfigError("--fractions expects three comma-separated values");
  f.train = fr[0];
  f.val = fr[1];
  f.test = fr[2];
  const DatasetManifest m = synth_dataset(cfg, n, f, seed, resolve_out(out));
  std::cout << "wrote " << m.entries.size() << " volumes and manifest to " << m.dir << "\n";
  return 0;
}

int cmd_bag(const std::string& manifest_path, const std::string& out, const BagFlags& flags) {
  const DatasetManifest m = read_manifest(manifest_path);
  const BagConfig cfg = flags.to_config();
  const std::string out_dir = resolve_out(out);
  std::filesystem::create_directories(out_dir);
  int count = 0;
  for (const auto& e : m.entries) {
    const Volume v = read_volume(m.resolve(e));
    const Bag bag = prepare_bag(v, cfg, flags.crop);
    const std::string stem = std::filesystem::path(e.path).stem().string();
    write_bag(bag, (std::filesystem::path(out_dir) / (stem + ".dgabag")).string());
    ++count;
  }
  std::cout << "wrote " << count << " bags to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& out, const TrainFlags& flags) {
  const DatasetManifest manifest = read_manifest(manifest_path);
  const TrainConfig cfg = flags.to_config(manifest);
  const TrainResult res = train(manifest, cfg, resolve_out(out));
  if (res.record.diverged) {
    std::cerr << "training diverged at epoch " << res.record.diverged_epoch
              << "; last finite state saved to " << res.record.checkpoint_path << "\n";
    return 3;
  }
  std::cout << "best_epoch=" << res.record.best_epoch << " best_val_mae="
            << f64_str(res.record.best_val_mae) << " checkpoint=" << res.record.checkpoint_path
            << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path,
             const std::string& split, const std::string& out, int batch) {
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  const DatasetManifest manifest = read_manifest(manifest_path);
  const bool crop = ck.meta.value("crop", false);
  std::vector<Bag> bags = load_split_bags(manifest, split, ck.bag, crop);
  if (bags.empty()) throw ConfigError("eval: split '" + split + "' is empty");
  EvalReport rep = evaluate_split(ck.store, ck.model, bags, batch);
  const std::string out_dir = resolve_out(out);
  std::filesystem::create_directories(out_dir);
  write_report_csv(rep, (std::filesystem::path(out_dir) / "report.csv").string());
  write_predictions_csv(rep, (std::filesystem::path(out_dir) / "predictions.csv").string());
  std::cout << "n=" << rep.rows.size() << " mae=" << f64_str(rep.mae) << " rmse=" << f64_str(rep.rmse)
            << " pcc=" << f64_str(rep.pcc) << "\n";
  return 0;
}

int cmd_attention(const std::string& ckpt_path, const std::string& manifest_path,
                  const std::string& split, const std::string& out, int64_t limit) {
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  const DatasetManifest manifest = read_manifest(manifest_path);
  const bool crop = ck.meta.value("crop", false);
  const auto entries = manifest.split(split);
  if (entries.empty()) throw ConfigError("attention: split '" + split + "' is empty");
  const std::string out_dir = resolve_out(out);
  std::filesystem::create_directories(out_dir);
  auto csv = open_out((std::filesystem::path(out_dir) / "scores.csv").string());
  bool wrote_header = false;
  int64_t done = 0;
  for (const auto& e : entries) {
    if (limit > 0 && done >= limit) break;
    const Volume v = read_volume(manifest.resolve(e));
    const Bag bag = prepare_bag(v, ck.bag, crop);
    const AttentionRecord rec = make_attention_record(ck.store, ck.model, bag);
    const std::string stem = std::filesystem::path(e.path).stem().string();
    write_attention_record(rec, (std::filesystem::path(out_dir) / (stem + ".dgaatt")).string());
    if (!wrote_header) {
      csv << "subject_seed,age,pred,slab_ilo,slab_ihi,top1,top2,top2_in_slab";
      for (int64_t i = 0; i < rec.scores.numel(); ++i) csv << ",s" << i;
      csv << "\n";
      wrote_header = true;
    }
    const auto [top1, top2] = top2_instances(rec.scores);
    const bool in_slab = rec.slab_ilo >= 0 && top1 >= rec.slab_ilo && top1 <= rec.slab_ihi &&
                         top2 >= rec.slab_ilo && top2 <= rec.slab_ihi;
    csv << rec.subject_seed << ',' << f64_str(rec.age) << ',' << f64_str(rec.yhat) << ','
        << rec.slab_ilo << ',' << rec.slab_ihi << ',' << top1 << ',' << top2 << ','
        << (in_slab ? 1 : 0);
    for (int64_t i = 0; i < rec.scores.numel(); ++i) csv << ',' << f64_str(rec.scores[i]);
    csv << "\n";
    ++done;
  }
  std::cout << "wrote " << done << " attention records to " << out_dir << "\n";
  return 0;
}

int cmd_sigma(const std::string& predictions, const std::string& out, double bin_width) {
  const std::vector<EvalRow> rows = read_predictions_csv(predictions);
  const auto bins = sigma_profile(rows, bin_width);
  write_sigma_csv(bins, resolve_out(out));
  std::cout << "wrote " << bins.size() << " bins to " << resolve_out(out) << "\n";
  return 0;
}

int cmd_ablate(const std::string& manifest_path, const std::string& out, int seeds,
               const TrainFlags& flags) {
  const DatasetManifest manifest = read_manifest(manifest_path);
  TrainConfig base = flags.to_config(manifest);
  const auto rows = ablate(manifest, base, seeds, resolve_out(out));
  // paired comparison of the full model against the no-aggregator,
  // no-disentanglement baseline
  int wins = 0, pairs = 0;
  for (int s = 0; s < seeds; ++s) {
    double full = -1, none = -1;
    for (const auto& r : rows) {
      if (static_cast<int>(r.seed) != s) continue;
      if (r.variant == "full") full = r.mae;
      if (r.variant == "wo_all") none = r.mae;
    }
    if (full >= 0 && none >= 0) {
      ++pairs;
      if (full <= none) ++wins;
    }
  }
  std::cout << "full<=wo_all in " << wins << "/" << pairs << " paired seeds; table at "
            << resolve_out(out) << "/ablation.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual graph attention MIL age regression on synthetic phantoms"};
  app.require_subcommand(1);

  // synth
  std::string s_out, s_shape = "40,48,40", s_slab, s_fractions = "0.8,0.1,0.1";
  int64_t s_n = 275;
  double s_age_min = 44, s_age_max = 82, s_noise = 0.05, s_perturb = 0.03, s_depth = 0.85;
  double s_artifact_amp = 0.7;
  int s_artifact_max = 3;
  uint64_t s_seed = 1;
  int s_axis = 1;
  auto* synth = app.add_subcommand("synth", "generate a phantom dataset");
  synth->add_option("--out", s_out, "output directory")->required();
  synth->add_option("--n", s_n, "subject count");
  synth->add_option("--shape", s_shape, "volume shape DX,DY,DZ");
  synth->add_option("--age-min", s_age_min, "minimum age");
  synth->add_option("--age-max", s_age_max, "maximum age");
  synth->add_option("--seed", s_seed, "master seed");
  synth->add_option("--noise", s_noise, "noise sigma (fraction of range)");
  synth->add_option("--perturb", s_perturb, "per-subject perturbation amplitude");
  synth->add_option("--artifact-amp", s_artifact_amp, "artifact blob amplitude (0 disables)");
  synth->add_option("--artifacts", s_artifact_max, "max artifact blobs per subject");
  synth->add_option("--depth", s_depth, "signal darkening depth");
  synth->add_option("--axis", s_axis, "bagging axis");
  synth->add_option("--slab", s_slab, "signal slab lo:hi (default centered quarter)");
  synth->add_option("--fractions", s_fractions, "train,val,test fractions");

  // bag
  std::string b_manifest, b_out;
  BagFlags b_flags;
  auto* bag = app.add_subcommand("bag", "slice volumes into instance bags");
  bag->add_option("--manifest", b_manifest, "dataset manifest")->required();
  bag->add_option("--out", b_out, "output directory")->required();
  b_flags.add_to(bag);

  // train
  std::string t_manifest, t_out;
  TrainFlags t_flags;
  auto* train_cmd = app.add_subcommand("train", "train the age model");
  train_cmd->add_option("--manifest", t_manifest, "dataset manifest")->required();
  train_cmd->add_option("--out", t_out, "run directory")->required();
  t_flags.add_to(train_cmd);

  // eval
  std::string e_ckpt, e_manifest, e_split = "test", e_out;
  int e_batch = 8;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--manifest", e_manifest, "dataset manifest")->required();
  eval_cmd->add_option("--split", e_split, "split tag");
  eval_cmd->add_option("--out", e_out, "output directory")->required();
  eval_cmd->add_option("--batch", e_batch, "evaluation batch size");

  // attention
  std::string a_ckpt, a_manifest, a_split = "test", a_out;
  int64_t a_limit = 0;
  auto* att = app.add_subcommand("attention", "export attention records");
  att->add_option("--checkpoint", a_ckpt, "checkpoint file")->required();
  att->add_option("--manifest", a_manifest, "dataset manifest")->required();
  att->add_option("--split", a_split, "split tag");
  att->add_option("--out", a_out, "output directory")->required();
  att->add_option("--limit", a_limit, "max subjects (0 = all)");

  // sigma
  std::string g_pred, g_out;
  double g_bin = 2.0;
  auto* sigma = app.add_subcommand("sigma", "per-age-bin dispersion profile");
  sigma->add_option("--predictions", g_pred, "predictions.csv from eval")->required();
  sigma->add_option("--out", g_out, "output csv")->required();
  sigma->add_option("--bin-width", g_bin, "bin width in years");

  // ablate
  std::string ab_manifest, ab_out;
  int ab_seeds = 5;
  TrainFlags ab_flags;
  auto* ab = app.add_subcommand("ablate", "run the aggregator/disentanglement ablation grid");
  ab->add_option("--manifest", ab_manifest, "dataset manifest")->required();
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--seeds", ab_seeds, "paired seeds");
  ab_flags.add_to(ab);

  try {
    app.parse(argc, argv);
    if (synth->parsed())
      return cmd_synth(s_out, s_n, s_shape, s_age_min, s_age_max, s_seed, s_noise, s_perturb,
                       s_artifact_amp, s_artifact_max, s_depth, s_axis, s_slab, s_fractions);
    if (bag->parsed()) return cmd_bag(b_manifest, b_out, b_flags);
    if (train_cmd->parsed()) return cmd_train(t_manifest, t_out, t_flags);
    if (eval_cmd->parsed()) return cmd_eval(e_ckpt, e_manifest, e_split, e_out, e_batch);
    if (att->parsed()) return cmd_attention(a_ckpt, a_manifest, a_split, a_out, a_limit);
    if (sigma->parsed()) return cmd_sigma(g_pred, g_out, g_bin);
    if (ab->parsed()) return cmd_ablate(ab_manifest, ab_out, ab_seeds, ab_flags);
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
