// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "dgamil/checkpoint.hpp"
#include "dgamil/dataset.hpp"
#include "dgamil/metrics.hpp"
#include "dgamil/optim.hpp"

namespace dgamil {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 8;          // paper-scale runs use 32
  LossWeights loss;            // lambda2 = 0.1, lambda3 = 0.05, lambda4 = 1
  double decay_factor = 0.8;
  int decay_patience = 5;
  int max_epochs = 120;
  int stop_patience = 20;
  uint64_t seed_params = 1;
  uint64_t seed_data = 2;
  uint64_t seed_pairing = 3;
  bool crop = false;
  BagConfig bag;
  ModelConfig model;
  bool verbose = true;

  void validate() const {
    if (lr <= 0 || decay_factor <= 0) throw ConfigError("train: rates and factors must be positive");
    if (decay_patience < 1 || stop_patience < 1)
      throw ConfigError("train: patience values must be positive integers");
    if (batch_size < 1 || max_epochs < 1) throw ConfigError("train: batch size and epochs must be >= 1");
  }
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_total = 0.0, train_mse = 0.0, train_mse0 = 0.0;
  double train_decp1 = 0.0, train_decp2 = 0.0;
  double val_mae = 0.0;
  double seconds = 0.0;
};

struct RunRecord {
  std::string manifest_sha1;
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val_mae = std::numeric_limits<double>::infinity();
  std::string checkpoint_path;
  bool diverged = false;
  int diverged_epoch = -1;
  double wall_seconds = 0.0;
};

inline void write_run_record(const RunRecord& r, const TrainConfig& cfg, const std::string& path) {
  auto os = open_out(path);
  os << "format=dgamil-run-v1\n";
  os << "manifest_sha1=" << r.manifest_sha1 << "\n";
  os << "monitor=train_total\n";  // LR decay and early stop both watch it
  os << "edge_mode.spatial=" << to_string(cfg.model.spatial_gat.edge_mode) << "\n";
  os << "edge_mode.instance=" << to_string(cfg.model.instance_gat.edge_mode) << "\n";
  os << "config.lr=" << f64_str(cfg.lr) << "\n";
  os << "config.batch_size=" << cfg.batch_size << "\n";
  os << "config.lambda2=" << f64_str(cfg.loss.lambda2) << "\n";
  os << "config.lambda3=" << f64_str(cfg.loss.lambda3) << "\n";
  os << "config.lambda4=" << f64_str(cfg.loss.lambda4) << "\n";
  os << "config.decay_factor=" << f64_str(cfg.decay_factor) << "\n";
  os << "config.decay_patience=" << cfg.decay_patience << "\n";
  os << "config.max_epochs=" << cfg.max_epochs << "\n";
  os << "config.stop_patience=" << cfg.stop_patience << "\n";
  os << "config.seed_params=" << cfg.seed_params << "\n";
  os << "config.seed_data=" << cfg.seed_data << "\n";
  os << "config.seed_pairing=" << cfg.seed_pairing << "\n";
  os << "config.use_spatial_agg=" << (cfg.model.use_spatial_agg ? 1 : 0) << "\n";
  os << "config.use_instance_agg=" << (cfg.model.use_instance_agg ? 1 : 0) << "\n";
  os << "config.use_disentangle=" << (cfg.model.use_disentangle ? 1 : 0) << "\n";
  os << "config.bag_m=" << cfg.bag.m << "\n";
  os << "config.bag_k=" << cfg.bag.k << "\n";
  os << "config.bag_axis=" << cfg.bag.axis << "\n";
  os << "config.bag_norm=" << to_string(cfg.bag.norm) << "\n";
  for (const auto& e : r.epochs) {
    os << "epoch=" << e.epoch << " lr=" << f64_str(e.lr) << " train_total=" << f64_str(e.train_total)
       << " train_mse=" << f64_str(e.train_mse) << " train_mse0=" << f64_str(e.train_mse0)
       << " train_decp1=" << f64_str(e.train_decp1) << " train_decp2=" << f64_str(e.train_decp2)
       << " val_mae=" << f64_str(e.val_mae) << " seconds=" << f64_str(e.seconds) << "\n";
  }
  os << "best_epoch=" << r.best_epoch << "\n";
  os << "best_val_mae=" << f64_str(r.best_val_mae) << "\n";
  os << "checkpoint=" << r.checkpoint_path << "\n";
  os << "diverged=" << (r.diverged ? 1 : 0) << "\n";
  if (r.diverged) os << "diverged_epoch=" << r.diverged_epoch << "\n";
  os << "wall_seconds=" << f64_str(r.wall_seconds) << "\n";
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

inline Bag prepare_bag(const Volume& vol, const BagConfig& cfg, bool crop) {
  Volume v = crop ? crop_to_mask(vol) : vol;
  v = normalize_volume(v, cfg.norm);
  return make_bag(v, cfg);
}

inline std::vector<Bag> load_split_bags(const DatasetManifest& m, const std::string& split,
                                        const BagConfig& cfg, bool crop) {
  std::vector<Bag> bags;
  for (const auto& e : m.split(split)) {
    Volume v = read_volume(m.resolve(e));
    bags.push_back(prepare_bag(v, cfg, crop));
  }
  return bags;
}

inline BatchInput assemble_batch(const std::vector<Bag>& bags, const std::vector<int64_t>& idx) {
  if (idx.empty()) throw ConfigError("assemble_batch: empty batch");
  const Bag& first = bags[static_cast<size_t>(idx[0])];
  const int64_t k = first.k(), m = first.instances.dim(1), h = first.h(), w = first.w();
  BatchInput in;
  in.bags = static_cast<int64_t>(idx.size());
  in.k = k;
  in.instances = Tensor::zeros({in.bags * k, m, h, w});
  const int64_t per_bag = k * m * h * w;
  for (size_t b = 0; b < idx.size(); ++b) {
    const Bag& bag = bags[static_cast<size_t>(idx[b])];
    if (bag.k() != k || bag.instances.dim(1) != m || bag.h() != h || bag.w() != w)
      throw ShapeError("assemble_batch: inconsistent bag shapes in split");
    std::copy(bag.instances.data.begin(), bag.instances.data.end(),
              in.instances.data.begin() + static_cast<int64_t>(b) * per_bag);
    in.ages.push_back(bag.age);
  }
  return in;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline std::vector<double> predict_bags(ParamStore& store, const AgeModel& model,
                                        const std::vector<Bag>& bags, int batch_size) {
  std::vector<double> preds;
  for (size_t at = 0; at < bags.size(); at += static_cast<size_t>(batch_size)) {
    std::vector<int64_t> idx;
    for (size_t i = at; i < std::min(bags.size(), at + static_cast<size_t>(batch_size)); ++i)
      idx.push_back(static_cast<int64_t>(i));
    BatchInput in = assemble_batch(bags, idx);
    Tape t;
    BoundParams b = bind_params(t, store, false);
    ForwardOptions opt;
    opt.training = false;
    opt.with_loss = false;
    BatchResult r = model.forward(t, store, b, in, opt);
    for (int64_t i = 0; i < r.yhat->value.numel(); ++i) preds.push_back(r.yhat->value[i]);
  }
  return preds;
}

inline EvalReport evaluate_split(ParamStore& store, const AgeModel& model,
                                 const std::vector<Bag>& bags, int batch_size) {
  if (bags.empty()) throw ConfigError("evaluate: empty split");
  const std::vector<double> preds = predict_bags(store, model, bags, batch_size);
  std::vector<EvalRow> rows;
  for (size_t i = 0; i < bags.size(); ++i)
    rows.push_back(EvalRow{bags[i].subject_seed, bags[i].age, preds[i]});
  return compute_metrics(std::move(rows));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  ParamStore store;
  AgeModel model;
  RunRecord record;
};

inline double mean_age_of(const std::vector<Bag>& bags) {
  double s = 0.0;
  for (const Bag& b : bags) s += b.age;
  return s / static_cast<double>(bags.size());
}

inline TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg,
                         const std::string& out_dir) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);

  std::vector<Bag> train_bags = load_split_bags(manifest, "train", cfg.bag, cfg.crop);
  std::vector<Bag> val_bags = load_split_bags(manifest, "val", cfg.bag, cfg.crop);
  if (train_bags.empty() || val_bags.empty())
    throw ConfigError("train: manifest needs non-empty train and val splits");

  TrainResult res;
  Rng param_rng(cfg.seed_params);
  res.model = AgeModel::build(res.store, cfg.model, param_rng);
  res.model.set_output_bias(res.store, mean_age_of(train_bags));
  res.record.manifest_sha1 = sha1_hex(manifest_text(manifest));

  Adam adam;
  PlateauScheduler sched(cfg.lr, cfg.decay_factor, cfg.decay_patience, cfg.stop_patience);
  Rng pairing_rng(cfg.seed_pairing);

  auto snapshot = [&] {
    std::vector<Tensor> vals;
    vals.reserve(res.store.size());
    for (const Param& p : res.store.all()) vals.push_back(p.value);
    return vals;
  };
  auto restore = [&](const std::vector<Tensor>& vals) {
    for (size_t i = 0; i < vals.size(); ++i) res.store.all()[i].value = vals[i];
  };
  std::vector<Tensor> best_params = snapshot();
  std::vector<Tensor> last_finite = best_params;

  std::vector<int64_t> order(train_bags.size());
  std::iota(order.begin(), order.end(), 0);

  bool stop = false;
  for (int epoch = 1; epoch <= cfg.max_epochs && !stop; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    Rng shuffle_rng = Rng(cfg.seed_data).fork(static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double sum_total = 0, sum_mse = 0, sum_mse0 = 0, sum_d1 = 0, sum_d2 = 0;
    int64_t samples = 0;
    const double lr_now = sched.lr();
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      std::vector<int64_t> idx(order.begin() + static_cast<int64_t>(at),
                               order.begin() + static_cast<int64_t>(std::min(
                                   order.size(), at + static_cast<size_t>(cfg.batch_size))));
      BatchInput in = assemble_batch(train_bags, idx);
      Tape t;
      BoundParams b = bind_params(t, res.store, true);
      ForwardOptions opt;
      opt.training = true;
      opt.with_loss = true;
      opt.loss = cfg.loss;
      opt.pairing = &pairing_rng;
      BatchResult r = res.model.forward(t, res.store, b, in, opt);
      t.backward(r.total);
      harvest_grads(res.store, b);
      adam.step(res.store, lr_now);

      const double bsz = static_cast<double>(idx.size());
      sum_total += r.total->value[0] * bsz;
      sum_mse += r.mse->value[0] * bsz;
      if (r.mse0) sum_mse0 += r.mse0->value[0] * bsz;
      if (r.decp1) sum_d1 += r.decp1->value[0] * bsz;
      if (r.decp2) sum_d2 += r.decp2->value[0] * bsz;
      samples += idx.size();
    }
    EpochStats es;
    es.epoch = epoch;
    es.lr = lr_now;
    es.train_total = sum_total / static_cast<double>(samples);
    es.train_mse = sum_mse / static_cast<double>(samples);
    es.train_mse0 = sum_mse0 / static_cast<double>(samples);
    es.train_decp1 = sum_d1 / static_cast<double>(samples);
    es.train_decp2 = sum_d2 / static_cast<double>(samples);

    if (!std::isfinite(es.train_total)) {
      res.record.diverged = true;
      res.record.diverged_epoch = epoch;
      restore(last_finite);
      warn("training diverged at epoch " + std::to_string(epoch) + "; last finite state restored");
      break;
    }
    last_finite = snapshot();

    const EvalReport val = evaluate_split(res.store, res.model, val_bags, cfg.batch_size);
    es.val_mae = val.mae;
    if (val.mae < res.record.best_val_mae) {
      res.record.best_val_mae = val.mae;
      res.record.best_epoch = epoch;
      best_params = last_finite;
    }
    es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
    res.record.epochs.push_back(es);
    if (cfg.verbose)
      std::cerr << "epoch " << epoch << " lr " << lr_now << " train " << es.train_total << " val_mae "
                << es.val_mae << "\n";

    const auto dec = sched.observe(es.train_total);
    stop = dec.stop;
  }

  // the checkpoint holds the best-validation parameters
  if (!res.record.diverged) restore(best_params);
  const std::string ckpt = (std::filesystem::path(out_dir) / "best.ckpt").string();
  json meta;
  meta["manifest_sha1"] = res.record.manifest_sha1;
  meta["mean_train_age"] = mean_age_of(train_bags);
  meta["crop"] = cfg.crop;
  meta["seed_params"] = cfg.seed_params;
  meta["seed_data"] = cfg.seed_data;
  meta["seed_pairing"] = cfg.seed_pairing;
  meta["best_epoch"] = res.record.best_epoch;
  meta["diverged"] = res.record.diverged;
  save_checkpoint(ckpt, res.store, cfg.model, cfg.bag, meta);
  res.record.checkpoint_path = ckpt;
  res.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  write_run_record(res.record, cfg, (std::filesystem::path(out_dir) / "run.txt").string());
  return res;
}

// ---------------------------------------------------------------------------
// Ablation grid: the four aggregator/disentanglement configurations run with
// identical seeds and data.
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string variant;
  uint64_t seed = 0;
  double mae = 0, rmse = 0, pcc = 0;
};

inline ModelConfig apply_variant(ModelConfig m, const std::string& variant) {
  if (variant == "full") {
    m.use_spatial_agg = m.use_instance_agg = m.use_disentangle = true;
  } else if (variant == "wo_dis") {
    m.use_spatial_agg = m.use_instance_agg = true;
    m.use_disentangle = false;
  } else if (variant == "wo_sagg_dis") {
    m.use_spatial_agg = false;
    m.use_instance_agg = true;
    m.use_disentangle = false;
  } else if (variant == "wo_all") {
    m.use_spatial_agg = m.use_instance_agg = m.use_disentangle = false;
  } else {
    throw ConfigError("unknown ablation variant: " + variant +
                      " (expected full|wo_dis|wo_sagg_dis|wo_all)");
  }
  return m;
}

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"full", "wo_dis", "wo_sagg_dis", "wo_all"};
  return v;
}

inline std::vector<AblationRow> ablate(const DatasetManifest& manifest, const TrainConfig& base,
                                       int n_seeds, const std::string& out_dir,
                                       const std::vector<std::string>& variants = ablation_variants()) {
  std::filesystem::create_directories(out_dir);
  std::vector<Bag> test_bags = load_split_bags(manifest, "test", base.bag, base.crop);
  if (test_bags.empty()) throw ConfigError("ablate: manifest needs a non-empty test split");
  std::vector<AblationRow> rows;
  for (int s = 0; s < n_seeds; ++s) {
    for (const std::string& variant : variants) {
      TrainConfig cfg = base;
      cfg.model = apply_variant(base.model, variant);
      cfg.seed_params = base.seed_params + static_cast<uint64_t>(s) * 1000;
      cfg.seed_data = base.seed_data + static_cast<uint64_t>(s) * 1000;
      cfg.seed_pairing = base.seed_pairing + static_cast<uint64_t>(s) * 1000;
      const std::string run_dir =
          (std::filesystem::path(out_dir) / (variant + "_seed" + std::to_string(s))).string();
      TrainResult tr = train(manifest, cfg, run_dir);
      EvalReport rep = evaluate_split(tr.store, tr.model, test_bags, cfg.batch_size);
      rows.push_back(AblationRow{variant, static_cast<uint64_t>(s), rep.mae, rep.rmse, rep.pcc});
      if (cfg.verbose)
        std::cerr << "ablate " << variant << " seed " << s << " mae " << rep.mae << "\n";
    }
  }
  auto os = open_out((std::filesystem::path(out_dir) / "ablation.csv").string());
  os << "variant,seed,mae,rmse,pcc\n";
  for (const auto& r : rows)
    os << r.variant << ',' << r.seed << ',' << f64_str(r.mae) << ',' << f64_str(r.rmse) << ','
       << f64_str(r.pcc) << '\n';
  return rows;
}

}  // namespace dgamil
