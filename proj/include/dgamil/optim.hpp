// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>

#include "dgamil/param_store.hpp"

namespace dgamil {

// Adam with the standard published defaults; only the learning rate is
// externally scheduled.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& store, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Param& p : store.all()) {
      if (!p.trainable) continue;
      if (p.adam_m.numel() == 0) {
        p.adam_m = Tensor::zeros(p.value.shape);
        p.adam_v = Tensor::zeros(p.value.shape);
      }
      for (int64_t i = 0; i < p.value.numel(); ++i) {
        const double g = p.grad[i];
        p.adam_m[i] = beta1_ * p.adam_m[i] + (1.0 - beta1_) * g;
        p.adam_v[i] = beta2_ * p.adam_v[i] + (1.0 - beta2_) * g * g;
        const double mhat = p.adam_m[i] / bc1;
        const double vhat = p.adam_v[i] / bc2;
        p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  int64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Plateau tracker: "no decrease" means no new strict minimum of the monitored
// loss. After `decay_patience` consecutive non-improving epochs the LR is
// multiplied by `factor` exactly once and the decay counter restarts; after
// `stop_patience` consecutive non-improving epochs training stops.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, double factor, int decay_patience, int stop_patience)
      : lr_(initial_lr), factor_(factor), decay_patience_(decay_patience),
        stop_patience_(stop_patience) {
    if (initial_lr <= 0 || factor <= 0) throw ConfigError("scheduler: rates must be positive");
    if (decay_patience < 1 || stop_patience < 1)
      throw ConfigError("scheduler: patience values must be positive integers");
  }

  struct Decision {
    double lr;
    bool decayed;
    bool stop;
  };

  Decision observe(double loss) {
    Decision d{lr_, false, false};
    if (loss < best_) {
      best_ = loss;
      since_improve_ = 0;
      since_decay_ = 0;
      return d;
    }
    ++since_improve_;
    ++since_decay_;
    if (since_decay_ >= decay_patience_) {
      lr_ *= factor_;
      since_decay_ = 0;
      d.decayed = true;
    }
    if (since_improve_ >= stop_patience_) d.stop = true;
    d.lr = lr_;
    return d;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }

 private:
  double lr_, factor_;
  int decay_patience_, stop_patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_improve_ = 0, since_decay_ = 0;
};

}  // namespace dgamil
