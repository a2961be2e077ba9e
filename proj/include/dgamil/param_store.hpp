// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dgamil/rng.hpp"
#include "dgamil/tape.hpp"

namespace dgamil {

// A named persistent tensor: trainable weight or non-trainable buffer
// (e.g. batch-norm running statistics). Parameters outlive tapes; each
// training step binds them as tape leaves and harvests gradients back.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  Tensor adam_m, adam_v;  // lazily sized by the optimizer
};

class ParamStore {
 public:
  int add(std::string name, Tensor init, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    const int id = static_cast<int>(params_.size());
    index_[name] = id;
    Param p;
    p.name = std::move(name);
    p.grad = Tensor::zeros(init.shape);
    p.value = std::move(init);
    p.trainable = trainable;
    params_.push_back(std::move(p));
    return id;
  }

  Param& at(int id) { return params_[static_cast<size_t>(id)]; }
  const Param& at(int id) const { return params_[static_cast<size_t>(id)]; }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  size_t size() const { return params_.size(); }

  int64_t scalar_count(bool trainable_only = true) const {
    int64_t n = 0;
    for (const auto& p : params_)
      if (!trainable_only || p.trainable) n += p.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
  }

  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, int> index_;
};

// Tape leaves for every trainable parameter, in store order. Buffers are not
// bound; layers read and update them through the store directly.
struct BoundParams {
  std::vector<Var> vars;
  Var operator[](int id) const { return vars[static_cast<size_t>(id)]; }
};

inline BoundParams bind_params(Tape& t, ParamStore& store, bool with_grads) {
  BoundParams b;
  b.vars.resize(store.size(), nullptr);
  for (size_t i = 0; i < store.size(); ++i) {
    Param& p = store.all()[i];
    if (p.trainable) b.vars[i] = t.leaf(p.value, with_grads);
  }
  return b;
}

// Copies tape-side gradients into the store (assign, not accumulate).
inline void harvest_grads(ParamStore& store, const BoundParams& b) {
  for (size_t i = 0; i < store.size(); ++i) {
    Param& p = store.all()[i];
    if (!p.trainable) continue;
    Var v = b.vars[i];
    if (v && v->grad.numel() != 0)
      p.grad = v->grad;
    else
      p.grad = Tensor::zeros(p.value.shape);
  }
}

// Overwrites parameters by name; the hook used by checkpoint loading and by
// externally supplied backbone weights.
inline void load_named_tensors(ParamStore& store,
                               const std::vector<std::pair<std::string, Tensor>>& named) {
  for (const auto& [name, tensor] : named) {
    const int id = store.find(name);
    if (id < 0) throw ConfigError("unknown parameter: " + name);
    Param& p = store.at(id);
    if (p.value.shape != tensor.shape)
      throw ShapeError("parameter " + name + ": expected " + p.value.shape_str() + ", got " +
                       tensor.shape_str());
    p.value = tensor;
  }
}

// Initializers ------------------------------------------------------------

inline Tensor kaiming_normal(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = rng.normal(0.0, std);
  return t;
}

inline Tensor normal_init(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) v = rng.normal(0.0, std);
  return t;
}

}  // namespace dgamil
