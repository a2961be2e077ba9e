// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "dgamil/rng.hpp"
#include "dgamil/tensor.hpp"

namespace dgamil::testing {

// Central finite differences against analytic gradients. `value_fn` must
// recompute the scalar loss from the current contents of `inputs`; `analytic`
// holds d(loss)/d(input) in the same order. Returns the worst relative error.
inline double fd_max_rel_err(const std::vector<Tensor*>& inputs,
                             const std::function<double()>& value_fn,
                             const std::vector<Tensor>& analytic, double tol = 1e-4) {
  double worst = 0.0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    Tensor& x = *inputs[t];
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double orig = x[i];
      const double a = analytic[t][i];
      auto err_at = [&](double h_base) {
        const double h = h_base * std::max(1.0, std::abs(orig));
        x[i] = orig + h;
        const double fp = value_fn();
        x[i] = orig - h;
        const double fm = value_fn();
        x[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        return std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      };
      // Smaller steps cut truncation error, larger ones cut round-off; a true
      // gradient bug fails at every step size.
      double err = err_at(1e-5);
      if (err >= tol) err = std::min(err, err_at(1e-6));
      if (err >= tol) err = std::min(err, err_at(1e-4));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

}  // namespace dgamil::testing
