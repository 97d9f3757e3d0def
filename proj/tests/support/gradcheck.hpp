#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fogseg/autodiff.hpp"
#include "fogseg/rng.hpp"

namespace fogseg::testing {

// Central finite differences vs analytic gradients, double precision.
// make_loss must rebuild the graph from the leaves' current values each call.
inline double max_rel_grad_err(const std::vector<Vard>& leaves,
                               const std::function<Vard()>& make_loss, double h = 1e-4) {
  for (const auto& l : leaves) l->grad = Tensord();
  Vard loss = make_loss();
  backward(loss);

  double worst = 0.0;
  for (const auto& leaf : leaves) {
    leaf->ensure_grad();
    for (int64_t i = 0; i < leaf->value.numel(); ++i) {
      const double x0 = leaf->value[i];
      leaf->value.mutable_data()[i] = x0 + h;
      const double fp = make_loss()->value[0];
      leaf->value.mutable_data()[i] = x0 - h;
      const double fm = make_loss()->value[0];
      leaf->value.mutable_data()[i] = x0;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = leaf->grad[i];
      const double rel = std::abs(num - ana) / std::max(1e-3, std::abs(num) + std::abs(ana));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

inline Tensord random_tensor(std::vector<int> dims, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensord t(std::move(dims), 0.0);
  double* d = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) d[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace fogseg::testing
