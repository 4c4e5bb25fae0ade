#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gbrep/nn.hpp"
#include "gbrep/rng.hpp"
#include "gbrep/tensor.hpp"

namespace gbrep {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double analytic = 0.0, numeric = 0.0;
  int checked = 0;
};

// Central-difference check of analytic gradients in double precision.
//   loss_fn:  recomputes the scalar loss from the current store contents
//   grad_fn:  runs forward+backward once and returns per-parameter grads
//             aligned with store order
// Checks up to `per_tensor` entries of each parameter (deterministic choice
// via rng). Relative error denominator is max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult grad_check(
    ParamStore<double>& store, const std::function<double()>& loss_fn,
    const std::function<std::vector<TensorD>()>& grad_fn, double h = 1e-4, int per_tensor = 4,
    std::uint64_t seed = 17) {
  GradCheckResult res;
  std::vector<TensorD> analytic = grad_fn();
  Rng rng(seed);
  for (std::size_t pi = 0; pi < store.size(); ++pi) {
    TensorD& p = store.at(pi);
    const TensorD& g = analytic[pi];
    const std::int64_t n = p.numel();
    const int k = static_cast<int>(std::min<std::int64_t>(per_tensor, n));
    for (int c = 0; c < k; ++c) {
      const std::int64_t j =
          (n <= per_tensor) ? c : rng.uniform_int(0, static_cast<int>(n - 1));
      const double keep = p[j];
      p[j] = keep + h;
      const double fp = loss_fn();
      p[j] = keep - h;
      const double fm = loss_fn();
      p[j] = keep;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = g.numel() ? g[j] : 0.0;
      const double rel =
          std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = store.name_at(pi);
        res.worst_index = j;
        res.analytic = ana;
        res.numeric = num;
      }
    }
  }
  return res;
}

}  // namespace gbrep
