#ifndef DELAYCAST_GRAD_CHECK_HPP
#define DELAYCAST_GRAD_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "delaycast/rng.hpp"
#include "delaycast/tensor.hpp"

namespace delaycast {

struct GradCheckOptions {
  int n_samples = 200;
  double step = 1e-4;       // central difference half-step
  double kink_tol = 1e-3;   // proximity at which a coordinate is resampled
  int max_resamples = 50;   // per sampled coordinate
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  int checked = 0;
  int resampled = 0;
};

namespace detail {

// True when perturbing one coordinate moved a kink argument across (or too
// close to) its non-differentiable point, which invalidates the central
// difference at that coordinate.
inline bool kink_adjacent(const std::vector<double>& base,
                          const std::vector<double>& plus,
                          const std::vector<double>& minus, double tol) {
  const std::size_t n = std::min({base.size(), plus.size(), minus.size()});
  for (std::size_t i = 0; i < n; ++i) {
    const double moved = std::abs(plus[i] - minus[i]);
    if (moved == 0.0) continue;  // does not depend on the coordinate
    if (plus[i] * minus[i] <= 0.0) return true;
    if (std::abs(base[i]) < tol) return true;
  }
  return false;
}

}  // namespace detail

// Compares reverse-mode gradients of a scalar loss against central finite
// differences over randomly sampled parameter coordinates. loss_fn must
// rebuild the graph from the current parameter values on every call.
// Relative error uses a small absolute floor so near-zero gradients do not
// divide the finite-difference noise into a spurious failure.
inline GradCheckReport check_gradients(
    const std::function<TensorPtr()>& loss_fn,
    std::span<const TensorPtr> params, const GradCheckOptions& opt, Rng& rng) {
  GradCheckReport report;

  std::vector<double> base_kinks;
  TensorPtr loss;
  {
    KinkTraceScope trace(&base_kinks);
    loss = loss_fn();
  }
  backward(loss);

  std::vector<std::vector<double>> ad_grads;
  ad_grads.reserve(params.size());
  std::size_t total_coords = 0;
  for (const auto& p : params) {
    ad_grads.push_back(p->grad);
    total_coords += p->size();
  }
  if (total_coords == 0) return report;

  for (int sample = 0; sample < opt.n_samples; ++sample) {
    bool accepted = false;
    for (int attempt = 0; attempt < opt.max_resamples && !accepted; ++attempt) {
      auto flat = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(total_coords) - 1));
      std::size_t which = 0;
      while (flat >= params[which]->size()) {
        flat -= params[which]->size();
        ++which;
      }
      auto& coord = params[which]->data[flat];
      const double saved = coord;

      std::vector<double> kinks_plus, kinks_minus;
      coord = saved + opt.step;
      double f_plus;
      {
        KinkTraceScope trace(&kinks_plus);
        f_plus = loss_fn()->data[0];
      }
      coord = saved - opt.step;
      double f_minus;
      {
        KinkTraceScope trace(&kinks_minus);
        f_minus = loss_fn()->data[0];
      }
      coord = saved;

      if (detail::kink_adjacent(base_kinks, kinks_plus, kinks_minus,
                                opt.kink_tol)) {
        ++report.resampled;
        continue;
      }

      const double fd = (f_plus - f_minus) / (2.0 * opt.step);
      const double ad = ad_grads[which][flat];
      const double denom = std::max({std::abs(ad), std::abs(fd), 1e-4});
      report.max_rel_error =
          std::max(report.max_rel_error, std::abs(ad - fd) / denom);
      ++report.checked;
      accepted = true;
    }
  }
  return report;
}

}  // namespace delaycast

#endif  // DELAYCAST_GRAD_CHECK_HPP
