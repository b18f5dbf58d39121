#ifndef DELAYCAST_LOSSES_HPP
#define DELAYCAST_LOSSES_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "delaycast/errors.hpp"
#include "delaycast/tensor.hpp"

namespace delaycast {

constexpr std::array<double, 3> kQuantileLevels{0.1, 0.5, 0.9};

// Asymmetric absolute loss whose minimizer is the conditional alpha-quantile.
inline double pinball(double u, double alpha) {
  return u >= 0.0 ? alpha * u : (alpha - 1.0) * u;
}

// Derivative w.r.t. u, taking the u >= 0 branch at the kink.
inline double pinball_slope(double u, double alpha) {
  return u >= 0.0 ? alpha : alpha - 1.0;
}

// Batch-level smooth F1 surrogate: builds soft confusion counts from the
// predicted probabilities and returns 1 - soft-F1. The denominator is
// floored at eps so an all-negative batch with vanishing probabilities
// yields exactly 1 instead of 0/0.
inline TensorPtr sigmoid_f1_loss(const TensorPtr& probs,
                                 std::vector<double> labels,
                                 double eps = 1e-8) {
  if (probs->cols != 1 || probs->rows != labels.size())
    throw RuntimeFailure("sigmoid_f1_loss: probs must be [B x 1] matching labels");
  if (labels.empty()) throw RuntimeFailure("sigmoid_f1_loss: empty batch");

  const std::size_t batch = labels.size();
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double p = probs->data[i], d = labels[i];
    tp += p * d;
    fp += p * (1.0 - d);
    fn += (1.0 - p) * d;
  }
  const double denom_raw = 2.0 * tp + fp + fn;
  const double denom = std::max(denom_raw, eps);

  auto lbl = std::make_shared<std::vector<double>>(std::move(labels));
  auto loss =
      make_node(1, 1, {probs}, [lbl, tp, denom, denom_raw, eps](Tensor& self) {
        auto& probs = *self.parents[0];
        if (!probs.needs_grad) return;
        probs.ensure_grad();
        const double g = self.grad[0];
        const double ddenom = denom_raw >= eps ? 1.0 : 0.0;
        for (std::size_t i = 0; i < lbl->size(); ++i) {
          const double d = (*lbl)[i];
          // L = 1 - 2 tp / denom; d(tp)/dp_i = d_i, d(denom)/dp_i = 1.
          probs.grad[i] +=
              g * (-2.0) * (d * denom - tp * ddenom) / (denom * denom);
        }
      });
  loss->data[0] = 1.0 - 2.0 * tp / denom;
  return loss;
}

// Ground-truth-routed quantile loss over both regression heads:
// mean over batch and quantile levels of pinball(y - prediction), where each
// sample contributes only through the head matching its label. Gradients to
// the other head are exactly zero.
inline TensorPtr regression_loss(const TensorPtr& delayed_q,
                                 const TensorPtr& ontime_q,
                                 std::vector<double> y,
                                 std::vector<double> d,
                                 std::span<const double> levels = kQuantileLevels) {
  const std::size_t batch = y.size();
  const std::size_t nq = levels.size();
  if (delayed_q->rows != batch || ontime_q->rows != batch ||
      delayed_q->cols != nq || ontime_q->cols != nq || d.size() != batch)
    throw RuntimeFailure("regression_loss: shape mismatch");
  if (batch == 0) throw RuntimeFailure("regression_loss: empty batch");

  auto ys = std::make_shared<std::vector<double>>(std::move(y));
  auto ds = std::make_shared<std::vector<double>>(std::move(d));
  auto lv = std::make_shared<std::vector<double>>(levels.begin(), levels.end());

  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const bool is_delayed = (*ds)[i] != 0.0;
    const TensorPtr& head = is_delayed ? delayed_q : ontime_q;
    for (std::size_t j = 0; j < nq; ++j) {
      const double u = (*ys)[i] - head->data[i * nq + j];
      trace_kink(u);
      total += pinball(u, (*lv)[j]);
    }
  }
  const double scale = 1.0 / (static_cast<double>(nq) * static_cast<double>(batch));

  auto loss = make_node(1, 1, {delayed_q, ontime_q},
                        [ys, ds, lv, scale](Tensor& self) {
    auto& delayed = *self.parents[0];
    auto& ontime = *self.parents[1];
    const std::size_t nq = lv->size();
    const double g = self.grad[0] * scale;
    const bool gd = delayed.needs_grad, go = ontime.needs_grad;
    if (gd) delayed.ensure_grad();
    if (go) ontime.ensure_grad();
    for (std::size_t i = 0; i < ys->size(); ++i) {
      const bool is_delayed = (*ds)[i] != 0.0;
      Tensor& head = is_delayed ? delayed : ontime;
      if (!(is_delayed ? gd : go)) continue;
      for (std::size_t j = 0; j < nq; ++j) {
        const double u = (*ys)[i] - head.data[i * nq + j];
        head.grad[i * nq + j] += g * (-pinball_slope(u, (*lv)[j]));
      }
    }
  });
  loss->data[0] = total * scale;
  return loss;
}

// Plain-number variant for validation passes and cross-checks.
inline double regression_loss_value(std::span<const double> delayed_q,
                                    std::span<const double> ontime_q,
                                    std::span<const double> y,
                                    std::span<const double> d,
                                    std::span<const double> levels = kQuantileLevels) {
  const std::size_t batch = y.size(), nq = levels.size();
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto head = d[i] != 0.0 ? delayed_q : ontime_q;
    for (std::size_t j = 0; j < nq; ++j)
      total += pinball(y[i] - head[i * nq + j], levels[j]);
  }
  return total / (static_cast<double>(nq) * static_cast<double>(batch));
}

// Binary cross entropy on probabilities; used by gradient-check fragments.
inline TensorPtr bce_loss(const TensorPtr& probs, std::vector<double> labels) {
  if (probs->cols != 1 || probs->rows != labels.size())
    throw RuntimeFailure("bce_loss: probs must be [B x 1] matching labels");
  const std::size_t batch = labels.size();
  constexpr double clamp = 1e-12;

  auto lbl = std::make_shared<std::vector<double>>(std::move(labels));
  auto loss = make_node(1, 1, {probs}, [lbl, clamp](Tensor& self) {
    auto& probs = *self.parents[0];
    if (!probs.needs_grad) return;
    probs.ensure_grad();
    const double g = self.grad[0] / static_cast<double>(lbl->size());
    for (std::size_t i = 0; i < lbl->size(); ++i) {
      const double p = std::clamp(probs.data[i], clamp, 1.0 - clamp);
      probs.grad[i] += g * (-(*lbl)[i] / p + (1.0 - (*lbl)[i]) / (1.0 - p));
    }
  });
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double p = std::clamp(probs->data[i], clamp, 1.0 - clamp);
    total += -(*lbl)[i] * std::log(p) - (1.0 - (*lbl)[i]) * std::log(1.0 - p);
  }
  loss->data[0] = total / static_cast<double>(batch);
  return loss;
}

}  // namespace delaycast

#endif  // DELAYCAST_LOSSES_HPP
