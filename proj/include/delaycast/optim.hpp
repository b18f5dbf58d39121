#ifndef DELAYCAST_OPTIM_HPP
#define DELAYCAST_OPTIM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "delaycast/errors.hpp"
#include "delaycast/tensor.hpp"

namespace delaycast {

// Linear warmup to base_lr at step == warmup_steps, then linear decay to 0
// at step == total_steps. Continuous and clamped outside [0, total_steps].
struct LrSchedule {
  double base_lr = 1e-3;
  long warmup_steps = 0;
  long total_steps = 1;

  double at(long step) const {
    double mult;
    if (warmup_steps > 0 && step < warmup_steps) {
      mult = static_cast<double>(step) / static_cast<double>(warmup_steps);
    } else if (total_steps <= warmup_steps) {
      mult = 1.0;
    } else {
      mult = static_cast<double>(total_steps - step) /
             static_cast<double>(total_steps - warmup_steps);
    }
    return base_lr * std::clamp(mult, 0.0, 1.0);
  }
};

struct OptimizerState {
  std::vector<std::vector<double>> m;  // first moments, parallel to params
  std::vector<std::vector<double>> v;  // second moments
  long step = 0;
  LrSchedule schedule;
  double weight_decay = 0.0;
  std::optional<double> clip_norm;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline OptimizerState make_optimizer(std::span<const TensorPtr> params,
                                     LrSchedule schedule, double weight_decay,
                                     std::optional<double> clip_norm) {
  OptimizerState s;
  s.schedule = schedule;
  s.weight_decay = weight_decay;
  s.clip_norm = clip_norm;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& p : params) {
    s.m.emplace_back(p->size(), 0.0);
    s.v.emplace_back(p->size(), 0.0);
  }
  return s;
}

// Rescales gradients in place so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(std::span<const TensorPtr> params,
                               double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p->grad.size() != p->size()) continue;
    for (double g : p->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const auto& p : params) {
      if (p->grad.size() != p->size()) continue;
      for (double& g : p->grad) g *= scale;
    }
  }
  return norm;
}

// One decoupled-weight-decay Adam update over all listed parameters. The
// learning rate is read from the schedule at the current step counter, so
// the very first update under warmup moves nothing.
inline void adamw_step(std::span<const TensorPtr> params, OptimizerState& s) {
  if (params.size() != s.m.size())
    throw RuntimeFailure("adamw_step: optimizer state does not match params");

  if (s.clip_norm) clip_global_norm(params, *s.clip_norm);

  const double lr = s.schedule.at(s.step);
  const auto t = static_cast<double>(s.step + 1);
  const double bc1 = 1.0 - std::pow(s.beta1, t);
  const double bc2 = 1.0 - std::pow(s.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    if (p.grad.size() != p.size())
      throw RuntimeFailure("adamw_step: parameter has no gradient");
    auto& m = s.m[k];
    auto& v = s.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.data[i] -= lr * (mhat / (std::sqrt(vhat) + s.eps) +
                         s.weight_decay * p.data[i]);
    }
  }
  ++s.step;
}

}  // namespace delaycast

#endif  // DELAYCAST_OPTIM_HPP
