#ifndef DELAYCAST_CONFORMAL_HPP
#define DELAYCAST_CONFORMAL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "delaycast/errors.hpp"
#include "delaycast/model.hpp"

namespace delaycast {

// Interval violation: positive when y falls outside [lower, upper], negative
// margin when covered.
inline double conformity_score(double y, double lower, double upper) {
  return std::max(lower - y, y - upper);
}

struct CalibrationResult {
  double alpha = 0.2;
  double q_hat_delayed = 0.0;
  double q_hat_ontime = 0.0;
  std::size_t n_delayed = 0;
  std::size_t n_ontime = 0;
};

namespace detail {

// Finite-sample quantile of conformity scores: the ceil((1-alpha)(n+1))-th
// smallest, clamped to the maximum when the rank exceeds n.
inline double conformal_quantile(std::vector<double> scores, double alpha) {
  const auto n = scores.size();
  auto rank = static_cast<std::size_t>(
      std::ceil((1.0 - alpha) * static_cast<double>(n + 1)));
  if (rank > n) rank = n;
  if (rank < 1) rank = 1;
  std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   scores.end());
  return scores[rank - 1];
}

}  // namespace detail

// Per-head calibration from precomputed conformity scores.
inline CalibrationResult calibrate_from_scores(std::vector<double> delayed_scores,
                                               std::vector<double> ontime_scores,
                                               double alpha) {
  if (alpha <= 0.0 || alpha >= 1.0)
    throw ConfigError("conformal.alpha must be in (0, 1)");
  if (delayed_scores.empty())
    throw CalibrationError("calibration subset 'delayed' is empty");
  if (ontime_scores.empty())
    throw CalibrationError("calibration subset 'ontime' is empty");
  CalibrationResult result;
  result.alpha = alpha;
  result.n_delayed = delayed_scores.size();
  result.n_ontime = ontime_scores.size();
  result.q_hat_delayed = detail::conformal_quantile(std::move(delayed_scores), alpha);
  result.q_hat_ontime = detail::conformal_quantile(std::move(ontime_scores), alpha);
  return result;
}

// Split-conformal calibration with one correction per regression head. The
// calibration set is partitioned by ground-truth label and each subset is
// scored against its own head's (sorted) quantile interval.
inline CalibrationResult calibrate(const Model& model,
                                   const EncodedDataset& calib, double alpha) {
  std::vector<double> delayed_scores, ontime_scores;
  constexpr std::size_t kChunk = 4096;
  for (std::size_t start = 0; start < calib.n; start += kChunk) {
    const std::size_t stop = std::min(calib.n, start + kChunk);
    Batch batch{&calib, {}};
    batch.idx.resize(stop - start);
    std::iota(batch.idx.begin(), batch.idx.end(), start);
    const auto out = forward(model, batch, Mode::kInfer);
    for (std::size_t i = 0; i < batch.idx.size(); ++i) {
      const std::size_t row = batch.idx[i];
      const bool is_delayed = calib.d[row] != 0.0;
      const auto& q = is_delayed ? out.delayed_q : out.ontime_q;
      const auto sorted = sort_quantiles(
          {q->data[i * 3 + 0], q->data[i * 3 + 1], q->data[i * 3 + 2]});
      const double score = conformity_score(calib.y[row], sorted[0], sorted[2]);
      (is_delayed ? delayed_scores : ontime_scores).push_back(score);
    }
  }
  return calibrate_from_scores(std::move(delayed_scores),
                               std::move(ontime_scores), alpha);
}

struct CalibratedInterval {
  double low = 0.0;
  double high = 0.0;
  bool collapsed = false;  // strongly negative correction inverted the bounds
};

// Widens (or shrinks) the sorted raw interval by the correction of the head
// the classifier picked. An inverted result collapses to its midpoint.
inline CalibratedInterval calibrated_interval(const std::array<double, 3>& sorted_q,
                                              double delay_prob,
                                              const CalibrationResult& calib) {
  const double q_hat =
      delay_prob > 0.5 ? calib.q_hat_delayed : calib.q_hat_ontime;
  CalibratedInterval out;
  out.low = sorted_q[0] - q_hat;
  out.high = sorted_q[2] + q_hat;
  if (out.high < out.low) {
    const double mid = 0.5 * (out.low + out.high);
    out.low = out.high = mid;
    out.collapsed = true;
  }
  return out;
}

}  // namespace delaycast

#endif  // DELAYCAST_CONFORMAL_HPP
