#ifndef DELAYCAST_SYNTHGEN_HPP
#define DELAYCAST_SYNTHGEN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "delaycast/data.hpp"
#include "delaycast/dates.hpp"
#include "delaycast/errors.hpp"
#include "delaycast/rng.hpp"

namespace delaycast {

// Synthetic shipment stream with a zero-inflated delay structure: a logistic
// gate decides delayed vs on-time from a latent risk score over the drawn
// features, delayed records get a heavy-tailed positive duration, on-time
// records cluster near zero. The gate intercept is solved by bisection so
// the realized delay rate tracks delay_rate_target.
struct GeneratorConfig {
  std::size_t n_records = 10000;
  double delay_rate_target = 0.10;
  int n_destinations = 200;
  int n_carriers = 20;
  int n_shipment_types = 12;
  int n_countries = 15;
  std::uint64_t seed = 1;
  double delay_scale = 2.0;    // mean excess delay for delayed shipments, days
  double ontime_spread = 1.0;  // spread of the on-time mass, days
  bool shuffle_time = false;   // true: drop temporal drift -> i.i.d. in time
  double time_drift = 0.0;     // logit drift from first to last record

  void validate() const {
    if (n_records == 0) throw ConfigError("generator.n_records must be positive");
    if (delay_rate_target < 0.01 || delay_rate_target > 0.5)
      throw ConfigError("generator.delay_rate_target must be in [0.01, 0.5]");
    if (n_destinations < 2 || n_carriers < 2 || n_shipment_types < 2 ||
        n_countries < 2)
      throw ConfigError("generator cardinalities must all be >= 2");
    if (delay_scale <= 0.0) throw ConfigError("generator.delay_scale must be positive");
    if (ontime_spread <= 0.0) throw ConfigError("generator.ontime_spread must be positive");
  }
};

struct GeneratedData {
  Dataset data;
  double realized_delay_rate = 0.0;
  double gate_intercept = 0.0;
};

namespace detail {

// Zipf-like category sampler: cumulative weights 1/(rank+1)^s.
class ZipfSampler {
 public:
  ZipfSampler(int cardinality, double exponent = 1.1) : cum_(cardinality) {
    double total = 0.0;
    for (int j = 0; j < cardinality; ++j) {
      total += 1.0 / std::pow(static_cast<double>(j + 1), exponent);
      cum_[j] = total;
    }
    for (auto& c : cum_) c /= total;
  }

  int sample(Rng& rng) const {
    const double u = rng.uniform01();
    const auto it = std::lower_bound(cum_.begin(), cum_.end(), u);
    return static_cast<int>(it == cum_.end() ? cum_.size() - 1
                                             : it - cum_.begin());
  }

 private:
  std::vector<double> cum_;
};

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace detail

inline GeneratedData generate(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0));

  // Fixed per-category effects; these make the delay signal learnable.
  auto draw_effects = [&rng](int n) {
    std::vector<double> e(n);
    for (auto& v : e) v = rng.normal();
    return e;
  };
  const auto dest_eff = draw_effects(cfg.n_destinations);
  const auto carrier_eff = draw_effects(cfg.n_carriers);
  const auto type_eff = draw_effects(cfg.n_shipment_types);
  const auto country_eff = draw_effects(cfg.n_countries);

  // Destination attributes shared by all shipments to that destination.
  std::vector<double> dest_lat(cfg.n_destinations), dest_lon(cfg.n_destinations),
      dest_dist(cfg.n_destinations);
  for (int j = 0; j < cfg.n_destinations; ++j) {
    dest_lat[j] = rng.uniform(-55.0, 70.0);
    dest_lon[j] = rng.uniform(-180.0, 180.0);
    dest_dist[j] = std::clamp(rng.lognormal(6.2, 0.9), 20.0, 19000.0);
  }

  const detail::ZipfSampler dest_sampler(cfg.n_destinations);
  const detail::ZipfSampler carrier_sampler(cfg.n_carriers);
  const detail::ZipfSampler type_sampler(cfg.n_shipment_types);
  const detail::ZipfSampler country_sampler(cfg.n_countries);

  const auto n = cfg.n_records;
  std::vector<int> dest(n), carrier(n), stype(n), country(n), dangerous(n);
  std::vector<double> weight(n), volume(n), items(n), lat(n), lon(n), dist(n);
  std::vector<double> risk(n);

  for (std::size_t i = 0; i < n; ++i) {
    dest[i] = dest_sampler.sample(rng);
    carrier[i] = carrier_sampler.sample(rng);
    stype[i] = type_sampler.sample(rng);
    country[i] = country_sampler.sample(rng);
    dangerous[i] = rng.bernoulli(0.08) ? 1 : 0;
    weight[i] = rng.lognormal(3.0, 1.0);
    volume[i] = rng.lognormal(-1.0, 0.8);
    items[i] = std::floor(rng.lognormal(1.1, 0.7)) + 1.0;
    lat[i] = dest_lat[dest[i]];
    lon[i] = dest_lon[dest[i]];
    dist[i] = dest_dist[dest[i]] * rng.uniform(0.95, 1.05);

    const double wnorm = std::log(weight[i]) - 3.0;
    const double dnorm = (std::log(dist[i]) - 6.2) / 0.9;
    risk[i] = 0.9 * dest_eff[dest[i]] + 0.7 * carrier_eff[carrier[i]] +
              0.5 * type_eff[stype[i]] + 0.5 * country_eff[country[i]] +
              0.35 * wnorm + 0.45 * dnorm +
              0.30 * carrier_eff[carrier[i]] * dnorm +
              0.25 * dangerous[i] * wnorm;
  }

  std::vector<double> drift(n, 0.0);
  if (!cfg.shuffle_time && cfg.time_drift != 0.0 && n > 1)
    for (std::size_t i = 0; i < n; ++i)
      drift[i] = cfg.time_drift *
                 (2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0);

  // Solve the gate intercept so the mean delay probability hits the target.
  auto mean_rate = [&](double c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += detail::logistic(risk[i] + drift[i] + c);
    return acc / static_cast<double>(n);
  };
  double lo = -40.0, hi = 40.0;
  if (mean_rate(lo) > cfg.delay_rate_target || mean_rate(hi) < cfg.delay_rate_target)
    throw ConfigError("generator: intercept bisection fails to bracket the target rate");
  for (int iter = 0; iter < 100; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mean_rate(mid) < cfg.delay_rate_target) lo = mid;
    else hi = mid;
  }
  const double intercept = 0.5 * (lo + hi);

  GeneratedData out;
  out.gate_intercept = intercept;
  out.data.columns.categorical = {"destination_id", "carrier_id", "shipment_type",
                                  "destination_country", "dangerous_goods"};
  out.data.columns.numerical = {"weight_kg", "volume_m3", "item_count",
                                "destination_latitude", "destination_longitude",
                                "distance_km"};
  out.data.columns.planned_arrival = "planned_arrival";
  out.data.columns.actual_arrival = "actual_arrival";
  out.data.split_tag = SplitTag::unsplit;
  out.data.records.reserve(n);
  out.data.labels.reserve(n);

  const std::int64_t base_day = days_from_civil(2022, 9, 1);
  std::size_t delayed_count = 0;

  for (std::size_t i = 0; i < n; ++i) {
    const double p = detail::logistic(risk[i] + drift[i] + intercept);
    const bool is_delayed = rng.bernoulli(p);

    double latent;
    if (is_delayed) {
      const double severity = 0.4 + 0.6 * detail::logistic(risk[i]);
      latent = 1.0 + cfg.delay_scale * severity * rng.lognormal(0.0, 0.55);
    } else {
      const double low = -2.0 * cfg.ontime_spread, high = 1.0;
      latent = rng.normal(0.3, 0.4 * cfg.ontime_spread);
      for (int attempt = 0; attempt < 100 && (latent <= low || latent >= high);
           ++attempt)
        latent = rng.normal(0.3, 0.4 * cfg.ontime_spread);
      latent = std::clamp(latent, std::nextafter(low, high),
                          std::nextafter(high, low));
    }
    // Arrival dates live on a day grid, so the stored delay is the floored
    // latent duration; flooring keeps delayed >= 1 and on-time < 1.
    const auto delay_days = static_cast<std::int64_t>(std::floor(latent));

    const std::int64_t planned =
        base_day + static_cast<std::int64_t>((i * 365) / n);
    ShipmentRecord rec;
    rec.categorical_values = {"D" + std::to_string(dest[i]),
                              "C" + std::to_string(carrier[i]),
                              "T" + std::to_string(stype[i]),
                              "K" + std::to_string(country[i]),
                              std::to_string(dangerous[i])};
    rec.numerical_values = {weight[i], volume[i], items[i], lat[i], lon[i], dist[i]};
    rec.planned_arrival = static_cast<double>(planned);
    rec.actual_arrival = static_cast<double>(planned + delay_days);
    out.data.records.push_back(std::move(rec));
    out.data.labels.emplace_back(
        DelayLabel{static_cast<double>(delay_days), delay_days >= 1 ? 1 : 0});
    delayed_count += delay_days >= 1 ? 1 : 0;
  }

  out.realized_delay_rate =
      static_cast<double>(delayed_count) / static_cast<double>(n);
  return out;
}

}  // namespace delaycast

#endif  // DELAYCAST_SYNTHGEN_HPP
