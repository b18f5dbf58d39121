#ifndef DELAYCAST_CONFIG_HPP
#define DELAYCAST_CONFIG_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "delaycast/checkpoint.hpp"
#include "delaycast/data.hpp"
#include "delaycast/errors.hpp"
#include "delaycast/model.hpp"
#include "delaycast/synthgen.hpp"
#include "delaycast/training.hpp"

namespace delaycast {

struct DataConfig {
  std::string csv_path = "shipments.csv";
  DatasetColumns columns;
  std::array<double, 4> split_ratios{0.7, 0.1, 0.1, 0.1};
  bool shuffle_time = false;
};

struct OutputConfig {
  std::string checkpoint_path = "model.dcaf";
  std::string calibration_path;  // empty -> checkpoint_path + ".calib"
  std::string report_path = "report.csv";
  std::string report_json_path = "report.json";
  std::string history_path = "history.csv";
  std::string prediction_path = "predictions.csv";
};

// One sectioned config file drives every subcommand. Validation enforces the
// supported hyperparameter ranges; --allow-out-of-range lifts the range
// checks (never the structural ones).
struct RunConfig {
  DataConfig data;
  GeneratorConfig generator;
  ArchitectureConfig architecture;
  TrainConfig training;
  double alpha = 0.2;
  OutputConfig output;

  bool allow_out_of_range = false;          // CLI flag, not a config key
  std::filesystem::path base_dir = ".";     // config file directory

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  std::filesystem::path calibration_path() const {
    return output.calibration_path.empty()
               ? std::filesystem::path(resolve(output.checkpoint_path).string() +
                                       ".calib")
               : resolve(output.calibration_path);
  }

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::filesystem::path& path);
};

namespace detail {

template <typename T>
T get_or(const nlohmann::json& doc, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

inline void check_in(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + " " + what +
                             " (pass --allow-out-of-range to override)");
}

}  // namespace detail

inline void RunConfig::validate() const {
  if (alpha <= 0.0 || alpha >= 1.0)
    throw ConfigError("conformal.alpha must be in (0, 1)");
  double ratio_sum = 0.0;
  for (double r : data.split_ratios) {
    if (r < 0.0) throw ConfigError("data.split_ratios must be non-negative");
    ratio_sum += r;
  }
  if (std::abs(ratio_sum - 1.0) > 1e-9)
    throw ConfigError("data.split_ratios must sum to 1");
  if (data.columns.categorical.empty() && data.columns.numerical.empty())
    throw ConfigError("data.column_map must name at least one feature column");

  architecture.validate();
  training.validate();
  generator.validate();

  if (allow_out_of_range) return;

  // Supported hyperparameter ranges for the multitask model.
  detail::check_in(architecture.n_blocks >= 2 && architecture.n_blocks <= 12,
                   "architecture.n_blocks", "must be in [2, 12]");
  const std::array<int, 5> widths{128, 192, 256, 320, 384};
  detail::check_in(std::find(widths.begin(), widths.end(),
                             architecture.d_hidden) != widths.end(),
                   "architecture.d_hidden",
                   "must be one of {128, 192, 256, 320, 384}");
  detail::check_in(architecture.dropout <= 0.5, "architecture.dropout",
                   "must be in [0, 0.5]");
  detail::check_in(training.weight_decay >= 1e-6 && training.weight_decay <= 3e-3,
                   "training.weight_decay", "must be in [1e-6, 3e-3]");
  detail::check_in(!training.clip_norm || *training.clip_norm == 1.0 ||
                       *training.clip_norm == 5.0,
                   "training.clip_norm", "must be null, 1.0 or 5.0");
  const std::array<int, 4> batches{256, 512, 1024, 2048};
  detail::check_in(std::find(batches.begin(), batches.end(),
                             training.batch_size) != batches.end(),
                   "training.batch_size",
                   "must be one of {256, 512, 1024, 2048}");
  detail::check_in(training.base_lr >= 1e-4 && training.base_lr <= 1e-2,
                   "training.base_lr", "must be in [1e-4, 1e-2]");
}

inline RunConfig RunConfig::from_json(const nlohmann::json& doc) {
  RunConfig cfg;
  using detail::get_or;

  if (doc.contains("data")) {
    const auto& d = doc.at("data");
    cfg.data.csv_path = get_or<std::string>(d, "csv_path", cfg.data.csv_path);
    cfg.data.shuffle_time = get_or<bool>(d, "shuffle_time", cfg.data.shuffle_time);
    if (d.contains("split_ratios")) {
      const auto r = d.at("split_ratios").get<std::vector<double>>();
      if (r.size() != 4)
        throw ConfigError("data.split_ratios must list four fractions");
      std::copy(r.begin(), r.end(), cfg.data.split_ratios.begin());
    }
    if (d.contains("column_map")) {
      const auto& m = d.at("column_map");
      cfg.data.columns.categorical =
          get_or<std::vector<std::string>>(m, "categorical", {});
      cfg.data.columns.numerical =
          get_or<std::vector<std::string>>(m, "numerical", {});
      cfg.data.columns.planned_arrival =
          get_or<std::string>(m, "planned_arrival", "planned_arrival");
      cfg.data.columns.actual_arrival =
          get_or<std::string>(m, "actual_arrival", "actual_arrival");
    }
  }

  if (doc.contains("generator")) {
    const auto& g = doc.at("generator");
    auto& gen = cfg.generator;
    gen.n_records = get_or<std::size_t>(g, "n_records", gen.n_records);
    gen.delay_rate_target = get_or<double>(g, "delay_rate_target", gen.delay_rate_target);
    gen.n_destinations = get_or<int>(g, "n_destinations", gen.n_destinations);
    gen.n_carriers = get_or<int>(g, "n_carriers", gen.n_carriers);
    gen.n_shipment_types = get_or<int>(g, "n_shipment_types", gen.n_shipment_types);
    gen.n_countries = get_or<int>(g, "n_countries", gen.n_countries);
    gen.seed = get_or<std::uint64_t>(g, "seed", gen.seed);
    gen.delay_scale = get_or<double>(g, "delay_scale", gen.delay_scale);
    gen.ontime_spread = get_or<double>(g, "ontime_spread", gen.ontime_spread);
    gen.time_drift = get_or<double>(g, "time_drift", gen.time_drift);
  }
  cfg.generator.shuffle_time = cfg.data.shuffle_time;

  if (doc.contains("architecture")) {
    const auto& a = doc.at("architecture");
    auto& arch = cfg.architecture;
    arch.n_blocks = get_or<int>(a, "n_blocks", arch.n_blocks);
    arch.d_hidden = get_or<int>(a, "d_hidden", arch.d_hidden);
    arch.dropout = get_or<double>(a, "dropout", arch.dropout);
    arch.d_cat_max = get_or<int>(a, "d_cat_max", arch.d_cat_max);
    arch.plr_frequencies = get_or<int>(a, "plr_frequencies", arch.plr_frequencies);
    arch.d_num = get_or<int>(a, "d_num", arch.d_num);
    arch.head_hidden = get_or<int>(a, "head_hidden", arch.head_hidden);
    arch.plr_sigma = get_or<double>(a, "plr_sigma", arch.plr_sigma);
  }

  if (doc.contains("training")) {
    const auto& t = doc.at("training");
    auto& tr = cfg.training;
    tr.batch_size = get_or<int>(t, "batch_size", tr.batch_size);
    tr.max_epochs_stage1 = get_or<int>(t, "max_epochs_stage1", tr.max_epochs_stage1);
    tr.max_epochs_stage2 = get_or<int>(t, "max_epochs_stage2", tr.max_epochs_stage2);
    tr.patience = get_or<int>(t, "patience", tr.patience);
    tr.min_delta = get_or<double>(t, "min_delta", tr.min_delta);
    tr.base_lr = get_or<double>(t, "base_lr", tr.base_lr);
    tr.weight_decay = get_or<double>(t, "weight_decay", tr.weight_decay);
    if (t.contains("clip_norm")) {
      if (t.at("clip_norm").is_null()) tr.clip_norm.reset();
      else tr.clip_norm = t.at("clip_norm").get<double>();
    }
    tr.warmup_fraction = get_or<double>(t, "warmup_fraction", tr.warmup_fraction);
    tr.seed = get_or<std::uint64_t>(t, "seed", tr.seed);
  }

  if (doc.contains("conformal"))
    cfg.alpha = get_or<double>(doc.at("conformal"), "alpha", cfg.alpha);

  if (doc.contains("output")) {
    const auto& o = doc.at("output");
    auto& out = cfg.output;
    out.checkpoint_path = get_or<std::string>(o, "checkpoint_path", out.checkpoint_path);
    out.calibration_path = get_or<std::string>(o, "calibration_path", out.calibration_path);
    out.report_path = get_or<std::string>(o, "report_path", out.report_path);
    out.report_json_path = get_or<std::string>(o, "report_json_path", out.report_json_path);
    out.history_path = get_or<std::string>(o, "history_path", out.history_path);
    out.prediction_path = get_or<std::string>(o, "prediction_path", out.prediction_path);
  }
  return cfg;
}

// Fully resolved echo, defaults included; embedded in output artifacts.
inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json doc;
  doc["data"] = {{"csv_path", data.csv_path},
                 {"shuffle_time", data.shuffle_time},
                 {"split_ratios", data.split_ratios},
                 {"column_map",
                  {{"categorical", data.columns.categorical},
                   {"numerical", data.columns.numerical},
                   {"planned_arrival", data.columns.planned_arrival},
                   {"actual_arrival", data.columns.actual_arrival}}}};
  doc["generator"] = {{"n_records", generator.n_records},
                      {"delay_rate_target", generator.delay_rate_target},
                      {"n_destinations", generator.n_destinations},
                      {"n_carriers", generator.n_carriers},
                      {"n_shipment_types", generator.n_shipment_types},
                      {"n_countries", generator.n_countries},
                      {"seed", generator.seed},
                      {"delay_scale", generator.delay_scale},
                      {"ontime_spread", generator.ontime_spread},
                      {"time_drift", generator.time_drift}};
  doc["architecture"] = architecture_to_json(architecture);
  doc["training"] = {{"batch_size", training.batch_size},
                     {"max_epochs_stage1", training.max_epochs_stage1},
                     {"max_epochs_stage2", training.max_epochs_stage2},
                     {"patience", training.patience},
                     {"min_delta", training.min_delta},
                     {"base_lr", training.base_lr},
                     {"weight_decay", training.weight_decay},
                     {"clip_norm", training.clip_norm
                                       ? nlohmann::json(*training.clip_norm)
                                       : nlohmann::json(nullptr)},
                     {"warmup_fraction", training.warmup_fraction},
                     {"seed", training.seed}};
  doc["conformal"] = {{"alpha", alpha}};
  doc["output"] = {{"checkpoint_path", output.checkpoint_path},
                   {"calibration_path", output.calibration_path},
                   {"report_path", output.report_path},
                   {"report_json_path", output.report_json_path},
                   {"history_path", output.history_path},
                   {"prediction_path", output.prediction_path}};
  return doc;
}

inline RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw MissingArtifactError("config file not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open config: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  auto cfg = from_json(doc);
  cfg.base_dir = path.has_parent_path() ? path.parent_path()
                                        : std::filesystem::path(".");
  return cfg;
}

}  // namespace delaycast

#endif  // DELAYCAST_CONFIG_HPP
