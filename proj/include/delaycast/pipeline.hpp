#ifndef DELAYCAST_PIPELINE_HPP
#define DELAYCAST_PIPELINE_HPP

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "delaycast/checkpoint.hpp"
#include "delaycast/config.hpp"
#include "delaycast/conformal.hpp"
#include "delaycast/csv_io.hpp"
#include "delaycast/evaluation.hpp"
#include "delaycast/model.hpp"
#include "delaycast/synthgen.hpp"
#include "delaycast/training.hpp"

namespace delaycast {

struct GenDataResult {
  std::filesystem::path csv_path;
  std::size_t rows_written = 0;
  double realized_delay_rate = 0.0;
};

// gen-data: synthesize a shipment CSV plus a .meta.json sidecar carrying the
// resolved config (the CSV itself stays exactly header + data rows).
inline GenDataResult run_gen_data(const RunConfig& cfg) {
  cfg.validate();
  GeneratorConfig gen = cfg.generator;
  gen.shuffle_time = cfg.data.shuffle_time;
  const auto generated = generate(gen);

  const auto csv_path = cfg.resolve(cfg.data.csv_path);
  if (csv_path.has_parent_path())
    std::filesystem::create_directories(csv_path.parent_path());
  const auto rows = emit_csv(generated.data, csv_path);

  nlohmann::json meta;
  meta["config"] = cfg.to_json();
  meta["rows"] = rows;
  meta["realized_delay_rate"] = generated.realized_delay_rate;
  meta["gate_intercept"] = generated.gate_intercept;
  std::ofstream sidecar(csv_path.string() + ".meta.json", std::ios::binary);
  if (!sidecar)
    throw RuntimeFailure("cannot write sidecar for " + csv_path.string());
  sidecar << meta.dump(2) << '\n';

  return {csv_path, rows, generated.realized_delay_rate};
}

struct LoadedSplits {
  SplitResult splits;
  std::size_t skipped_rows = 0;
};

inline LoadedSplits load_and_split(const RunConfig& cfg) {
  const auto ingest = ingest_csv(cfg.resolve(cfg.data.csv_path),
                                 cfg.data.columns, /*require_actual=*/true);
  LoadedSplits out;
  out.skipped_rows = ingest.skipped;
  out.splits = chronological_split(ingest.data, cfg.data.split_ratios);
  return out;
}

struct TrainOutcome {
  TrainHistory history;
  std::filesystem::path checkpoint_path;
  std::filesystem::path history_path;
  FeatureSchema schema;
};

// train: ingest -> chronological split -> fit schema on train -> two-stage
// training -> checkpoint + per-epoch history.
inline TrainOutcome run_train(const RunConfig& cfg) {
  cfg.validate();
  auto loaded = load_and_split(cfg);
  auto& splits = loaded.splits;
  if (splits.train.size() == 0 || splits.val.size() == 0)
    throw RuntimeFailure("train/val splits are empty; dataset too small for the ratios");

  const auto schema = fit_schema(splits.train);
  for (const auto& w : schema.warnings) std::cerr << "warning: " << w << '\n';
  const auto train = encode_dataset(splits.train, schema);
  const auto val = encode_dataset(splits.val, schema);

  Rng init_rng(derive_seed(cfg.training.seed, 0));
  Model model = build_model(cfg.architecture, schema, init_rng);

  TrainHistory history;
  history.stage1 = train_stage1(model, train, val, cfg.training);
  if (cfg.training.max_epochs_stage2 > 0)
    history.stage2 = train_stage2(model, train, val, cfg.training);

  const auto echo = cfg.to_json();
  const auto history_path = cfg.resolve(cfg.output.history_path);
  write_history_csv(history_path, history, echo.dump());

  // Persist the optimizer state of the final stage, name-aligned to the
  // full parameter list; parameters outside that stage carry zero moments.
  const auto named = model.named_params();
  const bool stage2_ran = cfg.training.max_epochs_stage2 > 0;
  const auto& last = stage2_ran ? history.stage2 : history.stage1;
  OptimizerState aligned;
  aligned.step = last.optimizer_steps;
  aligned.schedule = last.final_schedule;
  aligned.weight_decay = cfg.training.weight_decay;
  aligned.clip_norm = cfg.training.clip_norm;
  std::size_t cursor = 0;
  for (const auto& p : named) {
    const bool in_stage = !stage2_ran || p.regression_head;
    if (in_stage && cursor < last.final_moments_m.size()) {
      aligned.m.push_back(last.final_moments_m[cursor]);
      aligned.v.push_back(last.final_moments_v[cursor]);
      ++cursor;
    } else {
      aligned.m.emplace_back(p.tensor->size(), 0.0);
      aligned.v.emplace_back(p.tensor->size(), 0.0);
    }
  }

  const auto checkpoint_path = cfg.resolve(cfg.output.checkpoint_path);
  save_checkpoint(checkpoint_path, model, schema, aligned, last.final_rng_state,
                  echo);
  return {history, checkpoint_path, history_path, schema};
}

// calibrate: per-head split-conformal corrections on the calibration split,
// written as a sidecar next to the checkpoint.
inline CalibrationResult run_calibrate(const RunConfig& cfg) {
  cfg.validate();
  auto ckpt = load_checkpoint(cfg.resolve(cfg.output.checkpoint_path));
  auto loaded = load_and_split(cfg);
  if (loaded.splits.calib.size() == 0)
    throw RuntimeFailure("calibration split is empty");
  const auto calib_data = encode_dataset(loaded.splits.calib, ckpt.schema);
  const auto result = calibrate(ckpt.model, calib_data, cfg.alpha);
  save_calibration(cfg.calibration_path(), result, ckpt.schema.hash(),
                   cfg.to_json());
  return result;
}

inline std::optional<CalibrationResult> try_load_calibration(
    const RunConfig& cfg, std::uint64_t expected_schema_hash) {
  const auto path = cfg.calibration_path();
  if (!std::filesystem::exists(path)) return std::nullopt;
  auto [calib, schema_hash] = load_calibration(path);
  if (schema_hash != expected_schema_hash)
    throw RuntimeFailure("calibration sidecar was built against a different "
                         "schema; re-run calibrate");
  if (calib.alpha != cfg.alpha)
    std::cerr << "warning: calibration alpha " << calib.alpha
              << " differs from configured alpha " << cfg.alpha << '\n';
  return calib;
}

// evaluate: full metric table on the test split; pre-calibration rows are
// always present, post rows fill in when a calibration sidecar exists.
inline FullReport run_evaluate(const RunConfig& cfg, bool quiet = false) {
  cfg.validate();
  auto ckpt = load_checkpoint(cfg.resolve(cfg.output.checkpoint_path));
  const auto calib = try_load_calibration(cfg, ckpt.schema.hash());
  auto loaded = load_and_split(cfg);
  if (loaded.splits.test.size() == 0)
    throw RuntimeFailure("test split is empty");
  const auto test = encode_dataset(loaded.splits.test, ckpt.schema);

  const auto report = full_report(ckpt.model, calib, test, cfg.alpha);
  const auto echo = cfg.to_json().dump();
  write_report_csv(cfg.resolve(cfg.output.report_path), report, echo);
  if (!cfg.output.report_json_path.empty())
    write_report_json(cfg.resolve(cfg.output.report_json_path), report, echo);
  if (!quiet) print_report(std::cout, report);
  return report;
}

// predict: one output row per input row. Quantile columns are the routed
// head's sorted (uncalibrated) estimates; calibrated bounds fall back to the
// raw interval when no calibration sidecar exists.
inline std::size_t run_predict(const RunConfig& cfg,
                               const std::filesystem::path& input_csv,
                               std::optional<std::filesystem::path> output_path =
                                   std::nullopt) {
  cfg.validate();
  auto ckpt = load_checkpoint(cfg.resolve(cfg.output.checkpoint_path));
  const auto calib = try_load_calibration(cfg, ckpt.schema.hash());

  const auto ingest = ingest_csv(input_csv, cfg.data.columns,
                                 /*require_actual=*/false);
  const auto data = encode_dataset(ingest.data, ckpt.schema,
                                   /*require_labels=*/false);
  if (data.n == 0) throw RuntimeFailure("no usable rows in " + input_csv.string());

  const auto out_path = output_path ? *output_path
                                    : cfg.resolve(cfg.output.prediction_path);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write predictions: " + out_path.string());
  out << "# config: " << cfg.to_json().dump() << '\n';
  out << "delay_probability,predicted_is_delayed,q10,q50,q90,"
         "calibrated_low,calibrated_high,routed_head\n";

  constexpr std::size_t kChunk = 4096;
  for (std::size_t start = 0; start < data.n; start += kChunk) {
    const std::size_t stop = std::min(data.n, start + kChunk);
    Batch batch{&data, {}};
    batch.idx.resize(stop - start);
    std::iota(batch.idx.begin(), batch.idx.end(), start);
    const auto fwd = forward(ckpt.model, batch, Mode::kInfer);
    for (std::size_t i = 0; i < batch.idx.size(); ++i) {
      const auto sorted = sort_quantiles(fwd.routed_quantiles[i]);
      double low = sorted[0], high = sorted[2];
      if (calib) {
        const auto ci = calibrated_interval(sorted, fwd.delay_prob[i], *calib);
        low = ci.low;
        high = ci.high;
      }
      out << detail::format_double(fwd.delay_prob[i]) << ','
          << fwd.routed_head[i] << ',' << detail::format_double(sorted[0])
          << ',' << detail::format_double(sorted[1]) << ','
          << detail::format_double(sorted[2]) << ','
          << detail::format_double(low) << ',' << detail::format_double(high)
          << ',' << fwd.routed_head[i] << '\n';
    }
  }
  if (!out) throw RuntimeFailure("write failed: " + out_path.string());
  return data.n;
}

}  // namespace delaycast

#endif  // DELAYCAST_PIPELINE_HPP
