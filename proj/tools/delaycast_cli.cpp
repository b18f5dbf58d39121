// delaycast command line: gen-data | train | calibrate | evaluate | predict.
// One JSON config file drives every subcommand; --seed overrides both the
// generator and training seeds. Exit codes: 0 ok, 1 config error, 2 missing
// artifact, 3 runtime failure.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "delaycast/delaycast.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool allow_out_of_range = false;
  std::string predict_input;
  std::string predict_output;
};

delaycast::RunConfig load_config(const CliOptions& opts) {
  auto cfg = delaycast::RunConfig::load(opts.config_path);
  cfg.allow_out_of_range = opts.allow_out_of_range;
  if (opts.seed) {
    cfg.training.seed = *opts.seed;
    cfg.generator.seed = *opts.seed;
  }
  return cfg;
}

int dispatch(const std::string& command, const CliOptions& opts) {
  const auto cfg = load_config(opts);
  if (command == "gen-data") {
    const auto result = delaycast::run_gen_data(cfg);
    std::cout << "wrote " << result.rows_written << " rows to "
              << result.csv_path.string() << " (realized delay rate "
              << result.realized_delay_rate << ")\n";
  } else if (command == "train") {
    const auto result = delaycast::run_train(cfg);
    const auto& s1 = result.history.stage1;
    const auto& s2 = result.history.stage2;
    std::cout << "stage 1: " << s1.epochs.size() << " epochs, best val loss "
              << s1.best_val_metric << " at epoch " << s1.best_epoch << '\n';
    if (!s2.epochs.empty())
      std::cout << "stage 2: " << s2.epochs.size()
                << " epochs, best val loss " << s2.best_val_metric
                << " at epoch " << s2.best_epoch << '\n';
    std::cout << "checkpoint: " << result.checkpoint_path.string() << '\n'
              << "history: " << result.history_path.string() << '\n';
  } else if (command == "calibrate") {
    const auto result = delaycast::run_calibrate(cfg);
    std::cout << "calibrated at alpha " << result.alpha << ": q_hat(delayed) "
              << result.q_hat_delayed << " over " << result.n_delayed
              << " rows, q_hat(ontime) " << result.q_hat_ontime << " over "
              << result.n_ontime << " rows\n";
  } else if (command == "evaluate") {
    delaycast::run_evaluate(cfg);
  } else if (command == "predict") {
    std::optional<std::filesystem::path> output;
    if (!opts.predict_output.empty()) output = opts.predict_output;
    const auto rows = delaycast::run_predict(cfg, opts.predict_input, output);
    std::cout << "predicted " << rows << " rows\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-task delivery delay prediction with conformalized "
               "quantile intervals"};
  app.require_subcommand(1);

  CliOptions opts;
  app.add_option("-c,--config", opts.config_path, "run config (JSON)")
      ->required();
  app.add_option("--seed", opts.seed,
                 "override the generator and training seeds");
  app.add_flag("--allow-out-of-range", opts.allow_out_of_range,
               "skip hyperparameter range validation");

  app.add_subcommand("gen-data", "generate a synthetic shipment CSV");
  app.add_subcommand("train", "two-stage training; writes checkpoint + history");
  app.add_subcommand("calibrate", "per-head conformal calibration sidecar");
  app.add_subcommand("evaluate", "metric report on the test split");
  auto* predict =
      app.add_subcommand("predict", "per-row predictions for an input CSV");
  predict->add_option("-i,--input", opts.predict_input, "input CSV")->required();
  predict->add_option("-o,--output", opts.predict_output,
                      "output CSV (default: config output.prediction_path)");

  CLI11_PARSE(app, argc, argv);

  try {
    return dispatch(app.get_subcommands().front()->get_name(), opts);
  } catch (const delaycast::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const delaycast::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
