#ifndef DELAYCAST_TRAINING_HPP
#define DELAYCAST_TRAINING_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "delaycast/csv_io.hpp"
#include "delaycast/errors.hpp"
#include "delaycast/losses.hpp"
#include "delaycast/model.hpp"
#include "delaycast/optim.hpp"
#include "delaycast/rng.hpp"

namespace delaycast {

struct TrainConfig {
  int batch_size = 512;
  int max_epochs_stage1 = 30;
  int max_epochs_stage2 = 15;
  int patience = 5;
  double min_delta = 1e-4;
  double base_lr = 1e-3;
  double weight_decay = 1e-5;
  std::optional<double> clip_norm = 1.0;
  double warmup_fraction = 0.1;
  std::uint64_t seed = 42;

  void validate() const {
    if (batch_size < 2)
      throw ConfigError("training.batch_size must be >= 2 (the classification "
                        "loss is batch-level)");
    if (max_epochs_stage1 < 1 || max_epochs_stage2 < 0)
      throw ConfigError("training.max_epochs must be positive");
    if (patience < 1) throw ConfigError("training.patience must be >= 1");
    if (min_delta < 0.0) throw ConfigError("training.min_delta must be >= 0");
    if (base_lr <= 0.0) throw ConfigError("training.base_lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("training.weight_decay must be >= 0");
    if (clip_norm && *clip_norm <= 0.0)
      throw ConfigError("training.clip_norm must be positive when set");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
      throw ConfigError("training.warmup_fraction must be in [0, 1)");
  }
};

struct EpochStats {
  int stage = 0;
  int epoch = 0;
  double train_loss_cls = 0.0;
  double train_loss_reg = 0.0;
  double val_loss_cls = 0.0;
  double val_loss_reg = 0.0;
  double learning_rate = 0.0;
};

struct StageResult {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double best_val_metric = std::numeric_limits<double>::infinity();
  long optimizer_steps = 0;
  bool stopped_early = false;

  // Final optimizer/RNG state of the stage, for checkpointing. Moments are
  // ordered like the stage's trainable parameter list.
  LrSchedule final_schedule;
  std::vector<std::vector<double>> final_moments_m;
  std::vector<std::vector<double>> final_moments_v;
  std::string final_rng_state;
};

struct TrainHistory {
  StageResult stage1, stage2;
};

namespace detail {

// Epoch step count: every batch trains, except a trailing batch of size one,
// which the batch-level classification loss cannot score.
inline long steps_per_epoch(std::size_t n, int batch_size) {
  const auto b = static_cast<std::size_t>(batch_size);
  const std::size_t full = n / b;
  const std::size_t rem = n % b;
  return static_cast<long>(full + (rem >= 2 ? 1 : 0));
}

struct EvalLosses {
  double loss_cls = 0.0;
  double loss_reg = 0.0;
};

// Whole-split losses, computed in fixed-size chunks: the soft confusion
// counts aggregate across the entire split before the F1 is formed, and the
// regression loss uses ground-truth routing, matching the training
// objective.
inline EvalLosses evaluate_losses(const Model& model, const EncodedDataset& data) {
  constexpr std::size_t kChunk = 4096;
  double tp = 0.0, fp = 0.0, fn = 0.0, reg_sum = 0.0;
  for (std::size_t start = 0; start < data.n; start += kChunk) {
    const std::size_t stop = std::min(data.n, start + kChunk);
    Batch batch{&data, {}};
    batch.idx.resize(stop - start);
    std::iota(batch.idx.begin(), batch.idx.end(), start);
    const auto out = forward(model, batch, Mode::kInfer);
    for (std::size_t i = 0; i < batch.idx.size(); ++i) {
      const std::size_t row = batch.idx[i];
      const double p = out.delay_prob[i];
      const double d = data.d[row];
      tp += p * d;
      fp += p * (1.0 - d);
      fn += (1.0 - p) * d;
      const bool is_delayed = d != 0.0;
      const auto& q = is_delayed ? out.delayed_q : out.ontime_q;
      for (std::size_t j = 0; j < 3; ++j)
        reg_sum += pinball(data.y[row] - q->data[i * 3 + j], kQuantileLevels[j]);
    }
  }
  EvalLosses losses;
  const double denom = std::max(2.0 * tp + fp + fn, 1e-8);
  losses.loss_cls = 1.0 - 2.0 * tp / denom;
  losses.loss_reg = reg_sum / (3.0 * static_cast<double>(data.n));
  return losses;
}

inline std::vector<std::vector<double>> snapshot(
    const std::vector<TensorPtr>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p->data);
  return out;
}

inline void restore(const std::vector<TensorPtr>& params,
                    const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = snap[i];
}

enum class Stage { kJoint = 1, kHeadsOnly = 2 };

inline StageResult run_stage(Model& model, const EncodedDataset& train,
                             const EncodedDataset& val, const TrainConfig& cfg,
                             Stage stage) {
  if (train.n == 0) throw RuntimeFailure("training: empty train set");
  const bool heads_only = stage == Stage::kHeadsOnly;
  model.set_trainable(heads_only);
  const auto params =
      heads_only ? model.regression_head_parameters() : model.parameters();

  const int max_epochs =
      heads_only ? cfg.max_epochs_stage2 : cfg.max_epochs_stage1;
  const long per_epoch = steps_per_epoch(train.n, cfg.batch_size);
  if (per_epoch == 0)
    throw RuntimeFailure("training: train set smaller than a usable batch");
  const long total_steps = per_epoch * max_epochs;
  LrSchedule schedule{cfg.base_lr,
                      static_cast<long>(cfg.warmup_fraction *
                                        static_cast<double>(total_steps)),
                      total_steps};
  auto opt = make_optimizer(params, schedule, cfg.weight_decay, cfg.clip_norm);

  Rng rng(derive_seed(cfg.seed, heads_only ? 2 : 1));

  StageResult result;
  auto best = snapshot(params);
  int epochs_without_improvement = 0;

  std::vector<std::size_t> order(train.n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    rng.shuffle(order);

    double cls_sum = 0.0, reg_sum = 0.0, last_lr = 0.0;
    std::size_t rows_used = 0;
    for (std::size_t start = 0; start < train.n;
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(train.n, start + static_cast<std::size_t>(cfg.batch_size));
      if (stop - start < 2) break;  // drop degenerate trailing batch

      Batch batch{&train, {order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(stop)}};
      const auto out = forward(model, batch, Mode::kTrain, &rng);

      std::vector<double> y(batch.size()), d(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        y[i] = train.y[batch.idx[i]];
        d[i] = train.d[batch.idx[i]];
      }
      auto loss_cls = sigmoid_f1_loss(out.prob, d);
      auto loss_reg = regression_loss(out.delayed_q, out.ontime_q, y, d);
      auto total = heads_only ? loss_reg : add(loss_cls, loss_reg);
      backward(total);

      last_lr = opt.schedule.at(opt.step);
      adamw_step(params, opt);

      cls_sum += loss_cls->data[0] * static_cast<double>(batch.size());
      reg_sum += loss_reg->data[0] * static_cast<double>(batch.size());
      rows_used += batch.size();
    }

    const auto val_losses = evaluate_losses(model, val);
    EpochStats stats;
    stats.stage = static_cast<int>(stage);
    stats.epoch = epoch;
    stats.train_loss_cls = cls_sum / static_cast<double>(rows_used);
    stats.train_loss_reg = reg_sum / static_cast<double>(rows_used);
    stats.val_loss_cls = val_losses.loss_cls;
    stats.val_loss_reg = val_losses.loss_reg;
    stats.learning_rate = last_lr;
    result.epochs.push_back(stats);

    const double monitored =
        heads_only ? val_losses.loss_reg : val_losses.loss_cls;
    if (monitored < result.best_val_metric - cfg.min_delta) {
      result.best_val_metric = monitored;
      result.best_epoch = epoch;
      best = snapshot(params);
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
      if (epochs_without_improvement >= cfg.patience) {
        result.stopped_early = true;
        break;
      }
    }
  }

  restore(params, best);
  result.optimizer_steps = opt.step;
  result.final_schedule = opt.schedule;
  result.final_moments_m = std::move(opt.m);
  result.final_moments_v = std::move(opt.v);
  result.final_rng_state = rng.save_state();
  model.set_trainable(false);
  return result;
}

}  // namespace detail

// Stage 1: joint minimization of classification + regression loss, early
// stopping on validation classification loss, best parameters restored.
inline StageResult train_stage1(Model& model, const EncodedDataset& train,
                                const EncodedDataset& val,
                                const TrainConfig& cfg) {
  cfg.validate();
  return detail::run_stage(model, train, val, cfg, detail::Stage::kJoint);
}

// Stage 2: regression heads only; everything else receives no gradient and
// stays bit-identical. Early stopping on validation regression loss.
inline StageResult train_stage2(Model& model, const EncodedDataset& train,
                                const EncodedDataset& val,
                                const TrainConfig& cfg) {
  cfg.validate();
  return detail::run_stage(model, train, val, cfg, detail::Stage::kHeadsOnly);
}

inline void write_history_csv(const std::filesystem::path& path,
                              const TrainHistory& history,
                              const std::string& config_echo_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write history: " + path.string());
  if (!config_echo_json.empty()) out << "# config: " << config_echo_json << '\n';
  out << "stage,epoch,train_loss_cls,train_loss_reg,val_loss_cls,val_loss_reg,"
         "learning_rate\n";
  auto emit = [&](const StageResult& stage) {
    for (const auto& e : stage.epochs)
      out << e.stage << ',' << e.epoch << ','
          << detail::format_double(e.train_loss_cls) << ','
          << detail::format_double(e.train_loss_reg) << ','
          << detail::format_double(e.val_loss_cls) << ','
          << detail::format_double(e.val_loss_reg) << ','
          << detail::format_double(e.learning_rate) << '\n';
  };
  emit(history.stage1);
  emit(history.stage2);
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

}  // namespace delaycast

#endif  // DELAYCAST_TRAINING_HPP
