#ifndef DELAYCAST_MODEL_HPP
#define DELAYCAST_MODEL_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "delaycast/data.hpp"
#include "delaycast/errors.hpp"
#include "delaycast/losses.hpp"
#include "delaycast/rng.hpp"
#include "delaycast/tensor.hpp"

namespace delaycast {

struct ArchitectureConfig {
  int n_blocks = 2;        // backbone depth
  int d_hidden = 128;      // backbone width
  double dropout = 0.0;
  int d_cat_max = 50;      // cap on categorical embedding width
  int plr_frequencies = 8; // learnable frequencies per numerical feature
  int d_num = 24;          // numerical embedding width per feature
  int head_hidden = 0;     // 0 -> d_hidden / 2
  double plr_sigma = 0.5;  // stddev of the frequency init

  int resolved_head_hidden() const {
    return head_hidden > 0 ? head_hidden : d_hidden / 2;
  }

  void validate() const {
    if (n_blocks < 1) throw ConfigError("architecture.n_blocks must be >= 1");
    if (d_hidden < 1) throw ConfigError("architecture.d_hidden must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("architecture.dropout must be in [0, 1)");
    if (d_cat_max < 1) throw ConfigError("architecture.d_cat_max must be >= 1");
    if (plr_frequencies < 1)
      throw ConfigError("architecture.plr_frequencies must be >= 1");
    if (d_num < 1) throw ConfigError("architecture.d_num must be >= 1");
    if (plr_sigma <= 0.0) throw ConfigError("architecture.plr_sigma must be positive");
  }
};

// Embedding width for a categorical feature: grows with log2(cardinality),
// capped. bit_width(C) == floor(log2(C)) + 1 exactly, with no float edge
// cases, and gives 1 for a single-value vocabulary.
inline int embed_dim(std::uint64_t cardinality, int cap) {
  if (cardinality == 0) throw RuntimeFailure("embed_dim: zero cardinality");
  const int raw = std::bit_width(cardinality);
  return raw < cap ? raw : cap;
}

// Quantile-crossing repair, applied at inference before intervals are built.
inline std::array<double, 3> sort_quantiles(std::array<double, 3> q) {
  std::sort(q.begin(), q.end());
  return q;
}

struct NamedParam {
  std::string name;
  TensorPtr tensor;
  bool regression_head = false;  // only these stay trainable in stage 2
};

// All learnable state for one dataset's model: per-feature categorical
// embeddings, periodic (sin/cos + linear + ReLU) numerical embeddings, a
// shared ReLU MLP backbone, one classification head, and two quantile heads
// reading [hidden, probability].
struct Model {
  ArchitectureConfig arch;
  std::size_t n_cat = 0;
  std::size_t n_num = 0;
  std::size_t d_z = 0;

  std::vector<TensorPtr> embeddings;
  std::vector<TensorPtr> plr_freq, plr_w, plr_b;
  std::vector<TensorPtr> backbone_w, backbone_b;
  TensorPtr cls_w1, cls_b1, cls_w2, cls_b2;
  TensorPtr del_w1, del_b1, del_w2, del_b2;
  TensorPtr ont_w1, ont_b1, ont_w2, ont_b2;

  std::vector<NamedParam> named_params() const {
    std::vector<NamedParam> out;
    for (std::size_t k = 0; k < embeddings.size(); ++k)
      out.push_back({"emb." + std::to_string(k), embeddings[k], false});
    for (std::size_t m = 0; m < plr_freq.size(); ++m) {
      const auto tag = std::to_string(m);
      out.push_back({"plr." + tag + ".freq", plr_freq[m], false});
      out.push_back({"plr." + tag + ".w", plr_w[m], false});
      out.push_back({"plr." + tag + ".b", plr_b[m], false});
    }
    for (std::size_t l = 0; l < backbone_w.size(); ++l) {
      const auto tag = std::to_string(l);
      out.push_back({"backbone." + tag + ".w", backbone_w[l], false});
      out.push_back({"backbone." + tag + ".b", backbone_b[l], false});
    }
    out.push_back({"cls.w1", cls_w1, false});
    out.push_back({"cls.b1", cls_b1, false});
    out.push_back({"cls.w2", cls_w2, false});
    out.push_back({"cls.b2", cls_b2, false});
    out.push_back({"delayed.w1", del_w1, true});
    out.push_back({"delayed.b1", del_b1, true});
    out.push_back({"delayed.w2", del_w2, true});
    out.push_back({"delayed.b2", del_b2, true});
    out.push_back({"ontime.w1", ont_w1, true});
    out.push_back({"ontime.b1", ont_b1, true});
    out.push_back({"ontime.w2", ont_w2, true});
    out.push_back({"ontime.b2", ont_b2, true});
    return out;
  }

  std::vector<TensorPtr> parameters() const {
    std::vector<TensorPtr> out;
    for (const auto& p : named_params()) out.push_back(p.tensor);
    return out;
  }

  std::vector<TensorPtr> regression_head_parameters() const {
    std::vector<TensorPtr> out;
    for (const auto& p : named_params())
      if (p.regression_head) out.push_back(p.tensor);
    return out;
  }

  std::vector<TensorPtr> shared_parameters() const {
    std::vector<TensorPtr> out;
    for (const auto& p : named_params())
      if (!p.regression_head) out.push_back(p.tensor);
    return out;
  }

  // heads_only=true freezes everything except the two regression heads.
  void set_trainable(bool heads_only) {
    for (const auto& p : named_params()) {
      const bool trainable = !heads_only || p.regression_head;
      p.tensor->requires_grad = trainable;
      p.tensor->needs_grad = trainable;
    }
  }
};

namespace detail {

inline TensorPtr init_linear_weight(std::size_t fan_out, std::size_t fan_in,
                                    Rng& rng) {
  auto w = make_tensor(fan_out, fan_in, true);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w->data) v = rng.uniform(-bound, bound);
  return w;
}

inline TensorPtr init_bias(std::size_t fan_out) {
  return make_tensor(1, fan_out, true);
}

}  // namespace detail

inline Model build_model(const ArchitectureConfig& arch,
                         const FeatureSchema& schema, Rng& rng) {
  arch.validate();
  Model model;
  model.arch = arch;
  model.n_cat = schema.categorical_specs.size();
  model.n_num = schema.numerical_specs.size();

  std::size_t d_z = 0;
  for (const auto& spec : schema.categorical_specs) {
    const int dim = embed_dim(static_cast<std::uint64_t>(spec.cardinality),
                              arch.d_cat_max);
    auto emb = make_tensor(static_cast<std::size_t>(spec.cardinality),
                           static_cast<std::size_t>(dim), true);
    for (auto& v : emb->data) v = rng.normal(0.0, 0.1);
    model.embeddings.push_back(std::move(emb));
    d_z += static_cast<std::size_t>(dim);
  }
  const auto nfreq = static_cast<std::size_t>(arch.plr_frequencies);
  for (std::size_t m = 0; m < model.n_num; ++m) {
    auto freq = make_tensor(1, nfreq, true);
    for (auto& v : freq->data) v = rng.normal(0.0, arch.plr_sigma);
    model.plr_freq.push_back(std::move(freq));
    model.plr_w.push_back(detail::init_linear_weight(
        static_cast<std::size_t>(arch.d_num), 2 * nfreq, rng));
    model.plr_b.push_back(detail::init_bias(static_cast<std::size_t>(arch.d_num)));
    d_z += static_cast<std::size_t>(arch.d_num);
  }
  model.d_z = d_z;

  const auto d_h = static_cast<std::size_t>(arch.d_hidden);
  std::size_t in_dim = d_z;
  for (int l = 0; l < arch.n_blocks; ++l) {
    model.backbone_w.push_back(detail::init_linear_weight(d_h, in_dim, rng));
    model.backbone_b.push_back(detail::init_bias(d_h));
    in_dim = d_h;
  }

  const auto hh = static_cast<std::size_t>(arch.resolved_head_hidden());
  model.cls_w1 = detail::init_linear_weight(hh, d_h, rng);
  model.cls_b1 = detail::init_bias(hh);
  model.cls_w2 = detail::init_linear_weight(1, hh, rng);
  model.cls_b2 = detail::init_bias(1);

  const std::size_t d_r = d_h + 1;  // hidden representation plus probability
  model.del_w1 = detail::init_linear_weight(hh, d_r, rng);
  model.del_b1 = detail::init_bias(hh);
  model.del_w2 = detail::init_linear_weight(3, hh, rng);
  model.del_b2 = detail::init_bias(3);
  model.ont_w1 = detail::init_linear_weight(hh, d_r, rng);
  model.ont_b1 = detail::init_bias(hh);
  model.ont_w2 = detail::init_linear_weight(3, hh, rng);
  model.ont_b2 = detail::init_bias(3);
  return model;
}

enum class Mode { kTrain, kInfer };

struct Batch {
  const EncodedDataset* data = nullptr;
  std::vector<std::size_t> idx;

  std::size_t size() const { return idx.size(); }
};

struct ForwardOutput {
  TensorPtr hidden;     // B x d_h
  TensorPtr prob;       // B x 1
  TensorPtr delayed_q;  // B x 3, raw head outputs
  TensorPtr ontime_q;   // B x 3, raw head outputs

  std::vector<double> delay_prob;
  std::vector<int> routed_head;  // 1 -> delayed head
  std::vector<std::array<double, 3>> routed_quantiles;  // raw, per routing
};

// Runs the full architecture on a batch. Train mode routes by ground-truth
// labels and applies dropout (rng required when dropout > 0); infer mode
// routes by probability > 0.5, with exactly 0.5 going to the on-time head.
inline ForwardOutput forward(const Model& model, const Batch& batch, Mode mode,
                             Rng* dropout_rng = nullptr) {
  const std::size_t b = batch.size();
  if (b == 0) throw RuntimeFailure("forward: empty batch");
  const auto& data = *batch.data;
  const bool training = mode == Mode::kTrain;

  std::vector<TensorPtr> parts;
  parts.reserve(model.n_cat + model.n_num);
  for (std::size_t k = 0; k < model.n_cat; ++k) {
    std::vector<int> indices(b);
    for (std::size_t i = 0; i < b; ++i)
      indices[i] = data.cat[batch.idx[i] * data.n_cat + k];
    parts.push_back(embedding_lookup(model.embeddings[k], std::move(indices)));
  }
  for (std::size_t m = 0; m < model.n_num; ++m) {
    auto col = make_tensor(b, 1);
    for (std::size_t i = 0; i < b; ++i)
      col->data[i] = data.num[batch.idx[i] * data.n_num + m];
    auto sc = sin_cos_features(col, model.plr_freq[m]);
    parts.push_back(relu(linear_forward(sc, model.plr_w[m], model.plr_b[m])));
  }

  auto h = concat_cols(parts);
  for (std::size_t l = 0; l < model.backbone_w.size(); ++l) {
    h = relu(linear_forward(h, model.backbone_w[l], model.backbone_b[l]));
    h = dropout(h, model.arch.dropout, training, dropout_rng);
  }

  auto cls_hidden = relu(linear_forward(h, model.cls_w1, model.cls_b1));
  auto prob = sigmoid(linear_forward(cls_hidden, model.cls_w2, model.cls_b2));

  auto reg_in = concat_cols({h, prob});
  auto del_hidden = relu(linear_forward(reg_in, model.del_w1, model.del_b1));
  auto delayed_q = linear_forward(del_hidden, model.del_w2, model.del_b2);
  auto ont_hidden = relu(linear_forward(reg_in, model.ont_w1, model.ont_b1));
  auto ontime_q = linear_forward(ont_hidden, model.ont_w2, model.ont_b2);

  ForwardOutput out;
  out.hidden = h;
  out.prob = prob;
  out.delayed_q = delayed_q;
  out.ontime_q = ontime_q;
  out.delay_prob.resize(b);
  out.routed_head.resize(b);
  out.routed_quantiles.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    out.delay_prob[i] = prob->data[i];
    const int route = training
                          ? (data.d[batch.idx[i]] != 0.0 ? 1 : 0)
                          : (out.delay_prob[i] > 0.5 ? 1 : 0);
    out.routed_head[i] = route;
    const auto& q = route == 1 ? delayed_q : ontime_q;
    out.routed_quantiles[i] = {q->data[i * 3 + 0], q->data[i * 3 + 1],
                               q->data[i * 3 + 2]};
  }
  return out;
}

}  // namespace delaycast

#endif  // DELAYCAST_MODEL_HPP
