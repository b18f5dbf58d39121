#ifndef DELAYCAST_DATA_HPP
#define DELAYCAST_DATA_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "delaycast/errors.hpp"

namespace delaycast {

// One shipment: raw categorical tokens, raw numerical values, and planned /
// actual arrival timestamps in days. actual_arrival is absent at inference.
struct ShipmentRecord {
  std::vector<std::string> categorical_values;
  std::vector<double> numerical_values;
  double planned_arrival = 0.0;
  std::optional<double> actual_arrival;
};

struct DelayLabel {
  double delay_days = 0.0;
  int is_delayed = 0;
};

// delay = actual - planned (days); a shipment counts as delayed from one
// full day onward, so 0.99 days late is still on time.
inline DelayLabel derive_label(double planned, double actual) {
  const double delay = actual - planned;
  return {delay, delay >= 1.0 ? 1 : 0};
}

struct CategoricalSpec {
  std::string name;
  // index 0 is reserved for values unseen during fitting
  std::unordered_map<std::string, int> vocab;
  std::vector<std::string> tokens;  // tokens[i-1] holds the token for index i
  int cardinality = 1;              // vocab size + 1 for the unknown slot
};

struct NumericalSpec {
  std::string name;
  double mean = 0.0;
  double stddev = 1.0;
};

struct FeatureSchema {
  std::vector<CategoricalSpec> categorical_specs;
  std::vector<NumericalSpec> numerical_specs;
  std::vector<std::string> warnings;

  std::size_t feature_count_categorical() const { return categorical_specs.size(); }
  std::size_t feature_count_numerical() const { return numerical_specs.size(); }

  // Stable content hash so checkpoints and calibration artifacts can verify
  // they were produced against the same fitted schema.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix_bytes = [&h](const void* ptr, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(ptr);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
      }
    };
    auto mix_str = [&](const std::string& s) {
      mix_bytes(s.data(), s.size());
      const char sep = '\x1f';
      mix_bytes(&sep, 1);
    };
    for (const auto& c : categorical_specs) {
      mix_str(c.name);
      for (const auto& t : c.tokens) mix_str(t);
    }
    for (const auto& n : numerical_specs) {
      mix_str(n.name);
      mix_bytes(&n.mean, sizeof n.mean);
      mix_bytes(&n.stddev, sizeof n.stddev);
    }
    return h;
  }
};

enum class SplitTag { train, val, calib, test, unsplit };

inline const char* split_tag_name(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::calib: return "calib";
    case SplitTag::test: return "test";
    default: return "unsplit";
  }
}

struct DatasetColumns {
  std::vector<std::string> categorical;
  std::vector<std::string> numerical;
  std::string planned_arrival = "planned_arrival";
  std::string actual_arrival = "actual_arrival";
};

struct Dataset {
  std::vector<ShipmentRecord> records;
  std::vector<std::optional<DelayLabel>> labels;  // parallel to records
  DatasetColumns columns;
  SplitTag split_tag = SplitTag::unsplit;

  std::size_t size() const { return records.size(); }

  bool fully_labeled() const {
    return std::all_of(labels.begin(), labels.end(),
                       [](const auto& l) { return l.has_value(); });
  }
};

// Vocabularies and standardization parameters come from the training split
// only. Constant numerical columns get stddev 1 and a recorded warning.
inline FeatureSchema fit_schema(const Dataset& train) {
  if (train.size() == 0) throw RuntimeFailure("fit_schema: empty training set");
  FeatureSchema schema;

  const std::size_t n_cat = train.columns.categorical.size();
  const std::size_t n_num = train.columns.numerical.size();

  for (std::size_t k = 0; k < n_cat; ++k) {
    CategoricalSpec spec;
    spec.name = train.columns.categorical[k];
    for (const auto& rec : train.records) {
      const auto& token = rec.categorical_values[k];
      if (spec.vocab.emplace(token, static_cast<int>(spec.tokens.size()) + 1).second)
        spec.tokens.push_back(token);
    }
    spec.cardinality = static_cast<int>(spec.tokens.size()) + 1;
    schema.categorical_specs.push_back(std::move(spec));
  }

  const auto n = static_cast<double>(train.size());
  for (std::size_t m = 0; m < n_num; ++m) {
    NumericalSpec spec;
    spec.name = train.columns.numerical[m];
    double sum = 0.0;
    for (const auto& rec : train.records) sum += rec.numerical_values[m];
    spec.mean = sum / n;
    double sq = 0.0;
    for (const auto& rec : train.records) {
      const double d = rec.numerical_values[m] - spec.mean;
      sq += d * d;
    }
    spec.stddev = std::sqrt(sq / n);  // population formula
    if (spec.stddev <= 0.0) {
      spec.stddev = 1.0;
      schema.warnings.push_back("numerical column '" + spec.name +
                                "' is constant; stddev forced to 1");
    }
    schema.numerical_specs.push_back(std::move(spec));
  }
  return schema;
}

// Unseen tokens map to index 0; numericals are z-scored with the fitted
// training statistics.
inline std::pair<std::vector<int>, std::vector<double>> encode(
    const ShipmentRecord& record, const FeatureSchema& schema) {
  std::vector<int> cat(schema.categorical_specs.size(), 0);
  for (std::size_t k = 0; k < cat.size(); ++k) {
    const auto& vocab = schema.categorical_specs[k].vocab;
    auto it = vocab.find(record.categorical_values[k]);
    cat[k] = it == vocab.end() ? 0 : it->second;
  }
  std::vector<double> num(schema.numerical_specs.size(), 0.0);
  for (std::size_t m = 0; m < num.size(); ++m) {
    const auto& spec = schema.numerical_specs[m];
    num[m] = (record.numerical_values[m] - spec.mean) / spec.stddev;
  }
  return {std::move(cat), std::move(num)};
}

// Column-compressed encoded dataset ready for batched training.
struct EncodedDataset {
  std::size_t n = 0;
  std::size_t n_cat = 0;
  std::size_t n_num = 0;
  std::vector<int> cat;     // n x n_cat, row-major
  std::vector<double> num;  // n x n_num, row-major
  std::vector<double> y;    // delay days
  std::vector<double> d;    // 0/1 delay indicator

  std::span<const int> cat_row(std::size_t i) const {
    return {cat.data() + i * n_cat, n_cat};
  }
  std::span<const double> num_row(std::size_t i) const {
    return {num.data() + i * n_num, n_num};
  }
};

inline EncodedDataset encode_dataset(const Dataset& data,
                                     const FeatureSchema& schema,
                                     bool require_labels = true) {
  EncodedDataset out;
  out.n = data.size();
  out.n_cat = schema.categorical_specs.size();
  out.n_num = schema.numerical_specs.size();
  out.cat.reserve(out.n * out.n_cat);
  out.num.reserve(out.n * out.n_num);
  out.y.reserve(out.n);
  out.d.reserve(out.n);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto [c, v] = encode(data.records[i], schema);
    out.cat.insert(out.cat.end(), c.begin(), c.end());
    out.num.insert(out.num.end(), v.begin(), v.end());
    if (data.labels[i].has_value()) {
      out.y.push_back(data.labels[i]->delay_days);
      out.d.push_back(static_cast<double>(data.labels[i]->is_delayed));
    } else if (require_labels) {
      throw RuntimeFailure("encode_dataset: record " + std::to_string(i) +
                           " has no label");
    } else {
      out.y.push_back(0.0);
      out.d.push_back(0.0);
    }
  }
  return out;
}

struct SplitResult {
  Dataset train, val, calib, test;
};

// Stable sort by planned arrival (ties keep input order), then contiguous
// partition train -> val -> calib -> test. Leftover rows from the floored
// ratio sizes go to train.
inline SplitResult chronological_split(const Dataset& data,
                                       const std::array<double, 4>& ratios) {
  if (data.size() == 0) throw RuntimeFailure("chronological_split: empty dataset");
  double sum = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw ConfigError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");

  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return data.records[a].planned_arrival < data.records[b].planned_arrival;
  });

  const auto n = data.size();
  std::array<std::size_t, 4> sizes{};
  for (int k = 0; k < 4; ++k)
    sizes[k] = static_cast<std::size_t>(std::floor(ratios[k] * static_cast<double>(n)));
  std::size_t assigned = sizes[0] + sizes[1] + sizes[2] + sizes[3];
  sizes[0] += n - assigned;  // remainder to train

  SplitResult out;
  std::array<Dataset*, 4> parts{&out.train, &out.val, &out.calib, &out.test};
  std::array<SplitTag, 4> tags{SplitTag::train, SplitTag::val, SplitTag::calib,
                               SplitTag::test};
  std::size_t pos = 0;
  for (int k = 0; k < 4; ++k) {
    parts[k]->columns = data.columns;
    parts[k]->split_tag = tags[k];
    for (std::size_t i = 0; i < sizes[k]; ++i, ++pos) {
      parts[k]->records.push_back(data.records[idx[pos]]);
      parts[k]->labels.push_back(data.labels[idx[pos]]);
    }
  }
  return out;
}

}  // namespace delaycast

#endif  // DELAYCAST_DATA_HPP
