#ifndef DELAYCAST_EVALUATION_HPP
#define DELAYCAST_EVALUATION_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "delaycast/conformal.hpp"
#include "delaycast/csv_io.hpp"
#include "delaycast/errors.hpp"
#include "delaycast/losses.hpp"
#include "delaycast/model.hpp"

namespace delaycast {

inline double mae(std::span<const double> y, std::span<const double> median_pred) {
  if (y.empty() || y.size() != median_pred.size())
    throw RuntimeFailure("mae: mismatched or empty inputs");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    acc += std::abs(y[i] - median_pred[i]);
  return acc / static_cast<double>(y.size());
}

inline double avg_ql(std::span<const double> y,
                     const std::vector<std::array<double, 3>>& quantile_preds,
                     std::span<const double> levels = kQuantileLevels) {
  if (y.empty() || y.size() != quantile_preds.size())
    throw RuntimeFailure("avg_ql: mismatched or empty inputs");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < levels.size(); ++j)
      acc += pinball(y[i] - quantile_preds[i][j], levels[j]);
  return acc / (static_cast<double>(levels.size()) * static_cast<double>(y.size()));
}

// Closed-interval coverage (boundary counts as covered) and mean width.
inline std::pair<double, double> coverage_aiw(
    std::span<const double> y,
    const std::vector<std::pair<double, double>>& intervals) {
  if (y.empty() || y.size() != intervals.size())
    throw RuntimeFailure("coverage_aiw: mismatched or empty inputs");
  double covered = 0.0, width = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto& [low, high] = intervals[i];
    if (low <= y[i] && y[i] <= high) covered += 1.0;
    width += high - low;
  }
  const auto n = static_cast<double>(y.size());
  return {covered / n, width / n};
}

// Interval width plus a 2/alpha-scaled penalty for misses; penalty branches
// are strict, so a boundary point scores the bare width.
inline double winkler_score(double y, double low, double high, double alpha) {
  const double width = high - low;
  if (y < low) return width + (2.0 / alpha) * (low - y);
  if (y > high) return width + (2.0 / alpha) * (y - high);
  return width;
}

struct MetricReport {
  std::string subset;   // "overall" or "delayed" (selected by ground truth)
  std::string routing;  // "classifier" (deployment) or "matched" (true head)
  bool calibrated = false;
  std::optional<double> mae;
  std::optional<double> avg_ql;
  std::optional<double> coverage;
  std::optional<double> aiw;
  std::optional<double> winkler;
  std::size_t n = 0;
};

struct ClassificationDiagnostics {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t n = 0;
};

struct FullReport {
  std::vector<MetricReport> rows;  // {overall,delayed} x {pre,post} x routing
  ClassificationDiagnostics classification;
  std::size_t collapsed_intervals = 0;
};

namespace detail {

struct TestPredictions {
  std::vector<double> y;
  std::vector<double> d;
  std::vector<double> prob;
  std::vector<std::array<double, 3>> routed_sorted;   // classifier-routed
  std::vector<std::array<double, 3>> matched_sorted;  // ground-truth head
};

inline TestPredictions predict_test(const Model& model,
                                    const EncodedDataset& test) {
  TestPredictions pred;
  pred.y.assign(test.y.begin(), test.y.end());
  pred.d.assign(test.d.begin(), test.d.end());
  pred.prob.reserve(test.n);
  pred.routed_sorted.reserve(test.n);
  pred.matched_sorted.reserve(test.n);
  constexpr std::size_t kChunk = 4096;
  for (std::size_t start = 0; start < test.n; start += kChunk) {
    const std::size_t stop = std::min(test.n, start + kChunk);
    Batch batch{&test, {}};
    batch.idx.resize(stop - start);
    std::iota(batch.idx.begin(), batch.idx.end(), start);
    const auto out = forward(model, batch, Mode::kInfer);
    for (std::size_t i = 0; i < batch.idx.size(); ++i) {
      const std::size_t row = batch.idx[i];
      pred.prob.push_back(out.delay_prob[i]);
      pred.routed_sorted.push_back(sort_quantiles(out.routed_quantiles[i]));
      const auto& q = test.d[row] != 0.0 ? out.delayed_q : out.ontime_q;
      pred.matched_sorted.push_back(sort_quantiles(
          {q->data[i * 3 + 0], q->data[i * 3 + 1], q->data[i * 3 + 2]}));
    }
  }
  return pred;
}

struct SubsetMetrics {
  MetricReport pre;
  MetricReport post;
  std::size_t collapsed = 0;
};

// One {subset} x {pre, post} pair under a head-selection rule. matched=true
// evaluates each sample with its ground-truth head (and that head's
// correction), exposing the conditional-coverage gap against the deployed
// classifier routing.
inline SubsetMetrics subset_metrics(const TestPredictions& pred,
                                    const std::vector<std::size_t>& rows,
                                    const std::string& subset_name, bool matched,
                                    double alpha,
                                    const std::optional<CalibrationResult>& calib) {
  SubsetMetrics out;
  const std::string routing = matched ? "matched" : "classifier";
  out.pre.subset = subset_name;
  out.pre.routing = routing;
  out.pre.calibrated = false;
  out.pre.n = rows.size();
  out.post.subset = subset_name;
  out.post.routing = routing;
  out.post.calibrated = true;
  out.post.n = rows.size();
  if (rows.empty()) return out;

  std::vector<double> y, median;
  std::vector<std::array<double, 3>> triples;
  std::vector<std::pair<double, double>> raw_intervals, cal_intervals;
  y.reserve(rows.size());
  for (std::size_t r : rows) {
    y.push_back(pred.y[r]);
    const auto& q = matched ? pred.matched_sorted[r] : pred.routed_sorted[r];
    median.push_back(q[1]);
    triples.push_back(q);
    raw_intervals.emplace_back(q[0], q[2]);
    if (calib) {
      // matched rows pick the correction by ground truth; deployment rows
      // truly follow the classifier
      const double head_prob = matched ? pred.d[r] : pred.prob[r];
      const auto ci = calibrated_interval(q, head_prob, *calib);
      cal_intervals.emplace_back(ci.low, ci.high);
      if (ci.collapsed) ++out.collapsed;
    }
  }

  const double point_mae = mae(y, median);
  const double point_ql = avg_ql(y, triples);
  auto fill = [&](MetricReport& row,
                  const std::vector<std::pair<double, double>>& intervals) {
    row.mae = point_mae;
    row.avg_ql = point_ql;
    const auto [cov, width] = coverage_aiw(y, intervals);
    row.coverage = cov;
    row.aiw = width;
    double ws = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
      ws += winkler_score(y[i], intervals[i].first, intervals[i].second, alpha);
    row.winkler = ws / static_cast<double>(y.size());
  };
  fill(out.pre, raw_intervals);
  if (calib) fill(out.post, cal_intervals);
  return out;
}

}  // namespace detail

// Metric table over the test split: {overall, delayed} x {pre, post} under
// both head-selection rules (classifier-routed deployment vs ground-truth
// matched heads), eight rows total. "delayed" is selected by ground truth.
// Post rows stay null when no calibration is supplied. Classification
// diagnostics at the 0.5 threshold ride along.
inline FullReport full_report(const Model& model,
                              const std::optional<CalibrationResult>& calib,
                              const EncodedDataset& test, double alpha) {
  if (test.n == 0) throw RuntimeFailure("full_report: empty test set");
  const auto pred = detail::predict_test(model, test);

  std::vector<std::size_t> overall(test.n), delayed;
  std::iota(overall.begin(), overall.end(), 0);
  for (std::size_t i = 0; i < test.n; ++i)
    if (pred.d[i] != 0.0) delayed.push_back(i);

  FullReport report;
  for (const bool matched : {false, true}) {
    auto ov = detail::subset_metrics(pred, overall, "overall", matched, alpha, calib);
    auto de = detail::subset_metrics(pred, delayed, "delayed", matched, alpha, calib);
    if (!matched) report.collapsed_intervals = ov.collapsed;  // deployment path
    report.rows.push_back(ov.pre);
    report.rows.push_back(ov.post);
    report.rows.push_back(de.pre);
    report.rows.push_back(de.post);
  }

  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < test.n; ++i) {
    const bool hat = pred.prob[i] > 0.5;
    const bool truth = pred.d[i] != 0.0;
    tp += hat && truth;
    fp += hat && !truth;
    fn += !hat && truth;
  }
  auto& cls = report.classification;
  cls.n = test.n;
  cls.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
  cls.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
  cls.f1 = 2.0 * tp + fp + fn > 0.0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
  return report;
}

namespace detail {

inline std::string opt_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace detail

inline void write_report_csv(const std::filesystem::path& path,
                             const FullReport& report,
                             const std::string& config_echo_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write report: " + path.string());
  if (!config_echo_json.empty()) out << "# config: " << config_echo_json << '\n';
  out << "subset,routing,calibrated,n,mae,avg_ql,coverage,aiw,winkler\n";
  for (const auto& row : report.rows)
    out << row.subset << ',' << row.routing << ',' << (row.calibrated ? 1 : 0)
        << ',' << row.n << ',' << detail::opt_field(row.mae) << ','
        << detail::opt_field(row.avg_ql) << ','
        << detail::opt_field(row.coverage) << ',' << detail::opt_field(row.aiw)
        << ',' << detail::opt_field(row.winkler) << '\n';
  const auto& cls = report.classification;
  out << "# classification: f1=" << detail::format_double(cls.f1)
      << " precision=" << detail::format_double(cls.precision)
      << " recall=" << detail::format_double(cls.recall) << " n=" << cls.n
      << '\n';
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

inline void write_report_json(const std::filesystem::path& path,
                              const FullReport& report,
                              const std::string& config_echo_json) {
  nlohmann::json doc;
  if (!config_echo_json.empty())
    doc["config"] = nlohmann::json::parse(config_echo_json);
  doc["rows"] = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json r;
    r["subset"] = row.subset;
    r["routing"] = row.routing;
    r["calibrated"] = row.calibrated;
    r["n"] = row.n;
    auto put = [&r](const char* key, const std::optional<double>& v) {
      if (v) r[key] = *v;
      else r[key] = nullptr;
    };
    put("mae", row.mae);
    put("avg_ql", row.avg_ql);
    put("coverage", row.coverage);
    put("aiw", row.aiw);
    put("winkler", row.winkler);
    doc["rows"].push_back(std::move(r));
  }
  doc["classification"] = {{"f1", report.classification.f1},
                           {"precision", report.classification.precision},
                           {"recall", report.classification.recall},
                           {"n", report.classification.n}};
  doc["collapsed_intervals"] = report.collapsed_intervals;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write report: " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

inline void print_report(std::ostream& os, const FullReport& report) {
  os << std::left << std::setw(9) << "subset" << std::setw(12) << "routing"
     << std::setw(7) << "calib" << std::right << std::setw(8) << "n"
     << std::setw(10) << "mae" << std::setw(10) << "avg_ql" << std::setw(10)
     << "coverage" << std::setw(10) << "aiw" << std::setw(10) << "winkler"
     << '\n';
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  for (const auto& row : report.rows)
    os << std::left << std::setw(9) << row.subset << std::setw(12)
       << row.routing << std::setw(7) << (row.calibrated ? "post" : "pre")
       << std::right << std::setw(8) << row.n << std::setw(10)
       << cell(row.mae) << std::setw(10) << cell(row.avg_ql) << std::setw(10)
       << cell(row.coverage) << std::setw(10) << cell(row.aiw) << std::setw(10)
       << cell(row.winkler) << '\n';
  const auto& cls = report.classification;
  char buf[128];
  std::snprintf(buf, sizeof buf,
                "classification: f1=%.4f precision=%.4f recall=%.4f n=%zu",
                cls.f1, cls.precision, cls.recall, cls.n);
  os << buf << '\n';
  if (report.collapsed_intervals > 0)
    os << "note: " << report.collapsed_intervals
       << " calibrated interval(s) collapsed to their midpoint\n";
}

}  // namespace delaycast

#endif  // DELAYCAST_EVALUATION_HPP
