#ifndef DELAYCAST_CSV_IO_HPP
#define DELAYCAST_CSV_IO_HPP

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "delaycast/data.hpp"
#include "delaycast/dates.hpp"
#include "delaycast/errors.hpp"

namespace delaycast {

// Dialect: comma-separated, UTF-8, header row, RFC-4180 quoting for fields
// containing commas/quotes/newlines, ISO-8601 (YYYY-MM-DD) dates. Lines
// starting with '#' are skipped on input.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (ch == '\r') {
      // tolerate CRLF
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string escape_csv_field(std::string_view field) {
  bool needs_quotes = false;
  for (char ch : field)
    if (ch == ',' || ch == '"' || ch == '\n' || ch == '\r') {
      needs_quotes = true;
      break;
    }
  if (!needs_quotes) return std::string(field);
  std::string out;
  out.reserve(field.size() + 2);
  out.push_back('"');
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

inline bool parse_double_strict(std::string_view sv, double& out) {
  while (!sv.empty() && (sv.front() == ' ' || sv.front() == '\t')) sv.remove_prefix(1);
  while (!sv.empty() && (sv.back() == ' ' || sv.back() == '\t')) sv.remove_suffix(1);
  if (sv.empty()) return false;
  auto [p, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), out);
  if (ec != std::errc{} || p != sv.data() + sv.size()) return false;
  return std::isfinite(out);
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

struct IngestResult {
  Dataset data;
  std::size_t skipped = 0;  // rows dropped for unparseable numerics or dates
};

// Reads a shipment CSV. Every mapped column must exist in the header
// (missing ones are a fatal schema error); rows whose numeric or date
// fields fail strict parsing are skipped and counted. With
// require_actual=false the actual-arrival column may be absent or empty,
// which leaves those records unlabeled.
inline IngestResult ingest_csv(const std::filesystem::path& path,
                               const DatasetColumns& columns,
                               bool require_actual = true) {
  if (!std::filesystem::exists(path))
    throw MissingArtifactError("input CSV not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open CSV: " + path.string());

  std::string line;
  bool have_header = false;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    header = detail::split_csv_line(line);
    have_header = true;
    break;
  }
  if (!have_header) throw RuntimeFailure("empty CSV: " + path.string());

  std::unordered_map<std::string, std::size_t> col_index;
  for (std::size_t i = 0; i < header.size(); ++i) col_index.emplace(header[i], i);

  auto require_col = [&](const std::string& name) -> std::size_t {
    auto it = col_index.find(name);
    if (it == col_index.end())
      throw ConfigError("required column '" + name + "' missing from " +
                        path.string());
    return it->second;
  };

  std::vector<std::size_t> cat_idx, num_idx;
  for (const auto& name : columns.categorical) cat_idx.push_back(require_col(name));
  for (const auto& name : columns.numerical) num_idx.push_back(require_col(name));
  const std::size_t planned_idx = require_col(columns.planned_arrival);
  std::optional<std::size_t> actual_idx;
  if (auto it = col_index.find(columns.actual_arrival); it != col_index.end())
    actual_idx = it->second;
  else if (require_actual)
    throw ConfigError("required column '" + columns.actual_arrival +
                      "' missing from " + path.string());

  IngestResult result;
  result.data.columns = columns;
  result.data.split_tag = SplitTag::unsplit;

  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    ++data_rows;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      ++result.skipped;
      continue;
    }

    ShipmentRecord rec;
    bool ok = true;
    rec.categorical_values.reserve(cat_idx.size());
    for (auto ci : cat_idx) rec.categorical_values.push_back(fields[ci]);
    rec.numerical_values.reserve(num_idx.size());
    for (auto ni : num_idx) {
      double v;
      if (!detail::parse_double_strict(fields[ni], v)) {
        ok = false;
        break;
      }
      rec.numerical_values.push_back(v);
    }
    if (ok) {
      auto planned = parse_iso_date(fields[planned_idx]);
      if (!planned) ok = false;
      else rec.planned_arrival = static_cast<double>(*planned);
    }
    if (ok && actual_idx) {
      const auto& f = fields[*actual_idx];
      if (f.empty()) {
        if (require_actual) ok = false;
      } else if (auto actual = parse_iso_date(f)) {
        rec.actual_arrival = static_cast<double>(*actual);
      } else {
        ok = false;
      }
    }
    if (!ok) {
      ++result.skipped;
      continue;
    }

    if (rec.actual_arrival)
      result.data.labels.push_back(derive_label(rec.planned_arrival, *rec.actual_arrival));
    else
      result.data.labels.push_back(std::nullopt);
    result.data.records.push_back(std::move(rec));
  }
  if (data_rows == 0) throw RuntimeFailure("CSV has no data rows: " + path.string());
  return result;
}

// Writes exactly one header line plus one line per record, in the dialect
// ingest_csv reads. Returns the record count.
inline std::size_t emit_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open for writing: " + path.string());

  const auto& cols = data.columns;
  std::string header;
  for (const auto& name : cols.categorical) {
    header += detail::escape_csv_field(name);
    header += ',';
  }
  for (const auto& name : cols.numerical) {
    header += detail::escape_csv_field(name);
    header += ',';
  }
  header += detail::escape_csv_field(cols.planned_arrival);
  header += ',';
  header += detail::escape_csv_field(cols.actual_arrival);
  out << header << '\n';

  for (const auto& rec : data.records) {
    std::string row;
    for (const auto& token : rec.categorical_values) {
      row += detail::escape_csv_field(token);
      row += ',';
    }
    for (double v : rec.numerical_values) {
      row += detail::format_double(v);
      row += ',';
    }
    row += format_iso_date(std::llround(rec.planned_arrival));
    row += ',';
    if (rec.actual_arrival)
      row += format_iso_date(std::llround(*rec.actual_arrival));
    out << row << '\n';
  }
  if (!out) throw RuntimeFailure("write failed: " + path.string());
  return data.size();
}

}  // namespace delaycast

#endif  // DELAYCAST_CSV_IO_HPP
