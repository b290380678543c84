#pragma once

// Experiment reports and their on-disk artifacts: report.json (schema
// versioned), one series_<name>.csv per series (RFC 4180) and a matching
// plot_<name>.svg line plot.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace cnls {

inline constexpr int kReportSchemaVersion = 1;

struct Series {
  std::string name;
  std::string y_label;
  std::vector<double> t, value, stderr_;  // stderr_ empty for deterministic series
};

struct Scalar {
  std::string name;
  double value = 0.0;
  double stderr_ = -1.0;  // negative: exact / not a Monte Carlo quantity
};

struct Verdict {
  std::string name;
  bool pass = false;
  std::string criterion;  // the inequality checked, with its tolerance
  std::string detail;     // observed numbers
};

struct ExperimentReport {
  std::string name;
  nlohmann::json config;  // validated config snapshot
  std::uint64_t seed = 0;
  std::vector<Series> series;
  std::vector<Scalar> scalars;
  std::vector<Verdict> verdicts;
  std::map<std::string, std::uint64_t> counts;  // sample sizes, truncations...
  std::vector<std::string> notes;
  double wall_clock_s = 0.0;

  bool passed() const;
  const Scalar* scalar(std::string_view name) const;
  const Series* find_series(std::string_view name) const;
  void add_scalar(std::string name, double value, double stderr_ = -1.0);
  void add_verdict(std::string name, bool pass, std::string criterion, std::string detail = {});
};

nlohmann::json to_json(const ExperimentReport& r);

/// Writes report.json, series_*.csv and plot_*.svg into dir (created).
void write_report(const ExperimentReport& r, const std::filesystem::path& dir);

/// One CSV field with RFC 4180 quoting (only when needed).
std::string csv_field(std::string_view s);
/// Shortest round-trip decimal form of x ("nan"/"inf" spelled out).
std::string format_number(double x);
/// Header plus rows, CRLF line endings.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

/// Self-contained SVG line plot of a series with an optional +-2 stderr band.
std::string svg_line_plot(const Series& s, std::string_view title);

/// One-screen text summary: scalars and verdicts.
std::string summary_table(const ExperimentReport& r);

}  // namespace cnls
