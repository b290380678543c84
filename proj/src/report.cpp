#include "cnls/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cnls {

bool ExperimentReport::passed() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
}

const Scalar* ExperimentReport::scalar(std::string_view n) const {
  for (const auto& s : scalars) if (s.name == n) return &s;
  return nullptr;
}

const Series* ExperimentReport::find_series(std::string_view n) const {
  for (const auto& s : series) if (s.name == n) return &s;
  return nullptr;
}

void ExperimentReport::add_scalar(std::string n, double value, double se) {
  scalars.push_back({std::move(n), value, se});
}

void ExperimentReport::add_verdict(std::string n, bool pass, std::string criterion, std::string detail) {
  verdicts.push_back({std::move(n), pass, std::move(criterion), std::move(detail)});
}

namespace {

nlohmann::json number(double x) {
  if (std::isfinite(x)) return x;
  return format_number(x);  // JSON has no inf/nan
}

nlohmann::json numbers(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

}  // namespace

nlohmann::json to_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["experiment"] = r.name;
  j["seed"] = r.seed;
  j["config"] = r.config;
  j["passed"] = r.passed();
  auto& verdicts = j["verdicts"] = nlohmann::json::array();
  for (const auto& v : r.verdicts) {
    verdicts.push_back({{"name", v.name}, {"pass", v.pass}, {"criterion", v.criterion}, {"detail", v.detail}});
  }
  auto& scalars = j["scalars"] = nlohmann::json::object();
  for (const auto& s : r.scalars) {
    nlohmann::json e{{"value", number(s.value)}};
    if (s.stderr_ >= 0.0) e["stderr"] = number(s.stderr_);
    scalars[s.name] = e;
  }
  auto& series = j["series"] = nlohmann::json::object();
  for (const auto& s : r.series) {
    nlohmann::json e{{"t", numbers(s.t)}, {"value", numbers(s.value)}, {"y_label", s.y_label}};
    if (!s.stderr_.empty()) e["stderr"] = numbers(s.stderr_);
    series[s.name] = e;
  }
  j["counts"] = r.counts;
  j["notes"] = r.notes;
  j["wall_clock_s"] = r.wall_clock_s;
  return j;
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) os << ',';
      os << csv_field(fields[i]);
    }
    os << "\r\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
}

std::string svg_line_plot(const Series& s, std::string_view title) {
  const double W = 640, H = 400, left = 70, right = 20, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  double tmin = INFINITY, tmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  const bool band = s.stderr_.size() == s.value.size();
  for (std::size_t i = 0; i < s.t.size(); ++i) {
    if (!std::isfinite(s.t[i]) || !std::isfinite(s.value[i])) continue;
    tmin = std::min(tmin, s.t[i]);
    tmax = std::max(tmax, s.t[i]);
    const double e = band && std::isfinite(s.stderr_[i]) ? 2.0 * s.stderr_[i] : 0.0;
    ymin = std::min(ymin, s.value[i] - e);
    ymax = std::max(ymax, s.value[i] + e);
  }
  if (!std::isfinite(tmin)) tmin = 0, tmax = 1, ymin = 0, ymax = 1;
  if (tmax == tmin) tmax = tmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto X = [&](double t) { return left + (t - tmin) / (tmax - tmin) * pw; };
  auto Y = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };
  char buf[128];
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double t = tmin + (tmax - tmin) * k / 4.0, y = ymin + (ymax - ymin) * k / 4.0;
    std::snprintf(buf, sizeof buf, "%.3g", t);
    o << "<text x=\"" << X(t) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.3g", y);
    o << "<text x=\"" << left - 6 << "\" y=\"" << Y(y) + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
    o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << Y(y) << "\" y2=\"" << Y(y)
      << "\" stroke=\"#ddd\"/>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">t</text>\n";
  o << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << top + ph / 2 << ")\">" << s.y_label << "</text>\n";
  auto points = [&](auto&& yfun, bool reverse) {
    std::ostringstream p;
    const std::size_t n = s.t.size();
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = reverse ? n - 1 - k : k;
      const double y = yfun(i);
      if (!std::isfinite(s.t[i]) || !std::isfinite(y)) continue;
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(s.t[i]), Y(y));
      p << buf;
    }
    return p.str();
  };
  if (band) {
    o << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\" points=\""
      << points([&](std::size_t i) { return s.value[i] + 2 * s.stderr_[i]; }, false)
      << points([&](std::size_t i) { return s.value[i] - 2 * s.stderr_[i]; }, true) << "\"/>\n";
  }
  o << "<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\" points=\""
    << points([&](std::size_t i) { return s.value[i]; }, false) << "\"/>\n";
  o << "</svg>\n";
  return o.str();
}

void write_report(const ExperimentReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "report.json", std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir / "report.json").string());
    os << to_json(r).dump(2) << '\n';
  }
  for (const auto& s : r.series) {
    std::string stem = s.name;
    for (char& c : stem) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.') c = '_';
    }
    std::vector<std::vector<std::string>> rows;
    const bool se = s.stderr_.size() == s.value.size();
    for (std::size_t i = 0; i < s.t.size(); ++i) {
      std::vector<std::string> row{format_number(s.t[i]), format_number(s.value[i])};
      if (se) row.push_back(format_number(s.stderr_[i]));
      rows.push_back(std::move(row));
    }
    std::vector<std::string> header{"t", s.y_label.empty() ? "value" : s.y_label};
    if (se) header.push_back("stderr");
    write_csv(dir / ("series_" + stem + ".csv"), header, rows);
    std::ofstream svg(dir / ("plot_" + stem + ".svg"), std::ios::binary);
    svg << svg_line_plot(s, r.name + ": " + s.name);
  }
}

std::string summary_table(const ExperimentReport& r) {
  std::ostringstream o;
  char buf[256];
  o << "experiment  " << r.name << "   seed " << r.seed << "\n";
  for (const auto& [k, v] : r.counts) o << "  " << k << " = " << v << "\n";
  if (!r.scalars.empty()) o << "scalars\n";
  for (const auto& s : r.scalars) {
    if (s.stderr_ >= 0.0) {
      std::snprintf(buf, sizeof buf, "  %-34s %14.6g +- %.3g\n", s.name.c_str(), s.value, s.stderr_);
    } else {
      std::snprintf(buf, sizeof buf, "  %-34s %14.6g\n", s.name.c_str(), s.value);
    }
    o << buf;
  }
  if (!r.verdicts.empty()) o << "verdicts\n";
  for (const auto& v : r.verdicts) {
    std::snprintf(buf, sizeof buf, "  [%s] %-30s %s", v.pass ? "PASS" : "FAIL", v.name.c_str(), v.criterion.c_str());
    o << buf;
    if (!v.detail.empty()) o << "  (" << v.detail << ")";
    o << "\n";
  }
  std::snprintf(buf, sizeof buf, "%s  in %.1f s\n", r.passed() ? "all verdicts pass" : "SOME VERDICTS FAIL",
                r.wall_clock_s);
  o << buf;
  return o.str();
}

}  // namespace cnls
