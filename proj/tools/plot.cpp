#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace vm3ac::cli {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& text, bool& ok) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  ok = !text.empty() && end == text.c_str() + text.size();
  return v;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

MetricsSeries read_metrics(const std::filesystem::path& csv, const std::string& column) {
  std::ifstream in(csv);
  if (!in) throw PlotError(csv.string() + ": cannot open");
  MetricsSeries s;
  s.source = csv.string();
  std::vector<std::string> header;
  std::size_t step_col = 0, value_col = 0;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line);
    if (header.empty()) {
      header = cells;
      const auto find = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw PlotError(csv.string() + ":" + std::to_string(lineno) + ": no column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
      };
      step_col = find("env_step");
      value_col = find(column);
      continue;
    }
    if (cells.size() != header.size()) {
      throw PlotError(csv.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(cells.size()));
    }
    bool ok_step = false, ok_value = false;
    const double step = parse_number(cells[step_col], ok_step);
    const double value = parse_number(cells[value_col], ok_value);
    if (!ok_step || (!ok_value && cells[value_col] != "nan")) {
      throw PlotError(csv.string() + ":" + std::to_string(lineno) + ": non-numeric value");
    }
    if (std::isnan(value)) continue;
    s.env_step.push_back(step);
    s.value.push_back(value);
  }
  return s;
}

Band aggregate(const std::vector<MetricsSeries>& series, std::size_t bins) {
  Band band;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series) {
    for (double x : s.env_step) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (!std::isfinite(lo) || bins == 0) return band;
  const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  const auto cell = [&](double x) {
    return std::min(bins - 1, static_cast<std::size_t>((x - lo) / width));
  };
  std::vector<std::vector<double>> per_series(series.size(), std::vector<double>(bins, std::nan("")));
  for (std::size_t k = 0; k < series.size(); ++k) {
    std::vector<double> sum(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (std::size_t r = 0; r < series[k].env_step.size(); ++r) {
      const auto c = cell(series[k].env_step[r]);
      sum[c] += series[k].value[r];
      ++count[c];
    }
    for (std::size_t c = 0; c < bins; ++c) {
      if (count[c]) per_series[k][c] = sum[c] / static_cast<double>(count[c]);
    }
  }
  for (std::size_t c = 0; c < bins; ++c) {
    double total = 0.0, mn = std::numeric_limits<double>::infinity(), mx = -mn;
    std::size_t n = 0;
    for (const auto& s : per_series) {
      if (std::isnan(s[c])) continue;
      total += s[c];
      mn = std::min(mn, s[c]);
      mx = std::max(mx, s[c]);
      ++n;
    }
    if (!n) continue;
    band.x.push_back(lo + (static_cast<double>(c) + 0.5) * width);
    band.mean.push_back(total / static_cast<double>(n));
    band.lo.push_back(mn);
    band.hi.push_back(mx);
  }
  return band;
}

std::string render_svg(const Band& band, const std::string& title, const std::string& y_label) {
  const double w = 640, h = 400, left = 70, right = 20, top = 40, bottom = 50;
  double x0 = band.x.front(), x1 = band.x.back();
  double y0 = *std::min_element(band.lo.begin(), band.lo.end());
  double y1 = *std::max_element(band.hi.begin(), band.hi.end());
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (w - left - right); };
  const auto py = [&](double y) { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\">" << title
      << "</text>\n";
  svg << "<polygon fill=\"#4c72b0\" fill-opacity=\"0.25\" points=\"";
  for (std::size_t i = 0; i < band.x.size(); ++i) svg << px(band.x[i]) << ',' << py(band.hi[i]) << ' ';
  for (std::size_t i = band.x.size(); i-- > 0;) svg << px(band.x[i]) << ',' << py(band.lo[i]) << ' ';
  svg << "\"/>\n<polyline fill=\"none\" stroke=\"#4c72b0\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < band.x.size(); ++i) svg << px(band.x[i]) << ',' << py(band.mean[i]) << ' ';
  svg << "\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4.0, fy = y0 + (y1 - y0) * t / 4.0;
    svg << "<text x=\"" << px(fx) << "\" y=\"" << h - bottom + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(fx) << "</text>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << py(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(fy) << "</text>\n";
  }
  svg << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">env_step</text>\n";
  svg << "<text x=\"16\" y=\"" << (top + h - bottom) / 2 << "\" transform=\"rotate(-90 16 " << (top + h - bottom) / 2
      << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << y_label << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

bool plot_metrics(const std::vector<std::filesystem::path>& csvs, const std::string& column,
                  const std::filesystem::path& svg, std::size_t bins) {
  std::vector<MetricsSeries> series;
  for (const auto& p : csvs) series.push_back(read_metrics(p, column));
  const Band band = aggregate(series, bins);
  if (band.x.empty()) return false;
  if (svg.has_parent_path()) std::filesystem::create_directories(svg.parent_path());
  std::ofstream out(svg);
  if (!out) throw PlotError(svg.string() + ": cannot write");
  out << render_svg(band, column + " over " + std::to_string(csvs.size()) + " run(s)", column);
  return true;
}

}  // namespace vm3ac::cli
