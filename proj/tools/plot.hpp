#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace vm3ac::cli {

class PlotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricsSeries {
  std::string source;
  std::vector<double> env_step;
  std::vector<double> value;
};

/// Reads `column` against env_step from a metrics CSV. Comment lines start
/// with '#'. Rows whose value is "nan" are dropped.
MetricsSeries read_metrics(const std::filesystem::path& csv, const std::string& column);

struct Band {
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> lo;
  std::vector<double> hi;
};

/// Bins every series onto a shared grid of `bins` env_step cells and reduces
/// across series: mean, min, max of the per-series cell averages.
Band aggregate(const std::vector<MetricsSeries>& series, std::size_t bins);

std::string render_svg(const Band& band, const std::string& title, const std::string& y_label);

/// Returns false (and writes nothing) when no CSV has data rows.
bool plot_metrics(const std::vector<std::filesystem::path>& csvs, const std::string& column,
                  const std::filesystem::path& svg, std::size_t bins = 50);

}  // namespace vm3ac::cli
