#pragma once

// Standalone SVG 1.1 plots: DET curves, D-EER boxplots and t-SNE scatter
// plots. Output depends only on the input, so identical data renders to
// identical bytes.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "morphscope/metrics.hpp"

namespace morphscope {

/// Tukey boxplot: quartiles by linear interpolation of order statistics
/// (q = (n−1)·p), whiskers at the most extreme points within 1.5·IQR.
struct BoxplotStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double whisker_low = 0.0;
  double whisker_high = 0.0;
  std::vector<double> outliers;  // ascending
  std::size_t count = 0;
};

/// Linear-interpolation quantile of ascending data, p ∈ [0,1].
double quantile(std::span<const double> sorted, double p);
BoxplotStats compute_boxplot(std::span<const double> values);

enum class PlotKind { det, boxplot, scatter };

PlotKind parse_plot_kind(std::string_view text);

struct PlotStyle {
  int width = 640;
  int height = 480;
  std::string title;
};

struct DetSeries {
  std::string label;
  DetCurve curve;
};

struct BoxSeries {
  std::string label;
  std::vector<double> values;  // D-EER percent
};

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  std::string group;
};

/// Empty input raises ErrorKind::argument.
std::string render_det_svg(const std::vector<DetSeries>& series, const PlotStyle& style = {});
std::string render_boxplot_svg(const std::vector<BoxSeries>& series, const PlotStyle& style = {});
std::string render_scatter_svg(const std::vector<ScatterPoint>& points, const PlotStyle& style = {});

/// CSV exports of the plotted series.
std::string det_series_csv(const std::vector<DetSeries>& series);
std::string boxplot_csv(const std::vector<BoxSeries>& series);

void write_text(const std::string& text, const std::filesystem::path& path);

}  // namespace morphscope
