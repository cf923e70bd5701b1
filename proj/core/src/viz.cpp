#include "morphscope/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "binary_io.hpp"
#include "csv.hpp"
#include "morphscope/error.hpp"

namespace morphscope {

namespace {

constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                              "#9467bd", "#8c564b", "#e377c2", "#17becf"};

// Plot area margins in pixels.
constexpr double kLeft = 70.0, kRight = 150.0, kTop = 40.0, kBottom = 60.0;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

std::string escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double width, height;
  double x0, x1, y0, y1;  // data range

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (width - kLeft - kRight); }
  double py(double y) const { return height - kBottom - (y - y0) / (y1 - y0) * (height - kTop - kBottom); }
  double plot_right() const { return width - kRight; }
  double plot_bottom() const { return height - kBottom; }
};

std::string header(const PlotStyle& style, std::string_view description) {
  if (style.width < 300 || style.height < 200) raise(ErrorKind::argument, "plot must be at least 300x200 pixels");
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + std::to_string(style.width) +
       "\" height=\"" + std::to_string(style.height) + "\" viewBox=\"0 0 " + std::to_string(style.width) + " " +
       std::to_string(style.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<desc>" + escape(description) + "</desc>\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(style.width) + "\" height=\"" +
       std::to_string(style.height) + "\" fill=\"white\"/>\n";
  if (!style.title.empty()) {
    s += "<text x=\"" + num(style.width / 2.0) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         escape(style.title) + "</text>\n";
  }
  return s;
}

std::vector<double> ticks(double lo, double hi, int count) {
  std::vector<double> t;
  if (count <= 0) return t;
  for (int i = 0; i <= count; ++i) t.push_back(lo + (hi - lo) * i / count);
  return t;
}

std::string axes(const Frame& f, std::string_view xlabel, std::string_view ylabel, int xticks, int yticks) {
  std::string s = "<g stroke=\"black\" fill=\"none\">\n";
  s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(f.plot_right() - kLeft) +
       "\" height=\"" + num(f.plot_bottom() - kTop) + "\"/>\n";
  s += "</g>\n<g stroke=\"#dddddd\">\n";
  for (double t : ticks(f.x0, f.x1, xticks))
    s += "<line x1=\"" + num(f.px(t)) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(f.px(t)) + "\" y2=\"" +
         num(f.plot_bottom()) + "\"/>\n";
  for (double t : ticks(f.y0, f.y1, yticks))
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(f.py(t)) + "\" x2=\"" + num(f.plot_right()) + "\" y2=\"" +
         num(f.py(t)) + "\"/>\n";
  s += "</g>\n<g fill=\"black\">\n";
  for (double t : ticks(f.x0, f.x1, xticks))
    s += "<text x=\"" + num(f.px(t)) + "\" y=\"" + num(f.plot_bottom() + 16) + "\" text-anchor=\"middle\">" +
         num(t) + "</text>\n";
  for (double t : ticks(f.y0, f.y1, yticks))
    s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(f.py(t) + 4) + "\" text-anchor=\"end\">" + num(t) +
         "</text>\n";
  s += "<text x=\"" + num((kLeft + f.plot_right()) / 2) + "\" y=\"" + num(f.height - 18) +
       "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  s += "<text x=\"18\" y=\"" + num((kTop + f.plot_bottom()) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
       num((kTop + f.plot_bottom()) / 2) + ")\">" + escape(ylabel) + "</text>\n";
  s += "</g>\n";
  return s;
}

std::string legend(const Frame& f, const std::vector<std::string>& labels) {
  std::string s = "<g class=\"legend\">\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = kTop + 10 + 18.0 * static_cast<double>(i);
    s += "<rect x=\"" + num(f.plot_right() + 12) + "\" y=\"" + num(y - 9) + "\" width=\"10\" height=\"10\" fill=\"" +
         kPalette[i % kPalette.size()] + "\"/>\n";
    s += "<text x=\"" + num(f.plot_right() + 28) + "\" y=\"" + num(y) + "\">" + escape(labels[i]) + "</text>\n";
  }
  return s + "</g>\n";
}

double nice_upper(double v) {
  if (!(v > 0.0)) return 10.0;
  return std::min(100.0, std::max(10.0, 10.0 * std::ceil(v / 10.0)));
}

}  // namespace

double quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) raise(ErrorKind::argument, "quantile of empty data");
  if (!(p >= 0.0 && p <= 1.0)) raise(ErrorKind::argument, "quantile level must lie in [0,1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BoxplotStats compute_boxplot(std::span<const double> values) {
  if (values.empty()) raise(ErrorKind::argument, "boxplot of empty data");
  std::vector<double> v(values.begin(), values.end());
  for (double x : v)
    if (!std::isfinite(x)) raise(ErrorKind::argument, "boxplot data must be finite");
  std::sort(v.begin(), v.end());
  BoxplotStats b;
  b.count = v.size();
  b.q1 = quantile(v, 0.25);
  b.median = quantile(v, 0.5);
  b.q3 = quantile(v, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr, hi_fence = b.q3 + 1.5 * iqr;
  b.whisker_low = *std::find_if(v.begin(), v.end(), [&](double x) { return x >= lo_fence; });
  b.whisker_high = *std::find_if(v.rbegin(), v.rend(), [&](double x) { return x <= hi_fence; });
  for (double x : v)
    if (x < lo_fence || x > hi_fence) b.outliers.push_back(x);
  return b;
}

PlotKind parse_plot_kind(std::string_view text) {
  if (text == "det") return PlotKind::det;
  if (text == "boxplot") return PlotKind::boxplot;
  if (text == "scatter") return PlotKind::scatter;
  raise(ErrorKind::argument, "unknown plot kind '" + std::string(text) + "' (det, boxplot, scatter)");
}

std::string render_det_svg(const std::vector<DetSeries>& series, const PlotStyle& style) {
  if (series.empty()) raise(ErrorKind::argument, "DET plot needs at least one curve");
  for (const auto& s : series)
    if (s.curve.points.empty()) raise(ErrorKind::argument, "DET curve '" + s.label + "' is empty");
  const Frame f{static_cast<double>(style.width), static_cast<double>(style.height), 0.0, 100.0, 0.0, 100.0};
  std::string out = header(style, "DET curve: BPCER against MACER");
  out += axes(f, "MACER (%)", "BPCER (%)", 10, 10);
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < series.size(); ++i) {
    out += "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" + std::string(kPalette[i % kPalette.size()]) +
           "\" points=\"";
    bool first = true;
    for (const auto& p : series[i].curve.points) {
      out += (first ? "" : " ") + num(f.px(100.0 * p.macer)) + "," + num(f.py(100.0 * p.bpcer));
      first = false;
    }
    out += "\"/>\n";
    labels.push_back(series[i].label);
  }
  out += legend(f, labels);
  return out + "</svg>\n";
}

std::string render_boxplot_svg(const std::vector<BoxSeries>& series, const PlotStyle& style) {
  if (series.empty()) raise(ErrorKind::argument, "boxplot needs at least one series");
  std::vector<BoxplotStats> stats;
  double top = 0.0;
  for (const auto& s : series) {
    if (s.values.empty()) raise(ErrorKind::argument, "boxplot series '" + s.label + "' is empty");
    stats.push_back(compute_boxplot(s.values));
    top = std::max(top, *std::max_element(s.values.begin(), s.values.end()));
  }
  const double k = static_cast<double>(series.size());
  const Frame f{static_cast<double>(style.width), static_cast<double>(style.height), 0.0, k, 0.0, nice_upper(top)};
  std::string out = header(style, "Boxplot of D-EER");
  // No vertical grid: x is categorical.
  out += axes(f, "", "D-EER (%)", 0, 10);
  const double box_w = 0.5 * (f.px(1.0) - f.px(0.0));
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& b = stats[i];
    const double cx = f.px(static_cast<double>(i) + 0.5);
    const std::string color = kPalette[i % kPalette.size()];
    out += "<g class=\"box\" stroke=\"black\">\n";
    out += "<line x1=\"" + num(cx) + "\" y1=\"" + num(f.py(b.whisker_low)) + "\" x2=\"" + num(cx) + "\" y2=\"" +
           num(f.py(b.q1)) + "\"/>\n";
    out += "<line x1=\"" + num(cx) + "\" y1=\"" + num(f.py(b.q3)) + "\" x2=\"" + num(cx) + "\" y2=\"" +
           num(f.py(b.whisker_high)) + "\"/>\n";
    for (double w : {b.whisker_low, b.whisker_high})
      out += "<line x1=\"" + num(cx - box_w / 4) + "\" y1=\"" + num(f.py(w)) + "\" x2=\"" + num(cx + box_w / 4) +
             "\" y2=\"" + num(f.py(w)) + "\"/>\n";
    out += "<rect x=\"" + num(cx - box_w / 2) + "\" y=\"" + num(f.py(b.q3)) + "\" width=\"" + num(box_w) +
           "\" height=\"" + num(f.py(b.q1) - f.py(b.q3)) + "\" fill=\"" + color + "\" fill-opacity=\"0.5\"/>\n";
    out += "<line x1=\"" + num(cx - box_w / 2) + "\" y1=\"" + num(f.py(b.median)) + "\" x2=\"" + num(cx + box_w / 2) +
           "\" y2=\"" + num(f.py(b.median)) + "\" stroke-width=\"2\"/>\n";
    for (double o : b.outliers)
      out += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(f.py(o)) + "\" r=\"3\" fill=\"none\"/>\n";
    out += "</g>\n";
    out += "<text x=\"" + num(cx) + "\" y=\"" + num(f.plot_bottom() + 16) + "\" text-anchor=\"middle\">" +
           escape(series[i].label) + "</text>\n";
    labels.push_back(series[i].label);
  }
  out += legend(f, labels);
  return out + "</svg>\n";
}

std::string render_scatter_svg(const std::vector<ScatterPoint>& points, const PlotStyle& style) {
  if (points.empty()) raise(ErrorKind::argument, "scatter plot needs at least one point");
  double xmin = points[0].x, xmax = points[0].x, ymin = points[0].y, ymax = points[0].y;
  std::set<std::string> group_set;
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) raise(ErrorKind::argument, "scatter coordinates must be finite");
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
    group_set.insert(p.group);
  }
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo;
    const double m = span > 0.0 ? 0.05 * span : 1.0;
    lo -= m;
    hi += m;
  };
  pad(xmin, xmax);
  pad(ymin, ymax);
  const Frame f{static_cast<double>(style.width), static_cast<double>(style.height), xmin, xmax, ymin, ymax};
  const std::vector<std::string> groups(group_set.begin(), group_set.end());
  std::map<std::string, std::size_t> color_of;
  for (std::size_t i = 0; i < groups.size(); ++i) color_of[groups[i]] = i;

  std::string out = header(style, "t-SNE embedding of CLS features");
  out += axes(f, "t-SNE dimension 1", "t-SNE dimension 2", 5, 5);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out += "<g class=\"group\" fill=\"" + std::string(kPalette[g % kPalette.size()]) + "\">\n";
    for (const auto& p : points) {
      if (color_of.at(p.group) != g) continue;
      out += "<circle cx=\"" + num(f.px(p.x)) + "\" cy=\"" + num(f.py(p.y)) + "\" r=\"2.5\"/>\n";
    }
    out += "</g>\n";
  }
  out += legend(f, groups);
  return out + "</svg>\n";
}

std::string det_series_csv(const std::vector<DetSeries>& series) {
  std::string out = "series,macer,bpcer\n";
  char buf[80];
  for (const auto& s : series) {
    for (const auto& p : s.curve.points) {
      std::snprintf(buf, sizeof(buf), ",%.9g,%.9g\n", p.macer, p.bpcer);
      out += detail::csv_field(s.label) + buf;
    }
  }
  return out;
}

std::string boxplot_csv(const std::vector<BoxSeries>& series) {
  std::string out = "series,count,whisker_low,q1,median,q3,whisker_high,outliers\n";
  char buf[160];
  for (const auto& s : series) {
    const BoxplotStats b = compute_boxplot(s.values);
    std::snprintf(buf, sizeof(buf), ",%zu,%.9g,%.9g,%.9g,%.9g,%.9g,", b.count, b.whisker_low, b.q1, b.median, b.q3,
                  b.whisker_high);
    std::string outliers;
    for (double o : b.outliers) {
      char ob[32];
      std::snprintf(ob, sizeof(ob), "%.9g", o);
      outliers += (outliers.empty() ? "" : ";") + std::string(ob);
    }
    out += detail::csv_field(s.label) + buf + outliers + "\n";
  }
  return out;
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) raise(ErrorKind::io, "write failed for " + path.string());
}

}  // namespace morphscope
