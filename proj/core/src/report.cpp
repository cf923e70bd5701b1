#include <cstdio>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "csv.hpp"
#include "json.hpp"
#include "morphscope/error.hpp"
#include "morphscope/protocol.hpp"

namespace morphscope {

namespace {

using nlohmann::json;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string_view display_name(Processing p) {
  switch (p) {
    case Processing::digital: return "Digital";
    case Processing::print_scan: return "Print-scan";
    case Processing::print_scan_compressed: return "Print-scan compressed";
  }
  return "?";
}

std::string render_csv(const GridReport& grid) {
  std::string out = "processing,train_algorithm,test_algorithm,d_eer,bpcer_at_macer_5,bpcer_at_macer_10\n";
  for (const auto& g : grid.grids) {
    const std::size_t n = g.algorithms.size();
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t u = 0; u < n; ++u) {
        const CellResult& c = g.at(t, u);
        out += detail::csv_field(to_string(g.processing)) + ',' + detail::csv_field(to_string(g.algorithms[t])) + ',' +
               detail::csv_field(to_string(g.algorithms[u])) + ',' + fixed(c.d_eer, 4) + ',' +
               fixed(c.bpcer_at_5, 4) + ',' + fixed(c.bpcer_at_10, 4) + '\n';
      }
    }
  }
  return out;
}

json stats_json(const StatsSummary& s) {
  json per = json::array();
  for (const auto& p : s.per_processing) {
    per.push_back({{"processing", std::string(to_string(p.processing))},
                   {"mean", p.mean},
                   {"stddev", p.stddev},
                   {"count", p.count}});
  }
  return {{"mode", std::string(to_string(s.mode))},
          {"convention", std::string(to_string(s.convention))},
          {"per_processing", per}};
}

std::string render_json(const GridReport& grid, const std::vector<StatsSummary>& stats) {
  json grids = json::array();
  for (const auto& g : grid.grids) {
    json algs = json::array();
    for (auto a : g.algorithms) algs.push_back(std::string(to_string(a)));
    json cells = json::array();
    const std::size_t n = g.algorithms.size();
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t u = 0; u < n; ++u) {
        const CellResult& c = g.at(t, u);
        cells.push_back({{"train", std::string(to_string(g.algorithms[t]))},
                         {"test", std::string(to_string(g.algorithms[u]))},
                         {"d_eer", c.d_eer},
                         {"bpcer_at_5", c.bpcer_at_5},
                         {"bpcer_at_10", c.bpcer_at_10}});
      }
    }
    grids.push_back({{"processing", std::string(to_string(g.processing))}, {"algorithms", algs}, {"cells", cells}});
  }
  json s = json::array();
  for (const auto& st : stats) s.push_back(stats_json(st));
  json doc{{"format", "morphscope-grid"}, {"version", 1}, {"metadata", grid.metadata}, {"grids", grids}, {"stats", s}};
  return doc.dump(2) + "\n";
}

std::string render_markdown(const GridReport& grid, const std::vector<StatsSummary>& stats) {
  if (grid.grids.empty()) raise(ErrorKind::argument, "grid report has no processing types");
  const auto& algorithms = grid.grids.front().algorithms;
  for (const auto& g : grid.grids) {
    if (g.algorithms != algorithms) raise(ErrorKind::argument, "processing grids use different algorithm sets");
  }

  std::ostringstream out;
  out << "# Cross-dataset MAD performance\n";
  for (std::size_t t = 0; t < algorithms.size(); ++t) {
    out << "\n## Training morph algorithm: " << to_string(algorithms[t]) << "\n\n| Testing |";
    for (const auto& g : grid.grids) {
      const auto name = display_name(g.processing);
      out << ' ' << name << " D-EER (%) | " << name << " BPCER@MACER=5% | " << name << " BPCER@MACER=10% |";
    }
    out << "\n|---|";
    for (std::size_t k = 0; k < grid.grids.size(); ++k) out << "---:|---:|---:|";
    out << '\n';
    for (std::size_t u = 0; u < algorithms.size(); ++u) {
      out << "| " << to_string(algorithms[u]) << " |";
      for (const auto& g : grid.grids) {
        const CellResult& c = g.at(t, u);
        out << ' ' << fixed(c.d_eer, 2) << " | " << fixed(c.bpcer_at_5, 2) << " | " << fixed(c.bpcer_at_10, 2) << " |";
      }
      out << '\n';
    }
  }
  if (!stats.empty()) {
    out << "\n## D-EER statistics\n\n| Processing | Cells | σ convention | μ (%) | σ (%) | n |\n|---|---|---|---:|---:|---:|\n";
    for (const auto& s : stats) {
      for (const auto& p : s.per_processing) {
        out << "| " << display_name(p.processing) << " | " << to_string(s.mode) << " | " << to_string(s.convention)
            << " | " << fixed(p.mean, 2) << " | " << fixed(p.stddev, 2) << " | " << p.count << " |\n";
      }
    }
  }
  if (!grid.metadata.empty()) {
    out << "\n## Run metadata\n\n";
    for (const auto& [k, v] : grid.metadata) out << "- " << k << ": `" << v << "`\n";
  }
  return out.str();
}

}  // namespace

ReportFormat parse_report_format(std::string_view text) {
  if (text == "csv") return ReportFormat::csv;
  if (text == "json") return ReportFormat::json;
  if (text == "markdown" || text == "md") return ReportFormat::markdown;
  raise(ErrorKind::argument, "unknown report format '" + std::string(text) + "' (csv, json, markdown)");
}

std::string render_report(const GridReport& grid, const std::vector<StatsSummary>& stats, ReportFormat format) {
  switch (format) {
    case ReportFormat::csv: return render_csv(grid);
    case ReportFormat::json: return render_json(grid, stats);
    case ReportFormat::markdown: return render_markdown(grid, stats);
  }
  raise(ErrorKind::argument, "unknown report format");
}

void emit_report(const GridReport& grid, const std::vector<StatsSummary>& stats, ReportFormat format,
                 const std::filesystem::path& path) {
  const std::string text = render_report(grid, stats, format);
  auto out = detail::open_output(path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) raise(ErrorKind::io, "write failed for " + path.string());
}

GridReport parse_grid_json(std::string_view text) {
  GridReport report;
  try {
    const json doc = json::parse(text);
    if (doc.contains("metadata")) report.metadata = doc.at("metadata").get<std::map<std::string, std::string>>();
    for (const auto& jg : doc.at("grids")) {
      ProcessingGrid g;
      g.processing = parse_processing(jg.at("processing").get<std::string>());
      for (const auto& a : jg.at("algorithms")) g.algorithms.push_back(parse_morph_algorithm(a.get<std::string>()));
      const std::size_t n = g.algorithms.size();
      const auto& cells = jg.at("cells");
      if (cells.size() != n * n) {
        raise(ErrorKind::schema, "grid for " + std::string(to_string(g.processing)) + " has " +
                                     std::to_string(cells.size()) + " cells, expected " + std::to_string(n * n));
      }
      g.cells.resize(n * n);
      std::vector<bool> filled(n * n, false);
      for (const auto& jc : cells) {
        const auto train = parse_morph_algorithm(jc.at("train").get<std::string>());
        const auto test = parse_morph_algorithm(jc.at("test").get<std::string>());
        const auto t = std::find(g.algorithms.begin(), g.algorithms.end(), train) - g.algorithms.begin();
        const auto u = std::find(g.algorithms.begin(), g.algorithms.end(), test) - g.algorithms.begin();
        if (static_cast<std::size_t>(t) == n || static_cast<std::size_t>(u) == n) {
          raise(ErrorKind::schema, "cell references an algorithm outside the grid");
        }
        const std::size_t k = static_cast<std::size_t>(t) * n + static_cast<std::size_t>(u);
        if (filled[k]) raise(ErrorKind::schema, "duplicate cell (" + std::string(to_string(train)) + ", " +
                                                    std::string(to_string(test)) + ")");
        filled[k] = true;
        g.cells[k] = {jc.at("d_eer").get<double>(), jc.at("bpcer_at_5").get<double>(),
                      jc.at("bpcer_at_10").get<double>()};
      }
      report.grids.push_back(std::move(g));
    }
  } catch (const json::exception& e) {
    raise(ErrorKind::schema, std::string("malformed grid JSON: ") + e.what());
  }
  return report;
}

GridReport load_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_grid_json(buf.str());
}

}  // namespace morphscope
