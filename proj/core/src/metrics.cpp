#include "morphscope/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "binary_io.hpp"
#include "csv.hpp"
#include "morphscope/error.hpp"

namespace morphscope {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Counts {
  std::size_t bona_accepted_as_morph;  // bona >= t
  std::size_t morph_missed;            // morph < t
};

struct Sorted {
  std::vector<double> bona, morph;
  explicit Sorted(const LabeledScores& s) : bona(s.bona), morph(s.morph) {
    std::sort(bona.begin(), bona.end());
    std::sort(morph.begin(), morph.end());
  }
  Counts at(double t) const {
    const auto b = static_cast<std::size_t>(bona.end() - std::lower_bound(bona.begin(), bona.end(), t));
    const auto m = static_cast<std::size_t>(std::lower_bound(morph.begin(), morph.end(), t) - morph.begin());
    return {b, m};
  }
};

std::vector<double> sweep_thresholds(const Sorted& s) {
  std::vector<double> pooled;
  pooled.reserve(s.bona.size() + s.morph.size());
  std::merge(s.bona.begin(), s.bona.end(), s.morph.begin(), s.morph.end(), std::back_inserter(pooled));
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());
  std::vector<double> t{-kInf};
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i) t.push_back(0.5 * (pooled[i] + pooled[i + 1]));
  t.push_back(kInf);
  return t;
}

}  // namespace

void check_scores(const LabeledScores& s) {
  if (s.bona.empty() || s.morph.empty()) {
    raise(ErrorKind::argument, "metrics need at least one bona fide and one morph score");
  }
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(s.bona.begin(), s.bona.end(), finite) ||
      !std::all_of(s.morph.begin(), s.morph.end(), finite)) {
    raise(ErrorKind::argument, "scores must be finite");
  }
}

ErrorRates error_rates(const LabeledScores& s, double threshold) {
  check_scores(s);
  if (std::isnan(threshold)) raise(ErrorKind::argument, "threshold is NaN");
  std::size_t b = 0, m = 0;
  for (double v : s.bona) b += v >= threshold;
  for (double v : s.morph) m += v < threshold;
  return {static_cast<double>(b) / static_cast<double>(s.bona.size()),
          static_cast<double>(m) / static_cast<double>(s.morph.size())};
}

std::vector<OperatingPoint> threshold_sweep(const LabeledScores& s) {
  check_scores(s);
  const Sorted sorted(s);
  const double nb = static_cast<double>(s.bona.size());
  const double nm = static_cast<double>(s.morph.size());
  std::vector<OperatingPoint> out;
  for (double t : sweep_thresholds(sorted)) {
    const Counts c = sorted.at(t);
    out.push_back({t, static_cast<double>(c.bona_accepted_as_morph) / nb,
                   static_cast<double>(c.morph_missed) / nm});
  }
  return out;
}

DetCurve det_curve(const LabeledScores& s) {
  DetCurve curve;
  for (const auto& p : threshold_sweep(s)) {
    if (!curve.points.empty() && curve.points.back().macer == p.macer) {
      curve.points.back().bpcer = std::min(curve.points.back().bpcer, p.bpcer);
    } else {
      curve.points.push_back({p.macer, p.bpcer});
    }
  }
  return curve;
}

double d_eer(const LabeledScores& s) {
  check_scores(s);
  const Sorted sorted(s);
  const auto nb = s.bona.size(), nm = s.morph.size();
  const auto thresholds = sweep_thresholds(sorted);

  // Sign of BPCER − MACER from exact integer cross-multiplication.
  auto diff_sign = [&](const Counts& c) {
    const auto lhs = c.bona_accepted_as_morph * nm;
    const auto rhs = c.morph_missed * nb;
    return lhs > rhs ? 1 : (lhs < rhs ? -1 : 0);
  };

  Counts prev = sorted.at(thresholds.front());
  for (std::size_t k = 1; k < thresholds.size(); ++k) {
    const Counts cur = sorted.at(thresholds[k]);
    const int sign = diff_sign(cur);
    if (sign > 0) {
      prev = cur;
      continue;
    }
    const double b1 = static_cast<double>(cur.bona_accepted_as_morph) / static_cast<double>(nb);
    const double m1 = static_cast<double>(cur.morph_missed) / static_cast<double>(nm);
    if (sign == 0) return 100.0 * b1;
    const double b0 = static_cast<double>(prev.bona_accepted_as_morph) / static_cast<double>(nb);
    const double m0 = static_cast<double>(prev.morph_missed) / static_cast<double>(nm);
    const double f0 = b0 - m0, f1 = b1 - m1;
    const double frac = f0 / (f0 - f1);
    return 100.0 * (m0 + frac * (m1 - m0));
  }
  // Unreachable: the +∞ sentinel always has BPCER 0 and MACER 1.
  return 50.0;
}

double bpcer_at_macer(const LabeledScores& s, double target_percent) {
  check_scores(s);
  if (!(target_percent >= 0.0 && target_percent <= 100.0)) {
    raise(ErrorKind::argument, "MACER target must lie in [0, 100] percent");
  }
  const Sorted sorted(s);
  const auto nm = static_cast<double>(s.morph.size());
  const auto allowed = static_cast<std::size_t>(std::floor(target_percent / 100.0 * nm + 1e-9));
  std::size_t best = s.bona.size();
  for (double t : sweep_thresholds(sorted)) {
    const Counts c = sorted.at(t);
    if (c.morph_missed <= allowed) best = std::min(best, c.bona_accepted_as_morph);
  }
  return 100.0 * static_cast<double>(best) / static_cast<double>(s.bona.size());
}

MetricSummary summarize(const LabeledScores& s) {
  return {d_eer(s), bpcer_at_macer(s, 5.0), bpcer_at_macer(s, 10.0)};
}

void write_score_csv(const std::vector<ScoreRecord>& records, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out << "image_id,label,score\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.score);
    out << detail::csv_field(r.image_id) << ',' << (r.morph ? "morph" : "bona") << ',' << buf << '\n';
  }
  if (!out) raise(ErrorKind::io, "write failed for " + path.string());
}

std::vector<ScoreRecord> read_score_csv(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::string line;
  if (!std::getline(in, line) || detail::split_csv_line(line) != std::vector<std::string>{"image_id", "label", "score"}) {
    raise(ErrorKind::format, path.string() + ": expected header image_id,label,score");
  }
  std::vector<ScoreRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 3) raise(ErrorKind::format, path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    ScoreRecord r;
    r.image_id = fields[0];
    if (fields[1] == "morph") r.morph = true;
    else if (fields[1] != "bona") raise(ErrorKind::data, "label must be bona or morph, got '" + fields[1] + "'");
    try {
      std::size_t used = 0;
      r.score = std::stod(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      raise(ErrorKind::format, path.string() + ":" + std::to_string(line_no) + ": bad score");
    }
    out.push_back(std::move(r));
  }
  return out;
}

LabeledScores to_labeled(const std::vector<ScoreRecord>& records) {
  LabeledScores s;
  for (const auto& r : records) (r.morph ? s.morph : s.bona).push_back(r.score);
  return s;
}

void write_det_csv(const DetCurve& curve, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out << "macer,bpcer\n";
  char buf[96];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", p.macer, p.bpcer);
    out << buf;
  }
  if (!out) raise(ErrorKind::io, "write failed for " + path.string());
}

}  // namespace morphscope
