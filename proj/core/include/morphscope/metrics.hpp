#pragma once

// Morphing-attack detection error rates. Convention: a sample is classified
// as a morph iff score >= threshold, so
//   BPCER(t) = |{bona >= t}| / |bona|,   MACER(t) = |{morph < t}| / |morph|.

#include <filesystem>
#include <string>
#include <vector>

namespace morphscope {

struct LabeledScores {
  std::vector<double> bona;
  std::vector<double> morph;
};

struct ErrorRates {
  double bpcer = 0.0;  // fractions in [0,1]
  double macer = 0.0;
};

/// One threshold of the sweep with its rates (fractions).
struct OperatingPoint {
  double threshold = 0.0;
  double bpcer = 0.0;
  double macer = 0.0;
};

struct DetPoint {
  double macer = 0.0;
  double bpcer = 0.0;
  friend bool operator==(const DetPoint&, const DetPoint&) = default;
};

struct DetCurve {
  std::vector<DetPoint> points;  // MACER strictly increasing, BPCER nonincreasing
};

/// Throws ErrorKind::argument when either class is empty or a score is not finite.
void check_scores(const LabeledScores& s);

ErrorRates error_rates(const LabeledScores& s, double threshold);

/// Thresholds at −∞, the midpoints between adjacent distinct pooled scores,
/// and +∞, in increasing order.
std::vector<OperatingPoint> threshold_sweep(const LabeledScores& s);

DetCurve det_curve(const LabeledScores& s);

/// Detection equal error rate in percent: linear interpolation where
/// BPCER − MACER changes sign along the sweep.
double d_eer(const LabeledScores& s);

/// Lowest BPCER (percent) over thresholds whose MACER ≤ target_percent.
double bpcer_at_macer(const LabeledScores& s, double target_percent);

struct MetricSummary {
  double d_eer = 0.0;  // all in percent
  double bpcer_at_5 = 0.0;
  double bpcer_at_10 = 0.0;
};

MetricSummary summarize(const LabeledScores& s);

struct ScoreRecord {
  std::string image_id;
  bool morph = false;
  double score = 0.0;
};

/// CSV with header image_id,label,score (label is "bona" or "morph").
void write_score_csv(const std::vector<ScoreRecord>& records, const std::filesystem::path& path);
std::vector<ScoreRecord> read_score_csv(const std::filesystem::path& path);
LabeledScores to_labeled(const std::vector<ScoreRecord>& records);

/// CSV with header macer,bpcer (fractions).
void write_det_csv(const DetCurve& curve, const std::filesystem::path& path);

}  // namespace morphscope
