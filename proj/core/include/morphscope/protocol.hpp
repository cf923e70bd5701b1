#pragma once

// Dataset manifests, the leave-one-out cross-dataset grid (train on one
// morphing algorithm, test on every algorithm of the same processing type),
// and D-EER aggregation over grid cells.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "morphscope/features.hpp"
#include "morphscope/metrics.hpp"
#include "morphscope/preprocess.hpp"
#include "morphscope/svm.hpp"

namespace morphscope {

enum class MorphAlgorithm { landmark_i, landmark_ii, stylegan_iwbf, mipgan_i, mipgan_ii, none };
enum class Processing { digital, print_scan, print_scan_compressed };
enum class Label { bona, morph };
enum class Split { train, test };

inline constexpr std::array<MorphAlgorithm, 5> kMorphAlgorithms{
    MorphAlgorithm::landmark_i, MorphAlgorithm::landmark_ii, MorphAlgorithm::stylegan_iwbf,
    MorphAlgorithm::mipgan_i, MorphAlgorithm::mipgan_ii};
inline constexpr std::array<Processing, 3> kProcessingTypes{
    Processing::digital, Processing::print_scan, Processing::print_scan_compressed};

std::string_view to_string(MorphAlgorithm a);
std::string_view to_string(Processing p);
std::string_view to_string(Label l);
std::string_view to_string(Split s);
/// Unknown strings raise ErrorKind::schema.
MorphAlgorithm parse_morph_algorithm(std::string_view text);
Processing parse_processing(std::string_view text);
Label parse_label(std::string_view text);
Split parse_split(std::string_view text);

struct ManifestRecord {
  std::string path;  // as written in the manifest; doubles as the image id
  Label label = Label::bona;
  MorphAlgorithm algorithm = MorphAlgorithm::none;
  Processing processing = Processing::digital;
  std::optional<BBox> bbox;
  std::optional<Split> split;
  std::optional<std::string> subject;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;  // relative image paths resolve against this

  std::filesystem::path resolve(const ManifestRecord& r) const;
};

/// JSON-lines: one object per line with keys path, label, morph_algorithm,
/// processing and optional bbox [x,y,w,h], split, subject.
DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
void validate_manifest(const DatasetManifest& manifest);

/// Explicit splits are kept. Remaining bona fide records are split
/// subject-disjointly when subject ids exist, otherwise by a seeded 50/50
/// shuffle per processing type; remaining morphs by a seeded 50/50 shuffle
/// per (algorithm, processing) cell.
std::vector<Split> assign_splits(const DatasetManifest& manifest, std::uint64_t seed);

struct CellResult {
  double d_eer = 0.0;  // percent
  double bpcer_at_5 = 0.0;
  double bpcer_at_10 = 0.0;

  friend bool operator==(const CellResult&, const CellResult&) = default;
};

struct ProcessingGrid {
  Processing processing = Processing::digital;
  std::vector<MorphAlgorithm> algorithms;
  std::vector<CellResult> cells;  // row-major [train][test]

  const CellResult& at(std::size_t train, std::size_t test) const {
    return cells[train * algorithms.size() + test];
  }
  CellResult& at(std::size_t train, std::size_t test) { return cells[train * algorithms.size() + test]; }

  friend bool operator==(const ProcessingGrid&, const ProcessingGrid&) = default;
};

struct GridReport {
  std::vector<ProcessingGrid> grids;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const GridReport&, const GridReport&) = default;
};

struct GridOptions {
  std::uint64_t seed = 42;
  std::vector<MorphAlgorithm> algorithms;  // empty: every algorithm in the manifest
  std::vector<Processing> processing;      // empty: every processing type in the manifest
  std::size_t workers = 1;
  std::function<void(Processing, MorphAlgorithm, const LinearModel&)> on_model;
  std::function<void(Processing, MorphAlgorithm train, MorphAlgorithm test, const LabeledScores&)> on_cell;
};

/// Trains one SVM per (processing, train algorithm) and evaluates it on every
/// test algorithm of the same processing type. Missing cells raise
/// ErrorKind::protocol naming the cell. Callbacks fire in grid order on the
/// calling thread.
GridReport run_grid(const DatasetManifest& manifest, const FeatureSet& features,
                    const SvmConfig& svm, const GridOptions& options = {});

enum class StatsMode { all, inter, intra };
enum class StdConvention { population, sample };

std::string_view to_string(StatsMode m);
std::string_view to_string(StdConvention c);
StatsMode parse_stats_mode(std::string_view text);
StdConvention parse_std_convention(std::string_view text);

struct ProcessingStats {
  Processing processing = Processing::digital;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

struct StatsSummary {
  StatsMode mode = StatsMode::all;
  StdConvention convention = StdConvention::population;
  std::vector<ProcessingStats> per_processing;
};

/// Mean and standard deviation of D-EER over all, off-diagonal (inter) or
/// diagonal (intra) cells, per processing type. Population σ by default.
StatsSummary aggregate_stats(const GridReport& grid, StatsMode mode,
                             StdConvention convention = StdConvention::population);

enum class ReportFormat { csv, json, markdown };

ReportFormat parse_report_format(std::string_view text);
std::string render_report(const GridReport& grid, const std::vector<StatsSummary>& stats,
                          ReportFormat format);
void emit_report(const GridReport& grid, const std::vector<StatsSummary>& stats,
                 ReportFormat format, const std::filesystem::path& path);

GridReport parse_grid_json(std::string_view text);
GridReport load_grid(const std::filesystem::path& path);

}  // namespace morphscope
