#include "morphscope/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "json.hpp"
#include "morphscope/error.hpp"
#include "morphscope/hash.hpp"

namespace morphscope {

namespace {

using nlohmann::json;

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::array<std::pair<Enum, std::string_view>, N>& table,
                std::string_view what) {
  for (const auto& [value, name] : table)
    if (name == text) return value;
  std::string allowed;
  for (const auto& [value, name] : table) allowed += (allowed.empty() ? "" : ", ") + std::string(name);
  raise(ErrorKind::schema, "unknown " + std::string(what) + " '" + std::string(text) + "' (expected one of " +
                               allowed + ")");
}

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum v, const std::array<std::pair<Enum, std::string_view>, N>& table) {
  for (const auto& [value, name] : table)
    if (value == v) return name;
  return "?";
}

constexpr std::array<std::pair<MorphAlgorithm, std::string_view>, 6> kAlgorithmNames{{
    {MorphAlgorithm::landmark_i, "Landmark-I"},
    {MorphAlgorithm::landmark_ii, "Landmark-II"},
    {MorphAlgorithm::stylegan_iwbf, "StyleGAN-IWBF"},
    {MorphAlgorithm::mipgan_i, "MIPGAN-I"},
    {MorphAlgorithm::mipgan_ii, "MIPGAN-II"},
    {MorphAlgorithm::none, "none"},
}};
constexpr std::array<std::pair<Processing, std::string_view>, 3> kProcessingNames{{
    {Processing::digital, "digital"},
    {Processing::print_scan, "print-scan"},
    {Processing::print_scan_compressed, "print-scan-compressed"},
}};
constexpr std::array<std::pair<Label, std::string_view>, 2> kLabelNames{{
    {Label::bona, "bona"},
    {Label::morph, "morph"},
}};
constexpr std::array<std::pair<Split, std::string_view>, 2> kSplitNames{{
    {Split::train, "train"},
    {Split::test, "test"},
}};
constexpr std::array<std::pair<StatsMode, std::string_view>, 3> kStatsModeNames{{
    {StatsMode::all, "all"},
    {StatsMode::inter, "inter"},
    {StatsMode::intra, "intra"},
}};
constexpr std::array<std::pair<StdConvention, std::string_view>, 2> kConventionNames{{
    {StdConvention::population, "population"},
    {StdConvention::sample, "sample"},
}};

std::string cell_name(MorphAlgorithm a, Processing p) {
  return "(" + std::string(to_string(a)) + ", " + std::string(to_string(p)) + ")";
}

ManifestRecord parse_record(const json& j) {
  if (!j.is_object()) raise(ErrorKind::schema, "manifest line is not a JSON object");
  ManifestRecord r;
  auto required_string = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string()) raise(ErrorKind::schema, std::string("missing string field '") + key + "'");
    return j[key].get<std::string>();
  };
  r.path = required_string("path");
  if (r.path.empty()) raise(ErrorKind::schema, "empty path");
  r.label = parse_label(required_string("label"));
  if (j.contains("morph_algorithm") && !j["morph_algorithm"].is_null()) {
    if (!j["morph_algorithm"].is_string()) raise(ErrorKind::schema, "morph_algorithm must be a string");
    r.algorithm = parse_morph_algorithm(j["morph_algorithm"].get<std::string>());
  } else if (r.label == Label::morph) {
    raise(ErrorKind::schema, "morph record " + r.path + " lacks morph_algorithm");
  }
  r.processing = parse_processing(required_string("processing"));
  if (j.contains("bbox") && !j["bbox"].is_null()) {
    const auto& b = j["bbox"];
    if (!b.is_array() || b.size() != 4 || !std::all_of(b.begin(), b.end(), [](const json& v) { return v.is_number(); })) {
      raise(ErrorKind::schema, "bbox of " + r.path + " must be [x,y,w,h]");
    }
    r.bbox = BBox{std::lround(b[0].get<double>()), std::lround(b[1].get<double>()),
                  std::lround(b[2].get<double>()), std::lround(b[3].get<double>())};
  }
  if (j.contains("split") && !j["split"].is_null()) {
    if (!j["split"].is_string()) raise(ErrorKind::schema, "split must be a string");
    r.split = parse_split(j["split"].get<std::string>());
  }
  if (j.contains("subject") && !j["subject"].is_null()) {
    if (j["subject"].is_string()) r.subject = j["subject"].get<std::string>();
    else if (j["subject"].is_number_integer()) r.subject = std::to_string(j["subject"].get<long long>());
    else raise(ErrorKind::schema, "subject must be a string or integer");
  }
  return r;
}

// Deterministic in-place Fisher–Yates independent of the standard library's
// distribution implementations.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

std::vector<const ManifestRecord*> select(const DatasetManifest& m, const std::vector<Split>& splits,
                                          Label label, MorphAlgorithm alg, Processing proc, Split split) {
  std::vector<const ManifestRecord*> out;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (r.label == label && r.processing == proc && splits[i] == split &&
        (label == Label::bona || r.algorithm == alg)) {
      out.push_back(&r);
    }
  }
  return out;
}

std::span<const float> feature_of(const FeatureSet& features, const std::string& id) {
  const FeatureVector* f = features.find(id);
  if (!f) raise(ErrorKind::data, "no features for image " + id);
  return f->values;
}

struct CellTask {
  Processing processing;
  std::size_t train_index;
};

struct CellOutput {
  LinearModel model;
  std::vector<LabeledScores> scores;  // one per test algorithm
  std::vector<CellResult> results;
};

}  // namespace

std::string_view to_string(MorphAlgorithm a) { return enum_name(a, kAlgorithmNames); }
std::string_view to_string(Processing p) { return enum_name(p, kProcessingNames); }
std::string_view to_string(Label l) { return enum_name(l, kLabelNames); }
std::string_view to_string(Split s) { return enum_name(s, kSplitNames); }
std::string_view to_string(StatsMode m) { return enum_name(m, kStatsModeNames); }
std::string_view to_string(StdConvention c) { return enum_name(c, kConventionNames); }

MorphAlgorithm parse_morph_algorithm(std::string_view text) { return parse_enum(text, kAlgorithmNames, "morph algorithm"); }
Processing parse_processing(std::string_view text) { return parse_enum(text, kProcessingNames, "processing type"); }
Label parse_label(std::string_view text) { return parse_enum(text, kLabelNames, "label"); }
Split parse_split(std::string_view text) { return parse_enum(text, kSplitNames, "split"); }
StatsMode parse_stats_mode(std::string_view text) { return parse_enum(text, kStatsModeNames, "stats mode"); }
StdConvention parse_std_convention(std::string_view text) { return parse_enum(text, kConventionNames, "std convention"); }

std::filesystem::path DatasetManifest::resolve(const ManifestRecord& r) const {
  const std::filesystem::path p(r.path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      raise(ErrorKind::schema, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      m.records.push_back(parse_record(j));
    } catch (const Error& e) {
      throw Error(e.kind(), "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate_manifest(m);
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::io, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

void validate_manifest(const DatasetManifest& manifest) {
  std::unordered_set<std::string> seen;
  for (const auto& r : manifest.records) {
    if (!seen.insert(r.path).second) raise(ErrorKind::data, "duplicate manifest path " + r.path);
    if (r.label == Label::bona && r.algorithm != MorphAlgorithm::none) {
      raise(ErrorKind::data, "bona fide record " + r.path + " carries morph_algorithm " +
                                 std::string(to_string(r.algorithm)));
    }
    if (r.label == Label::morph && r.algorithm == MorphAlgorithm::none) {
      raise(ErrorKind::data, "morph record " + r.path + " has morph_algorithm none");
    }
  }
}

std::vector<Split> assign_splits(const DatasetManifest& manifest, std::uint64_t seed) {
  const auto& recs = manifest.records;
  std::vector<Split> out(recs.size(), Split::train);
  for (std::size_t i = 0; i < recs.size(); ++i)
    if (recs[i].split) out[i] = *recs[i].split;

  auto split_half = [&](std::vector<std::size_t> idx, std::uint64_t s) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return recs[a].path < recs[b].path; });
    seeded_shuffle(idx, s);
    const std::size_t n_train = (idx.size() + 1) / 2;
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = k < n_train ? Split::train : Split::test;
  };

  for (Processing proc : kProcessingTypes) {
    const std::uint64_t proc_seed = fnv1a(to_string(proc), seed ^ kFnvOffset);

    std::vector<std::size_t> bona;
    bool has_subjects = false;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (recs[i].label == Label::bona && recs[i].processing == proc && !recs[i].split) {
        bona.push_back(i);
        has_subjects |= recs[i].subject.has_value();
      }
    }
    if (has_subjects) {
      // Subjects already pinned by explicit splits keep their side.
      std::map<std::string, Split> pinned;
      for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& r = recs[i];
        if (r.label == Label::bona && r.processing == proc && r.split && r.subject) pinned.emplace(*r.subject, *r.split);
      }
      auto subject_of = [&](std::size_t i) { return recs[i].subject ? *recs[i].subject : "path:" + recs[i].path; };
      std::set<std::string> free_subjects;
      for (std::size_t i : bona)
        if (!pinned.count(subject_of(i))) free_subjects.insert(subject_of(i));
      std::vector<std::string> order(free_subjects.begin(), free_subjects.end());
      seeded_shuffle(order, proc_seed);
      const std::size_t n_train = (order.size() + 1) / 2;
      std::map<std::string, Split> side = pinned;
      for (std::size_t k = 0; k < order.size(); ++k) side[order[k]] = k < n_train ? Split::train : Split::test;
      for (std::size_t i : bona) out[i] = side.at(subject_of(i));
    } else {
      split_half(bona, proc_seed);
    }

    for (MorphAlgorithm alg : kMorphAlgorithms) {
      std::vector<std::size_t> morphs;
      for (std::size_t i = 0; i < recs.size(); ++i) {
        if (recs[i].label == Label::morph && recs[i].algorithm == alg && recs[i].processing == proc && !recs[i].split) {
          morphs.push_back(i);
        }
      }
      split_half(morphs, fnv1a(to_string(alg), proc_seed));
    }
  }
  return out;
}

GridReport run_grid(const DatasetManifest& manifest, const FeatureSet& features, const SvmConfig& svm,
                    const GridOptions& options) {
  validate_manifest(manifest);
  const std::vector<Split> splits = assign_splits(manifest, options.seed);

  std::vector<MorphAlgorithm> algorithms = options.algorithms;
  std::vector<Processing> processing = options.processing;
  if (algorithms.empty()) {
    for (MorphAlgorithm a : kMorphAlgorithms)
      if (std::any_of(manifest.records.begin(), manifest.records.end(), [&](const auto& r) { return r.algorithm == a; }))
        algorithms.push_back(a);
  }
  if (processing.empty()) {
    for (Processing p : kProcessingTypes)
      if (std::any_of(manifest.records.begin(), manifest.records.end(), [&](const auto& r) { return r.processing == p; }))
        processing.push_back(p);
  }
  if (algorithms.empty() || processing.empty()) raise(ErrorKind::protocol, "manifest references no morph cells");

  // Bona fide subjects must never straddle train and test.
  for (Processing proc : processing) {
    std::set<std::string> train_subjects;
    for (const auto* r : select(manifest, splits, Label::bona, MorphAlgorithm::none, proc, Split::train))
      if (r->subject) train_subjects.insert(*r->subject);
    for (const auto* r : select(manifest, splits, Label::bona, MorphAlgorithm::none, proc, Split::test)) {
      if (r->subject && train_subjects.count(*r->subject)) {
        raise(ErrorKind::protocol, "bona fide subject " + *r->subject + " appears in both train and test for " +
                                       std::string(to_string(proc)));
      }
    }
  }

  // Check every referenced cell before spending time on training.
  for (Processing proc : processing) {
    for (Split s : {Split::train, Split::test}) {
      if (select(manifest, splits, Label::bona, MorphAlgorithm::none, proc, s).empty()) {
        raise(ErrorKind::protocol, "empty cell " + cell_name(MorphAlgorithm::none, proc) + ": no bona fide " +
                                       std::string(to_string(s)) + " records");
      }
      for (MorphAlgorithm alg : algorithms) {
        if (select(manifest, splits, Label::morph, alg, proc, s).empty()) {
          raise(ErrorKind::protocol, "empty cell " + cell_name(alg, proc) + ": no morph " +
                                         std::string(to_string(s)) + " records");
        }
      }
    }
  }

  std::vector<CellTask> tasks;
  for (Processing proc : processing)
    for (std::size_t t = 0; t < algorithms.size(); ++t) tasks.push_back({proc, t});
  std::vector<CellOutput> outputs(tasks.size());

  auto run_task = [&](std::size_t k) {
    const CellTask& task = tasks[k];
    const MorphAlgorithm train_alg = algorithms[task.train_index];
    const auto bona_train = select(manifest, splits, Label::bona, MorphAlgorithm::none, task.processing, Split::train);
    const auto morph_train = select(manifest, splits, Label::morph, train_alg, task.processing, Split::train);

    TrainingSet data;
    data.features = Matrix(bona_train.size() + morph_train.size(), features.dim());
    std::size_t row = 0;
    for (const auto& group : {std::pair{&bona_train, -1}, std::pair{&morph_train, 1}}) {
      for (const ManifestRecord* r : *group.first) {
        if (r->processing != task.processing) raise(ErrorKind::protocol, "processing types mixed in training set");
        const auto f = feature_of(features, r->path);
        if (f.size() != features.dim()) raise(ErrorKind::shape, "feature dimension mismatch for " + r->path);
        std::copy(f.begin(), f.end(), data.features.row(row++).begin());
        data.labels.push_back(group.second);
      }
    }

    CellOutput& out = outputs[k];
    out.model = train(data, svm);

    LabeledScores bona_scores;
    for (const ManifestRecord* r : select(manifest, splits, Label::bona, MorphAlgorithm::none, task.processing, Split::test)) {
      if (r->processing != task.processing) raise(ErrorKind::protocol, "processing types mixed in test set");
      bona_scores.bona.push_back(score(out.model, feature_of(features, r->path)));
    }
    for (MorphAlgorithm test_alg : algorithms) {
      LabeledScores s;
      s.bona = bona_scores.bona;
      for (const ManifestRecord* r : select(manifest, splits, Label::morph, test_alg, task.processing, Split::test)) {
        if (r->processing != task.processing) raise(ErrorKind::protocol, "processing types mixed in test set");
        s.morph.push_back(score(out.model, feature_of(features, r->path)));
      }
      const MetricSummary m = summarize(s);
      out.results.push_back({m.d_eer, m.bpcer_at_5, m.bpcer_at_10});
      out.scores.push_back(std::move(s));
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, tasks.size());
  if (workers == 1) {
    for (std::size_t k = 0; k < tasks.size(); ++k) run_task(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(tasks.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k; (k = next.fetch_add(1)) < tasks.size();) {
          try {
            run_task(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  GridReport report;
  std::size_t k = 0;
  for (Processing proc : processing) {
    ProcessingGrid grid;
    grid.processing = proc;
    grid.algorithms = algorithms;
    for (std::size_t t = 0; t < algorithms.size(); ++t, ++k) {
      const CellOutput& out = outputs[k];
      if (options.on_model) options.on_model(proc, algorithms[t], out.model);
      for (std::size_t u = 0; u < algorithms.size(); ++u) {
        if (options.on_cell) options.on_cell(proc, algorithms[t], algorithms[u], out.scores[u]);
        grid.cells.push_back(out.results[u]);
      }
    }
    report.grids.push_back(std::move(grid));
  }
  return report;
}

StatsSummary aggregate_stats(const GridReport& grid, StatsMode mode, StdConvention convention) {
  if (grid.grids.empty()) raise(ErrorKind::argument, "grid report has no processing types");
  StatsSummary summary;
  summary.mode = mode;
  summary.convention = convention;
  for (const auto& g : grid.grids) {
    const std::size_t n = g.algorithms.size();
    if (n == 0 || g.cells.size() != n * n) {
      raise(ErrorKind::argument, "grid for " + std::string(to_string(g.processing)) + " is not square: " +
                                     std::to_string(g.cells.size()) + " cells for " + std::to_string(n) +
                                     " algorithms");
    }
    std::vector<double> values;
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t u = 0; u < n; ++u) {
        const bool diagonal = t == u;
        if (mode == StatsMode::all || (mode == StatsMode::intra) == diagonal) values.push_back(g.at(t, u).d_eer);
      }
    }
    const std::size_t min_count = convention == StdConvention::sample ? 2 : 1;
    if (values.size() < min_count) {
      raise(ErrorKind::argument, "mode " + std::string(to_string(mode)) + " selects " + std::to_string(values.size()) +
                                     " cells of the " + std::to_string(n) + "x" + std::to_string(n) + " " +
                                     std::string(to_string(g.processing)) + " grid");
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double denom = static_cast<double>(values.size()) - (convention == StdConvention::sample ? 1.0 : 0.0);
    summary.per_processing.push_back({g.processing, mean, std::sqrt(ss / denom), values.size()});
  }
  return summary;
}

}  // namespace morphscope
