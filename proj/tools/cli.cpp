#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "morphscope/error.hpp"
#include "morphscope/features.hpp"
#include "morphscope/hash.hpp"
#include "morphscope/metrics.hpp"
#include "morphscope/pipeline.hpp"
#include "morphscope/protocol.hpp"
#include "morphscope/svm.hpp"
#include "morphscope/tsne.hpp"
#include "morphscope/viz.hpp"
#include "morphscope/vit.hpp"
#include "morphscope/weight_store.hpp"

namespace morphscope::cli {

namespace {

using nlohmann::json;

// Options that only say where results go (or how fast they are produced);
// they are left out of the recorded run configuration so that identical
// inputs give identical outputs wherever they are written.
const std::set<std::string> kUnrecordedOptions{"out", "out-dir", "scores", "det", "csv", "kl-trace",
                                               "cache-dir", "workers", "config", "help"};

struct EncoderOptions {
  std::string weights;
  double margin = 0.0;
  std::vector<float> mean{0.5f, 0.5f, 0.5f};
  std::vector<float> stddev{0.5f, 0.5f, 0.5f};
  std::string positional = "auto";
  std::string final_layer_norm = "auto";
  std::string cache_dir;
  std::size_t workers = 1;
};

struct SvmOptions {
  double C = 1.0;
  double tol = 1e-4;
  std::size_t max_iter = 1000;
  std::string scaling = "none";
  bool class_weighting = false;
};

struct Options {
  std::string config;
  std::uint64_t seed = 42;

  // init-weights
  std::string out;
  float init_stddev = 0.02f;
  ViTConfig geometry;
  std::string geometry_positional = "learned";
  bool geometry_final_ln = true;

  // shared inputs
  std::string manifest, features, model, grid;
  EncoderOptions encoder;
  SvmOptions svm;
  bool expect_default = false;

  // selection
  std::string algorithm = "all";
  std::string processing = "digital";
  std::string split;
  std::vector<std::string> algorithms, processing_types;

  // outputs
  std::string out_dir, scores, det, csv, kl_trace;
  std::vector<std::string> formats{"csv", "json", "markdown"};
  bool write_scores = true;

  // stats
  std::string mode = "all";
  std::string convention = "population";
  std::string output_format = "text";

  // tsne
  TsneParams tsne;

  // plot
  std::string kind;
  std::vector<std::string> inputs, labels;
  std::string title;
  int width = 640, height = 480;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
};

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument: return kUsage;
    case ErrorKind::numeric: return kNumericError;
    default: return kDataError;
  }
}

std::string format2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

json option_value(const CLI::Option* opt) {
  std::vector<std::string> values = opt->results();
  if (values.empty()) {
    const std::string d = opt->get_default_str();
    if (d.empty()) return nullptr;
    values = {d};
  }
  if (values.size() == 1 && opt->get_expected_max() <= 1) return values.front();
  return values;
}

json resolved_config(const CLI::App& sub) {
  json config = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (kUnrecordedOptions.count(name)) continue;
    config[name] = option_value(opt);
  }
  return config;
}

json run_metadata(const CLI::App& sub, std::uint64_t seed, const json& resolved = json::object()) {
  const json config = resolved_config(sub);
  return json{{"tool", "morphscope"},
              {"resolved", resolved},
              {"command", sub.get_name()},
              {"config", config},
              {"config_hash", hex64(fnv1a(config.dump()))},
              {"seed", seed},
              {"versions",
               {{"morphscope", MORPHSCOPE_VERSION},
                {"compiler", __VERSION__},
                {"cli11", CLI11_VERSION},
                {"formats", {{"weights", "MSW1 v1"}, {"features", "MSF1"}, {"model", "MSM1 v1"}, {"grid", "morphscope-grid v1"}}}}}};
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) raise(ErrorKind::io, "cannot open " + path.string() + " for writing");
  f << j.dump(2) << '\n';
  if (!f) raise(ErrorKind::io, "write failed for " + path.string());
}

void write_metadata_beside(const CLI::App& sub, std::uint64_t seed, const std::filesystem::path& output,
                           const json& resolved = json::object()) {
  write_json_file(run_metadata(sub, seed, resolved), output.string() + ".meta.json");
}

void metadata_to_stderr(const CLI::App& sub, std::uint64_t seed, std::ostream& err) {
  err << "metadata: " << run_metadata(sub, seed).dump() << '\n';
}

// Appends config-file values for options that were not given on the command
// line. Top-level keys apply to every subcommand that knows them; an object
// keyed by the subcommand name overrides them.
std::vector<std::string> apply_config_file(CLI::App& app, std::vector<std::string> args, std::ostream& err) {
  if (args.size() < 2 || args[1].empty() || args[1][0] == '-') return args;
  CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args[1]);
  } catch (const CLI::OptionNotFound&) {
    return args;
  }
  std::string config_path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) raise(ErrorKind::io, "cannot open config file " + config_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    raise(ErrorKind::schema, "config file " + config_path + ": " + e.what());
  }
  if (!doc.is_object()) raise(ErrorKind::schema, "config file " + config_path + " must hold a JSON object");

  std::map<std::string, json> merged;
  for (const auto& [k, v] : doc.items())
    if (!v.is_object()) merged[k] = v;
  if (doc.contains(sub->get_name()) && doc[sub->get_name()].is_object()) {
    for (const auto& [k, v] : doc[sub->get_name()].items()) merged[k] = v;
  }

  auto scalar = [](const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
    return v.dump();
  };
  for (const auto& [key, value] : merged) {
    if (key == "config" || value.is_null()) continue;
    const std::string flag = "--" + key;
    if (sub->get_option_no_throw(flag) == nullptr) {
      err << "warning: config key '" << key << "' is not an option of '" << sub->get_name() << "'; ignored\n";
      continue;
    }
    const bool given = std::any_of(args.begin() + 2, args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (given) continue;
    args.push_back(flag);
    if (value.is_array()) {
      for (const auto& item : value) args.push_back(scalar(item));
    } else {
      args.push_back(scalar(value));
    }
  }
  return args;
}

// --- option groups -------------------------------------------------------

void add_seed(CLI::App* sub, Options& o) {
  sub->add_option("--seed", o.seed, "Seed for every stochastic step (splits, SVM order, t-SNE init)");
  sub->add_option("--config", o.config, "JSON config file; command-line flags take precedence");
}

void add_encoder_options(CLI::App* sub, Options& o) {
  auto& e = o.encoder;
  sub->add_option("--margin", e.margin, "Face-box margin as a fraction of the longer box side")
      ->check(CLI::Range(0.0, 10.0));
  sub->add_option("--mean", e.mean, "Per-channel normalization mean (3 values)")->expected(3);
  sub->add_option("--std", e.stddev, "Per-channel normalization standard deviation (3 values)")->expected(3);
  sub->add_option("--positional", e.positional, "Positional encoding: auto (from weights), learned, sinusoidal")
      ->check(CLI::IsMember({"auto", "learned", "sinusoidal"}));
  sub->add_option("--final-layer-norm", e.final_layer_norm, "Apply the final LayerNorm: auto (from weights), true, false")
      ->check(CLI::IsMember({"auto", "true", "false"}));
  sub->add_option("--cache-dir", e.cache_dir, "Feature cache directory (default: $MORPHSCOPE_CACHE, unset disables)");
  sub->add_option("--workers", e.workers, "Worker threads")->check(CLI::Range(1, 256));
}

void add_svm_options(CLI::App* sub, Options& o) {
  auto& s = o.svm;
  sub->add_option("--C", s.C, "SVM penalty C")->check(CLI::PositiveNumber);
  sub->add_option("--tol", s.tol, "SVM stopping tolerance on the projected gradient")->check(CLI::PositiveNumber);
  sub->add_option("--max-iter", s.max_iter, "SVM maximum number of sweeps")->check(CLI::PositiveNumber);
  sub->add_option("--scaling", s.scaling, "Feature scaling before the SVM: none, standardize")
      ->check(CLI::IsMember({"none", "standardize"}));
  sub->add_option("--class-weighting", s.class_weighting, "Balanced per-class penalties (true/false)");
}

const char* kCropRule =
    "bbox grown by margin*max(w,h) per side, clamped, squared to the longer side (at most the shorter image "
    "side), shifted inside the image; without bbox the centered min(H,W) square; bilinear resize, half-pixel "
    "centers";

SvmConfig svm_config(const Options& o) {
  SvmConfig c;
  c.C = o.svm.C;
  c.tol = o.svm.tol;
  c.max_iter = o.svm.max_iter;
  c.seed = o.seed;
  c.scaling = parse_feature_scaling(o.svm.scaling);
  c.class_weighting = o.svm.class_weighting;
  return c;
}

json svm_settings(const SvmConfig& c) {
  const SvmConfig d;
  const bool defaults = c.C == d.C && c.tol == d.tol && c.max_iter == d.max_iter && c.scaling == d.scaling &&
                        c.class_weighting == d.class_weighting;
  return {{"solver", "dual coordinate descent, L2-regularized hinge loss, bias as constant feature"},
          {"C", c.C},
          {"tol", c.tol},
          {"max_iter", c.max_iter},
          {"scaling", std::string(to_string(c.scaling))},
          {"class_weighting", c.class_weighting},
          {"provenance", defaults ? "toolkit defaults (original settings unknown)" : "user-set"}};
}

struct LoadedEncoder {
  WeightBundle bundle;
  std::uint64_t hash = 0;
  PreprocessConfig preprocess;
  std::unique_ptr<Encoder> encoder;
};

std::unique_ptr<LoadedEncoder> load_encoder(const Options& o) {
  auto le = std::make_unique<LoadedEncoder>();
  le->bundle = load_weights(o.encoder.weights);
  le->hash = bundle_fingerprint(le->bundle);
  ViTConfig config = le->bundle.config();
  if (o.encoder.positional != "auto") config.positional_mode = parse_positional_mode(o.encoder.positional);
  if (o.encoder.final_layer_norm != "auto") config.final_layer_norm = o.encoder.final_layer_norm == "true";
  le->preprocess.side = config.image_side;
  le->preprocess.margin = o.encoder.margin;
  std::copy(o.encoder.mean.begin(), o.encoder.mean.end(), le->preprocess.normalization.mean.begin());
  std::copy(o.encoder.stddev.begin(), o.encoder.stddev.end(), le->preprocess.normalization.stddev.begin());
  for (float s : le->preprocess.normalization.stddev)
    if (!(s > 0.0f)) raise(ErrorKind::argument, "normalization std must be positive");
  le->encoder = std::make_unique<Encoder>(le->bundle, config);
  return le;
}

json encoder_settings(const LoadedEncoder& le) {
  const ViTConfig& c = le.encoder->config();
  const auto& n = le.preprocess.normalization;
  return {{"weights_fingerprint", hex64(le.hash)},
          {"positional_mode", std::string(to_string(c.positional_mode))},
          {"positional_mode_in_weights", std::string(to_string(le.bundle.config().positional_mode))},
          {"final_layer_norm", c.final_layer_norm},
          {"geometry",
           {{"image_side", c.image_side},
            {"patch_side", c.patch_side},
            {"hidden_dim", c.hidden_dim},
            {"depth", c.depth},
            {"heads", c.heads},
            {"mlp_dim", c.mlp_dim}}},
          {"crop", {{"margin", le.preprocess.margin}, {"rule", kCropRule}}},
          {"normalization",
           {{"mean", std::vector<float>(n.mean.begin(), n.mean.end())},
            {"std", std::vector<float>(n.stddev.begin(), n.stddev.end())}}}};
}

std::filesystem::path cache_dir(const Options& o) {
  if (!o.encoder.cache_dir.empty()) return o.encoder.cache_dir;
  if (const char* env = std::getenv("MORPHSCOPE_CACHE"); env && *env) return env;
  return {};
}

FeatureSet extract_for(const DatasetManifest& manifest, const Options& o, json& resolved) {
  const auto le = load_encoder(o);
  resolved["encoder"] = encoder_settings(*le);
  ExtractionOptions opts;
  opts.preprocess = le->preprocess;
  opts.workers = o.encoder.workers;
  opts.cache_dir = cache_dir(o);
  return extract_features(manifest, *le->encoder, le->hash, opts);
}

struct Selection {
  std::optional<Processing> processing;
  std::optional<MorphAlgorithm> algorithm;  // morph filter; bona always kept
  std::optional<Split> split;
};

Selection selection(const Options& o, const std::string& default_split) {
  Selection s;
  if (o.processing != "all") s.processing = parse_processing(o.processing);
  if (o.algorithm != "all") s.algorithm = parse_morph_algorithm(o.algorithm);
  const std::string split = o.split.empty() ? default_split : o.split;
  if (split != "all") s.split = parse_split(split);
  return s;
}

std::vector<const ManifestRecord*> select_records(const DatasetManifest& m, const std::vector<Split>& splits,
                                                  const Selection& s) {
  std::vector<const ManifestRecord*> out;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (s.processing && r.processing != *s.processing) continue;
    if (s.split && splits[i] != *s.split) continue;
    if (r.label == Label::morph && s.algorithm && r.algorithm != *s.algorithm) continue;
    out.push_back(&r);
  }
  return out;
}

std::span<const float> lookup(const FeatureSet& f, const std::string& id) {
  const FeatureVector* v = f.find(id);
  if (!v) raise(ErrorKind::data, "no features for image " + id);
  return v->values;
}

// --- subcommands ---------------------------------------------------------

int cmd_init_weights(const Options& o, const CLI::App& sub, Io io) {
  ViTConfig c = o.geometry;
  c.positional_mode = parse_positional_mode(o.geometry_positional);
  c.final_layer_norm = o.geometry_final_ln;
  c.validate();
  const WeightBundle bundle = random_bundle(c, o.seed, o.init_stddev);
  save_weights(bundle, o.out);
  write_metadata_beside(sub, o.seed, o.out);
  io.out << "wrote " << o.out << ": " << bundle.entries().size() << " tensors, " << bundle.total_parameters()
         << " parameters, fingerprint " << hex64(bundle_fingerprint(bundle)) << '\n';
  return kOk;
}

int cmd_validate_weights(const Options& o, const CLI::App& sub, Io io) {
  const WeightBundle bundle = load_weights(o.encoder.weights);
  ViTConfig expected = bundle.config();
  if (o.expect_default) {
    ViTConfig d;
    d.positional_mode = expected.positional_mode;
    d.final_layer_norm = expected.final_layer_norm;
    expected = d;
  }
  const ValidationReport report = validate_schema(bundle, expected);
  metadata_to_stderr(sub, o.seed, io.err);
  if (report.ok()) {
    io.out << "ok: " << bundle.entries().size() << " tensors, " << bundle.total_parameters() << " parameters, "
           << "positional " << to_string(bundle.config().positional_mode) << ", fingerprint "
           << hex64(bundle_fingerprint(bundle)) << '\n';
    return kOk;
  }
  io.out << report.summary() << '\n';
  return kDataError;
}

int cmd_extract(const Options& o, const CLI::App& sub, Io io) {
  const DatasetManifest manifest = load_manifest(o.manifest);
  json resolved = json::object();
  const FeatureSet features = extract_for(manifest, o, resolved);
  save_features(features, o.out);
  write_metadata_beside(sub, o.seed, o.out, resolved);
  io.out << "wrote " << features.size() << " feature vectors of dimension " << features.dim() << " to " << o.out
         << '\n';
  return kOk;
}

int cmd_train(const Options& o, const CLI::App& sub, Io io) {
  const DatasetManifest manifest = load_manifest(o.manifest);
  const FeatureSet features = load_features(o.features);
  const auto splits = assign_splits(manifest, o.seed);
  const auto records = select_records(manifest, splits, selection(o, "train"));

  TrainingSet data;
  data.features = Matrix(records.size(), features.dim());
  std::size_t bona = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto f = lookup(features, records[i]->path);
    std::copy(f.begin(), f.end(), data.features.row(i).begin());
    const bool morph = records[i]->label == Label::morph;
    data.labels.push_back(morph ? 1 : -1);
    bona += !morph;
  }
  const LinearModel model = train(data, svm_config(o));
  save_model(model, o.out);
  write_metadata_beside(sub, o.seed, o.out, {{"svm", svm_settings(svm_config(o))}});
  io.out << "trained on " << records.size() << " samples (" << bona << " bona fide, " << records.size() - bona
         << " morph): " << model.iterations << " sweeps, " << (model.converged ? "converged" : "not converged")
         << '\n';
  if (!model.converged) io.err << "warning: SVM stopped at max-iter before reaching tol\n";
  return kOk;
}

int cmd_eval(const Options& o, const CLI::App& sub, Io io) {
  const DatasetManifest manifest = load_manifest(o.manifest);
  const FeatureSet features = load_features(o.features);
  const LinearModel model = load_model(o.model);
  const auto splits = assign_splits(manifest, o.seed);
  const auto records = select_records(manifest, splits, selection(o, "test"));

  std::vector<ScoreRecord> scores;
  for (const auto* r : records) scores.push_back({r->path, r->label == Label::morph, score(model, lookup(features, r->path))});
  const LabeledScores labeled = to_labeled(scores);
  const MetricSummary m = summarize(labeled);
  const json metrics{{"d_eer", m.d_eer},
                     {"bpcer_at_macer_5", m.bpcer_at_5},
                     {"bpcer_at_macer_10", m.bpcer_at_10},
                     {"bona", labeled.bona.size()},
                     {"morph", labeled.morph.size()}};
  if (!o.scores.empty()) write_score_csv(scores, o.scores);
  if (!o.det.empty()) write_det_csv(det_curve(labeled), o.det);
  if (!o.out.empty()) {
    write_json_file(metrics, o.out);
    write_metadata_beside(sub, o.seed, o.out);
  } else {
    metadata_to_stderr(sub, o.seed, io.err);
  }
  io.out << metrics.dump() << '\n';
  return kOk;
}

std::string cell_file(Processing p, MorphAlgorithm train, MorphAlgorithm test) {
  return std::string(to_string(p)) + "__" + std::string(to_string(train)) + "__" + std::string(to_string(test)) + ".csv";
}

int cmd_grid(const Options& o, const CLI::App& sub, Io io) {
  if (o.features.empty() == o.encoder.weights.empty()) {
    raise(ErrorKind::argument, "grid needs exactly one of --features or --weights");
  }
  const DatasetManifest manifest = load_manifest(o.manifest);
  json resolved = json::object();
  const FeatureSet features = o.features.empty() ? extract_for(manifest, o, resolved) : load_features(o.features);
  resolved["svm"] = svm_settings(svm_config(o));

  const std::filesystem::path dir = o.out_dir;
  std::filesystem::create_directories(dir);
  if (o.write_scores) std::filesystem::create_directories(dir / "scores");

  GridOptions go;
  go.seed = o.seed;
  go.workers = o.encoder.workers;
  for (const auto& a : o.algorithms) go.algorithms.push_back(parse_morph_algorithm(a));
  for (const auto& p : o.processing_types) go.processing.push_back(parse_processing(p));
  std::size_t models = 0, unconverged = 0;
  go.on_model = [&](Processing, MorphAlgorithm, const LinearModel& m) {
    ++models;
    unconverged += !m.converged;
  };
  if (o.write_scores) {
    go.on_cell = [&](Processing p, MorphAlgorithm train_alg, MorphAlgorithm test_alg, const LabeledScores& s) {
      std::vector<ScoreRecord> recs;
      for (std::size_t k = 0; k < s.bona.size(); ++k) recs.push_back({"bona-" + std::to_string(k), false, s.bona[k]});
      for (std::size_t k = 0; k < s.morph.size(); ++k) recs.push_back({"morph-" + std::to_string(k), true, s.morph[k]});
      write_score_csv(recs, dir / "scores" / cell_file(p, train_alg, test_alg));
    };
  }

  GridReport report = run_grid(manifest, features, svm_config(o), go);
  if (unconverged) {
    io.err << "warning: " << unconverged << " of " << models << " SVMs stopped at max-iter before reaching tol\n";
  }
  const json meta = run_metadata(sub, o.seed, resolved);
  const json& svm = resolved["svm"];
  report.metadata = {{"config_hash", meta["config_hash"].get<std::string>()},
                     {"seed", std::to_string(o.seed)},
                     {"version", MORPHSCOPE_VERSION},
                     {"svm", "C=" + svm["C"].dump() + " tol=" + svm["tol"].dump() + " max_iter=" +
                                 svm["max_iter"].dump() + " scaling=" + svm["scaling"].get<std::string>() +
                                 " class_weighting=" + svm["class_weighting"].dump()},
                     {"svm_provenance", svm["provenance"].get<std::string>()}};
  if (resolved.contains("encoder")) {
    report.metadata["positional_mode"] = resolved["encoder"]["positional_mode"].get<std::string>();
    report.metadata["final_layer_norm"] = resolved["encoder"]["final_layer_norm"].dump();
  }

  const StdConvention convention = parse_std_convention(o.convention);
  std::vector<StatsSummary> stats;
  for (StatsMode mode : {StatsMode::all, StatsMode::inter, StatsMode::intra}) {
    // A 1×1 grid has no off-diagonal cells.
    if (mode == StatsMode::inter && report.grids.front().algorithms.size() < 2) continue;
    stats.push_back(aggregate_stats(report, mode, convention));
  }
  for (const auto& f : o.formats) {
    const ReportFormat format = parse_report_format(f);
    const char* name = format == ReportFormat::csv ? "grid.csv" : format == ReportFormat::json ? "grid.json" : "grid.md";
    emit_report(report, stats, format, dir / name);
  }
  write_json_file(meta, dir / "run.meta.json");

  std::size_t cells = 0;
  for (const auto& g : report.grids) cells += g.cells.size();
  io.out << "trained " << models << " models, evaluated " << cells << " cells into " << dir.string() << '\n';
  for (const auto& s : stats) {
    for (const auto& p : s.per_processing) {
      io.out << to_string(p.processing) << ' ' << to_string(s.mode) << " μ=" << format2(p.mean)
             << " σ=" << format2(p.stddev) << " n=" << p.count << '\n';
    }
  }
  return kOk;
}

int cmd_stats(const Options& o, const CLI::App& sub, Io io) {
  const GridReport grid = load_grid(o.grid);
  const StatsSummary s = aggregate_stats(grid, parse_stats_mode(o.mode), parse_std_convention(o.convention));
  metadata_to_stderr(sub, o.seed, io.err);
  if (o.output_format == "json") {
    json per = json::array();
    for (const auto& p : s.per_processing)
      per.push_back({{"processing", std::string(to_string(p.processing))}, {"mean", p.mean}, {"stddev", p.stddev}, {"count", p.count}});
    io.out << json{{"mode", std::string(to_string(s.mode))},
                   {"convention", std::string(to_string(s.convention))},
                   {"per_processing", per}}
                  .dump(2)
           << '\n';
  } else {
    for (const auto& p : s.per_processing) {
      io.out << to_string(p.processing) << " μ=" << format2(p.mean) << " σ=" << format2(p.stddev)
             << " n=" << p.count << " (mode " << to_string(s.mode) << ", " << to_string(s.convention) << " σ)\n";
    }
  }
  return kOk;
}

int cmd_tsne(const Options& o, const CLI::App& sub, Io io) {
  const DatasetManifest manifest = load_manifest(o.manifest);
  const FeatureSet features = load_features(o.features);
  std::vector<std::string> ids, groups;
  for (const auto& r : manifest.records) {
    if (o.processing != "all" && r.processing != parse_processing(o.processing)) continue;
    ids.push_back(r.path);
    groups.push_back(r.label == Label::bona ? "bona fide" : std::string(to_string(r.algorithm)));
  }
  Matrix x(ids.size(), features.dim());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto f = lookup(features, ids[i]);
    std::copy(f.begin(), f.end(), x.row(i).begin());
  }
  TsneParams params = o.tsne;
  params.seed = o.seed;
  const TsneResult result = tsne_embed(x, params);
  write_layout_csv(ids, groups, result, o.out);
  if (!o.kl_trace.empty()) {
    std::ofstream f(o.kl_trace, std::ios::binary | std::ios::trunc);
    if (!f) raise(ErrorKind::io, "cannot open " + o.kl_trace);
    f << "iteration,kl\n";
    char buf[64];
    for (std::size_t i = 0; i < result.kl_trace.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%zu,%.12g\n", i, result.kl_trace[i]);
      f << buf;
    }
  }
  write_metadata_beside(sub, o.seed, o.out);
  io.out << "embedded " << ids.size() << " points; final KL " << result.kl_trace.back() << '\n';
  return kOk;
}

int cmd_plot(const Options& o, const CLI::App& sub, Io io) {
  PlotStyle style;
  style.width = o.width;
  style.height = o.height;
  style.title = o.title;
  if (!o.labels.empty() && o.labels.size() != o.inputs.size()) {
    raise(ErrorKind::argument, "--labels must name every --input");
  }
  auto label_of = [&](std::size_t i) {
    return o.labels.empty() ? std::filesystem::path(o.inputs[i]).stem().string() : o.labels[i];
  };

  std::string svg, csv;
  switch (parse_plot_kind(o.kind)) {
    case PlotKind::det: {
      std::vector<DetSeries> series;
      for (std::size_t i = 0; i < o.inputs.size(); ++i)
        series.push_back({label_of(i), det_curve(to_labeled(read_score_csv(o.inputs[i])))});
      svg = render_det_svg(series, style);
      csv = det_series_csv(series);
      break;
    }
    case PlotKind::boxplot: {
      const StatsMode mode = parse_stats_mode(o.mode);
      std::vector<BoxSeries> series;
      for (std::size_t i = 0; i < o.inputs.size(); ++i) {
        const GridReport grid = load_grid(o.inputs[i]);
        for (const auto& g : grid.grids) {
          BoxSeries s;
          s.label = std::string(to_string(g.processing));
          if (o.inputs.size() > 1) s.label = label_of(i) + " " + s.label;
          const std::size_t n = g.algorithms.size();
          for (std::size_t t = 0; t < n; ++t)
            for (std::size_t u = 0; u < n; ++u)
              if (mode == StatsMode::all || (mode == StatsMode::intra) == (t == u)) s.values.push_back(g.at(t, u).d_eer);
          series.push_back(std::move(s));
        }
      }
      svg = render_boxplot_svg(series, style);
      csv = boxplot_csv(series);
      break;
    }
    case PlotKind::scatter: {
      std::vector<ScatterPoint> points;
      std::string rows = "series,image_id,x,y,group\n";
      for (std::size_t i = 0; i < o.inputs.size(); ++i)
        for (const auto& p : read_layout_csv(o.inputs[i])) points.push_back({p.x, p.y, p.group});
      svg = render_scatter_svg(points, style);
      std::ostringstream ss;
      ss << "x,y,group\n";
      char buf[64];
      for (const auto& p : points) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,", p.x, p.y);
        ss << buf << p.group << '\n';
      }
      csv = ss.str();
      break;
    }
  }
  write_text(svg, o.out);
  if (!o.csv.empty()) write_text(csv, o.csv);
  write_metadata_beside(sub, o.seed, o.out);
  io.out << "wrote " << o.out << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"morphscope: single-image morphing attack detection with ViT class-token features"};
  app.name(raw_args.empty() ? "morphscope" : std::filesystem::path(raw_args[0]).filename().string());
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(MORPHSCOPE_VERSION));
  app.option_defaults()->always_capture_default();

  auto* init = app.add_subcommand("init-weights", "Write a randomly initialized MSW1 weight file (synthetic testing)");
  init->add_option("--out", o.out, "Output MSW1 path")->required();
  init->add_option("--stddev", o.init_stddev, "Standard deviation of the random weights")->check(CLI::PositiveNumber);
  init->add_option("--image-side", o.geometry.image_side, "Input image side in pixels");
  init->add_option("--patch-side", o.geometry.patch_side, "Patch side in pixels");
  init->add_option("--hidden", o.geometry.hidden_dim, "Hidden dimension");
  init->add_option("--depth", o.geometry.depth, "Number of encoder blocks");
  init->add_option("--heads", o.geometry.heads, "Attention heads");
  init->add_option("--mlp", o.geometry.mlp_dim, "MLP inner dimension");
  init->add_option("--positional", o.geometry_positional, "Positional encoding stored in the file: learned, sinusoidal")
      ->check(CLI::IsMember({"learned", "sinusoidal"}));
  init->add_option("--final-layer-norm", o.geometry_final_ln, "Include the final LayerNorm (true/false)");
  add_seed(init, o);

  auto* validate = app.add_subcommand("validate-weights", "Check an MSW1 file against the encoder tensor schema");
  validate->add_option("--weights", o.encoder.weights, "MSW1 weight file")->required()->check(CLI::ExistingFile);
  validate->add_option("--expect-default", o.expect_default,
                       "Also require the default ViT-L/32 geometry at 384 px (true/false)");
  add_seed(validate, o);

  auto* extract = app.add_subcommand("extract", "Encode manifest images into an MSF1 feature file");
  extract->add_option("--weights", o.encoder.weights, "MSW1 weight file")->required()->check(CLI::ExistingFile);
  extract->add_option("--manifest", o.manifest, "JSON-lines dataset manifest")->required()->check(CLI::ExistingFile);
  extract->add_option("--out", o.out, "Output MSF1 path")->required();
  add_encoder_options(extract, o);
  add_seed(extract, o);

  auto add_selection = [&](CLI::App* sub, const char* split_help) {
    sub->add_option("--algorithm", o.algorithm, "Morph algorithm to include, or all")
        ->check(CLI::IsMember({"all", "Landmark-I", "Landmark-II", "StyleGAN-IWBF", "MIPGAN-I", "MIPGAN-II"}));
    sub->add_option("--processing", o.processing, "Processing type to include, or all")
        ->check(CLI::IsMember({"all", "digital", "print-scan", "print-scan-compressed"}));
    sub->add_option("--split", o.split, split_help)->check(CLI::IsMember({"train", "test", "all"}));
  };

  auto* train_cmd = app.add_subcommand("train", "Train a linear SVM on the selected training records");
  train_cmd->add_option("--features", o.features, "MSF1 feature file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--manifest", o.manifest, "JSON-lines dataset manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", o.out, "Output MSM1 model path")->required();
  add_selection(train_cmd, "Split to train on: train (default), test, all");
  add_svm_options(train_cmd, o);
  add_seed(train_cmd, o);

  auto* eval = app.add_subcommand("eval", "Score records with a model and report D-EER and BPCER@MACER");
  eval->add_option("--model", o.model, "MSM1 model file")->required()->check(CLI::ExistingFile);
  eval->add_option("--features", o.features, "MSF1 feature file")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", o.manifest, "JSON-lines dataset manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", o.out, "Metrics JSON path (metrics are always printed)");
  eval->add_option("--scores", o.scores, "Per-image score CSV path");
  eval->add_option("--det", o.det, "DET curve CSV path");
  add_selection(eval, "Split to evaluate: test (default), train, all");
  add_seed(eval, o);

  auto* grid = app.add_subcommand("grid", "Run the cross-dataset protocol and write grid reports");
  grid->add_option("--manifest", o.manifest, "JSON-lines dataset manifest")->required()->check(CLI::ExistingFile);
  grid->add_option("--features", o.features, "MSF1 feature file (alternative to --weights)")->check(CLI::ExistingFile);
  grid->add_option("--weights", o.encoder.weights, "MSW1 weights; features are extracted (and cached) first")
      ->check(CLI::ExistingFile);
  grid->add_option("--out-dir", o.out_dir, "Output directory")->required();
  grid->add_option("--formats", o.formats, "Report formats to write: csv, json, markdown")
      ->check(CLI::IsMember({"csv", "json", "markdown"}));
  grid->add_option("--scores", o.write_scores, "Write per-cell score CSVs under <out-dir>/scores (true/false)");
  grid->add_option("--algorithms", o.algorithms, "Restrict the grid to these morph algorithms");
  grid->add_option("--processing-types", o.processing_types, "Restrict the grid to these processing types");
  grid->add_option("--std-convention", o.convention, "σ convention for the summary: population, sample")
      ->check(CLI::IsMember({"population", "sample"}));
  add_encoder_options(grid, o);
  add_svm_options(grid, o);
  add_seed(grid, o);

  auto* stats = app.add_subcommand("stats", "D-EER mean and standard deviation from a grid JSON");
  stats->add_option("--grid", o.grid, "Grid JSON written by the grid command")->required()->check(CLI::ExistingFile);
  stats->add_option("--mode", o.mode, "Cells to aggregate: all, inter (off-diagonal), intra (diagonal)")
      ->check(CLI::IsMember({"all", "inter", "intra"}));
  stats->add_option("--std-convention", o.convention, "σ convention: population, sample")
      ->check(CLI::IsMember({"population", "sample"}));
  stats->add_option("--format", o.output_format, "Output format: text, json")->check(CLI::IsMember({"text", "json"}));
  add_seed(stats, o);

  auto* tsne = app.add_subcommand("tsne", "Embed features in 2-d with exact t-SNE and write a layout CSV");
  tsne->add_option("--features", o.features, "MSF1 feature file")->required()->check(CLI::ExistingFile);
  tsne->add_option("--manifest", o.manifest, "JSON-lines dataset manifest (supplies groups)")->required()->check(CLI::ExistingFile);
  tsne->add_option("--out", o.out, "Layout CSV path")->required();
  tsne->add_option("--processing", o.processing, "Processing type to embed, or all")
      ->check(CLI::IsMember({"all", "digital", "print-scan", "print-scan-compressed"}));
  tsne->add_option("--perplexity", o.tsne.perplexity, "Target perplexity")->check(CLI::PositiveNumber);
  tsne->add_option("--iterations", o.tsne.iterations, "Gradient descent iterations");
  tsne->add_option("--learning-rate", o.tsne.learning_rate, "Learning rate")->check(CLI::PositiveNumber);
  tsne->add_option("--exaggeration", o.tsne.early_exaggeration, "Early exaggeration factor");
  tsne->add_option("--exaggeration-iterations", o.tsne.exaggeration_iterations, "Iterations with early exaggeration");
  tsne->add_option("--pca", o.tsne.pca_dims, "Reduce to this many principal components first (0 = off)");
  tsne->add_option("--kl-trace", o.kl_trace, "CSV path for the KL divergence trace");
  add_seed(tsne, o);

  auto* plot = app.add_subcommand("plot", "Render a DET, boxplot or scatter SVG");
  plot->add_option("--kind", o.kind, "det (score CSVs), boxplot (grid JSONs), scatter (layout CSVs)")
      ->required()
      ->check(CLI::IsMember({"det", "boxplot", "scatter"}));
  plot->add_option("--input", o.inputs, "Input file(s)")->required()->check(CLI::ExistingFile);
  plot->add_option("--labels", o.labels, "Series labels, one per input (default: file stems)");
  plot->add_option("--out", o.out, "SVG path")->required();
  plot->add_option("--csv", o.csv, "Also export the plotted series as CSV");
  plot->add_option("--title", o.title, "Plot title");
  plot->add_option("--width", o.width, "Width in pixels")->check(CLI::Range(300, 10000));
  plot->add_option("--height", o.height, "Height in pixels")->check(CLI::Range(200, 10000));
  plot->add_option("--mode", o.mode, "Boxplot cells: all, inter, intra")->check(CLI::IsMember({"all", "inter", "intra"}));
  add_seed(plot, o);

  const Io io{out, err};
  try {
    const std::vector<std::string> args = apply_config_file(app, raw_args, err);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "init-weights") return cmd_init_weights(o, *sub, io);
    if (name == "validate-weights") return cmd_validate_weights(o, *sub, io);
    if (name == "extract") return cmd_extract(o, *sub, io);
    if (name == "train") return cmd_train(o, *sub, io);
    if (name == "eval") return cmd_eval(o, *sub, io);
    if (name == "grid") return cmd_grid(o, *sub, io);
    if (name == "stats") return cmd_stats(o, *sub, io);
    if (name == "tsne") return cmd_tsne(o, *sub, io);
    if (name == "plot") return cmd_plot(o, *sub, io);
    err << "unknown command " << name << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "morphscope: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "morphscope: I/O error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "morphscope: " << e.what() << '\n';
    return kDataError;
  }
}

int run(int argc, const char* const* argv) {
  return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace morphscope::cli
