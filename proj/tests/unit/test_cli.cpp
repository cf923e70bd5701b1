#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "appendix.hpp"
#include "cli.hpp"
#include "json.hpp"
#include "morphscope/features.hpp"
#include "morphscope/preprocess.hpp"
#include "morphscope/protocol.hpp"
#include "morphscope/tsne.hpp"
#include "synthetic.hpp"

using namespace morphscope;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "morphscope");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

void write_png(const fs::path& path, const ImageTensor& img) {
  const auto bytes = encode_png(img);
  mstest::spit(path, std::string(bytes.begin(), bytes.end()));
}

// Noise images for bona fide plus the given morph algorithms, one
// processing type, and tiny random weights.
struct Corpus {
  mstest::TempDir dir;
  fs::path weights, manifest;
  std::size_t records = 0;

  Corpus(const std::string& tag, const std::vector<std::string>& algorithms, std::size_t bona = 8,
         std::size_t morph = 4)
      : dir(tag) {
    weights = dir / "w.msw";
    REQUIRE(run_cli({"init-weights", "--out", weights.string(), "--image-side", "32", "--patch-side", "8", "--hidden",
                 "16", "--depth", "1", "--heads", "2", "--mlp", "32", "--seed", "3"})
                .code == 0);
    fs::create_directories(dir / "img");
    std::string lines;
    std::uint64_t seed = 100;
    for (std::size_t i = 0; i < bona; ++i) {
      const std::string rel = "img/bona" + std::to_string(i) + ".png";
      write_png(dir / rel, mstest::noise_image(40, 36, seed++));
      lines += mstest::manifest_line(rel, "bona", "none", "digital");
    }
    for (const auto& alg : algorithms)
      for (std::size_t i = 0; i < morph; ++i) {
        const std::string rel = "img/" + alg + std::to_string(i) + ".png";
        write_png(dir / rel, mstest::noise_image(40, 36, seed++, 2));
        lines += mstest::manifest_line(rel, "morph", alg, "digital");
      }
    records = bona + algorithms.size() * morph;
    manifest = dir / "m.jsonl";
    mstest::spit(manifest, lines);
  }
};

}  // namespace

TEST_CASE("every subcommand documents its flags") {
  const std::map<std::string, std::vector<std::string>> flags{
      {"init-weights", {"--out", "--depth", "--positional", "--seed"}},
      {"validate-weights", {"--weights", "--expect-default"}},
      {"extract", {"--weights", "--manifest", "--out", "--margin", "--workers", "--cache-dir"}},
      {"train", {"--features", "--manifest", "--out", "--C", "--tol", "--max-iter", "--scaling"}},
      {"eval", {"--model", "--features", "--manifest", "--scores", "--det"}},
      {"grid", {"--manifest", "--features", "--weights", "--out-dir", "--formats", "--std-convention"}},
      {"stats", {"--grid", "--mode", "--std-convention", "--format"}},
      {"tsne", {"--features", "--manifest", "--perplexity", "--iterations", "--kl-trace"}},
      {"plot", {"--kind", "--input", "--out", "--csv", "--width"}},
  };
  for (const auto& [cmd, expected] : flags) {
    const Result r = run_cli({cmd, "--help"});
    CHECK_MESSAGE(r.code == 0, cmd);
    for (const auto& f : expected) CHECK_MESSAGE(r.out.find(f) != std::string::npos, cmd << " " << f);
    CHECK(r.out.find("--config") != std::string::npos);
  }
  CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"frobnicate"}).code == 1);
  CHECK(run_cli({"stats", "--bogus"}).code == 1);
  CHECK(run_cli({"init-weights"}).code == 1);
  mstest::TempDir dir("cli-usage");
  mstest::spit(dir / "g.json", "{}");
  CHECK(run_cli({"stats", "--grid", (dir / "g.json").string(), "--mode", "diagonal"}).code == 1);
}

TEST_CASE("weights: init and validate") {
  mstest::TempDir dir("cli-w");
  const auto w = (dir / "w.msw").string();
  const Result init = run_cli({"init-weights", "--out", w, "--image-side", "32", "--patch-side", "8", "--hidden", "16",
                           "--depth", "2", "--heads", "2", "--mlp", "32"});
  REQUIRE(init.code == 0);
  CHECK(fs::exists(w + ".meta.json"));
  const Result ok = run_cli({"validate-weights", "--weights", w});
  CHECK(ok.code == 0);
  CHECK(ok.out.rfind("ok:", 0) == 0);
  CHECK(ok.err.find("config_hash") != std::string::npos);

  const Result geometry = run_cli({"validate-weights", "--weights", w, "--expect-default", "true"});
  CHECK(geometry.code == 2);

  mstest::spit(dir / "bad.msw", "NOPE and then some bytes");
  const Result bad = run_cli({"validate-weights", "--weights", (dir / "bad.msw").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("format") != std::string::npos);

  CHECK(run_cli({"init-weights", "--out", w, "--hidden", "15", "--heads", "2"}).code == 1);
}

TEST_CASE("extract writes one vector per record") {
  Corpus c("cli-x", {});
  c.records = 2;
  std::string two = mstest::slurp(c.manifest);
  two = two.substr(0, two.find('\n', two.find('\n') + 1) + 1);
  mstest::spit(c.manifest, two);
  const auto out = (c.dir / "f.msf").string();
  const Result r = run_cli({"extract", "--weights", c.weights.string(), "--manifest", c.manifest.string(), "--out", out});
  REQUIRE(r.code == 0);
  const FeatureSet f = load_features(out);
  CHECK(f.size() == 2);
  CHECK(f.dim() == 16);
  CHECK(f.find("img/bona1.png") != nullptr);
  const auto meta = nlohmann::json::parse(mstest::slurp(out + ".meta.json"));
  CHECK(meta["resolved"]["encoder"]["positional_mode"] == "learned");
  CHECK(meta["resolved"]["encoder"]["final_layer_norm"] == true);
  CHECK(meta["resolved"]["encoder"]["crop"]["rule"].get<std::string>().find("min(H,W)") != std::string::npos);
  CHECK(meta["seed"] == 42);

  SUBCASE("worker count does not change the bytes") {
    const auto out4 = (c.dir / "f4.msf").string();
    REQUIRE(run_cli({"extract", "--weights", c.weights.string(), "--manifest", c.manifest.string(), "--out", out4,
                 "--workers", "3"})
                .code == 0);
    CHECK(mstest::slurp(out4) == mstest::slurp(out));
    CHECK(mstest::slurp(out4 + ".meta.json") == mstest::slurp(out + ".meta.json"));
  }
  SUBCASE("a broken manifest is a data error") {
    mstest::spit(c.manifest, R"({"path":"img/bona0.png","label":"maybe"})" "\n");
    const Result bad =
        run_cli({"extract", "--weights", c.weights.string(), "--manifest", c.manifest.string(), "--out", out});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("schema") != std::string::npos);
  }
  SUBCASE("cache from the environment survives deleted images") {
    const auto cache = c.dir / "cache";
    ::setenv("MORPHSCOPE_CACHE", cache.string().c_str(), 1);
    const auto a = (c.dir / "a.msf").string(), b = (c.dir / "b.msf").string();
    const Result first = run_cli({"extract", "--weights", c.weights.string(), "--manifest", c.manifest.string(), "--out", a});
    fs::remove_all(c.dir / "img");
    const Result second = run_cli({"extract", "--weights", c.weights.string(), "--manifest", c.manifest.string(), "--out", b});
    ::unsetenv("MORPHSCOPE_CACHE");
    REQUIRE(first.code == 0);
    CHECK(!fs::is_empty(cache));
    CHECK(second.code == 0);
    CHECK(mstest::slurp(a) == mstest::slurp(out));
    CHECK(mstest::slurp(b) == mstest::slurp(a));
    const Result uncached =
        run_cli({"extract", "--weights", c.weights.string(), "--manifest", c.manifest.string(), "--out", b});
    CHECK(uncached.code == 2);
  }
}

TEST_CASE("train, eval and tsne on extracted features") {
  Corpus c("cli-t", {"Landmark-I", "MIPGAN-II"}, 12, 6);
  const auto f = (c.dir / "f.msf").string(), m = (c.dir / "m.msm").string();
  REQUIRE(run_cli({"extract", "--weights", c.weights.string(), "--manifest", c.manifest.string(), "--out", f}).code == 0);
  const Result tr = run_cli({"train", "--features", f, "--manifest", c.manifest.string(), "--out", m, "--algorithm",
                         "Landmark-I", "--max-iter", "5000"});
  REQUIRE(tr.code == 0);
  CHECK(tr.out.find("trained on 9 samples (6 bona fide, 3 morph)") != std::string::npos);

  const auto scores = (c.dir / "s.csv").string();
  const Result ev = run_cli({"eval", "--model", m, "--features", f, "--manifest", c.manifest.string(), "--algorithm",
                         "MIPGAN-II", "--scores", scores, "--det", (c.dir / "d.csv").string()});
  REQUIRE(ev.code == 0);
  const auto metrics = nlohmann::json::parse(ev.out);
  CHECK(metrics["bona"] == 6);
  CHECK(metrics["morph"] == 3);
  CHECK(metrics["d_eer"].get<double>() >= 0.0);
  CHECK(read_score_csv(scores).size() == 9);

  const auto layout = (c.dir / "l.csv").string();
  const Result ts = run_cli({"tsne", "--features", f, "--manifest", c.manifest.string(), "--out", layout,
                         "--perplexity", "5", "--iterations", "300", "--kl-trace", (c.dir / "kl.csv").string()});
  REQUIRE(ts.code == 0);
  CHECK(read_layout_csv(layout).size() == c.records);
  const Result plot = run_cli({"plot", "--kind", "scatter", "--input", layout, "--out", (c.dir / "t.svg").string()});
  CHECK(plot.code == 0);
  CHECK(mstest::slurp(c.dir / "t.svg").find("MIPGAN-II") != std::string::npos);

  const Result tiny = run_cli({"tsne", "--features", f, "--manifest", c.manifest.string(), "--out", layout,
                           "--perplexity", "40"});
  CHECK(tiny.code == 1);
}

TEST_CASE("grid end to end") {
  Corpus c("cli-g", {"Landmark-I", "MIPGAN-II"}, 12, 6);
  const auto out = c.dir / "grid";
  const std::vector<std::string> args{"grid", "--manifest", c.manifest.string(), "--weights", c.weights.string(),
                                      "--out-dir", out.string(), "--max-iter", "5000"};
  const Result r = run_cli(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("trained 2 models, evaluated 4 cells") != std::string::npos);
  for (const char* name : {"grid.csv", "grid.json", "grid.md", "run.meta.json"}) CHECK(fs::exists(out / name));
  CHECK(fs::exists(out / "scores" / "digital__Landmark-I__MIPGAN-II.csv"));
  const GridReport report = load_grid(out / "grid.json");
  REQUIRE(report.grids.size() == 1);
  CHECK(report.grids[0].algorithms.size() == 2);
  CHECK(report.metadata.at("svm") == "C=1.0 tol=0.0001 max_iter=5000 scaling=none class_weighting=false");
  CHECK(report.metadata.at("svm_provenance") == "user-set");
  CHECK(report.metadata.at("positional_mode") == "learned");
  CHECK(mstest::slurp(out / "grid.md").find("svm_provenance") != std::string::npos);

  SUBCASE("reruns are byte-identical, whatever the worker count") {
    const auto again = c.dir / "again";
    auto args2 = args;
    args2[6] = again.string();
    args2.insert(args2.end(), {"--workers", "2"});
    REQUIRE(run_cli(args2).code == 0);
    for (const char* name : {"grid.csv", "grid.json", "grid.md", "run.meta.json"})
      CHECK_MESSAGE(mstest::slurp(out / name) == mstest::slurp(again / name), name);
  }
  SUBCASE("config file values yield to flags") {
    mstest::spit(c.dir / "cfg.json", R"({"seed": 9, "grid": {"formats": ["csv"], "C": 0.5}})");
    auto args2 = args;
    args2[6] = (c.dir / "cfg").string();
    args2.insert(args2.end(), {"--config", (c.dir / "cfg.json").string(), "--seed", "42"});
    REQUIRE(run_cli(args2).code == 0);
    CHECK(fs::exists(c.dir / "cfg" / "grid.csv"));
    CHECK(!fs::exists(c.dir / "cfg" / "grid.json"));
    const auto meta = nlohmann::json::parse(mstest::slurp(c.dir / "cfg" / "run.meta.json"));
    CHECK(meta["seed"] == 42);
    CHECK(meta["config"]["C"] == "0.5");
    CHECK(meta["config_hash"] != nlohmann::json::parse(mstest::slurp(out / "run.meta.json"))["config_hash"]);
  }
  SUBCASE("a missing cell is named") {
    auto args2 = args;
    args2.insert(args2.end(), {"--algorithms", "Landmark-I", "MIPGAN-I"});
    const Result missing = run_cli(args2);
    CHECK(missing.code == 2);
    CHECK(missing.err.find("(MIPGAN-I, digital)") != std::string::npos);
  }
  SUBCASE("plots from grid outputs") {
    const auto svg = (c.dir / "b.svg").string();
    CHECK(run_cli({"plot", "--kind", "boxplot", "--input", (out / "grid.json").string(), "--out", svg}).code == 0);
    CHECK(mstest::slurp(svg).find("D-EER (%)") != std::string::npos);
    CHECK(run_cli({"plot", "--kind", "det", "--input", (out / "scores" / "digital__MIPGAN-II__MIPGAN-II.csv").string(),
               "--out", svg, "--csv", (c.dir / "det.csv").string()})
              .code == 0);
    CHECK(mstest::slurp(c.dir / "det.csv").rfind("series,macer,bpcer\n", 0) == 0);
  }
}

TEST_CASE("stats on the published grid") {
  mstest::TempDir dir("cli-s");
  const auto path = dir / "appendix.json";
  emit_report(mstest::appendix_grid(), {}, ReportFormat::json, path);
  const Result inter = run_cli({"stats", "--grid", path.string(), "--mode", "inter"});
  REQUIRE(inter.code == 0);
  CHECK(inter.out.find("digital μ=16.41") != std::string::npos);
  const Result all = run_cli({"stats", "--grid", path.string(), "--std-convention", "sample"});
  CHECK(all.out.find("digital μ=13.63 σ=11.85") != std::string::npos);
  const Result js = run_cli({"stats", "--grid", path.string(), "--mode", "intra", "--format", "json"});
  const auto doc = nlohmann::json::parse(js.out);
  CHECK(doc["per_processing"][0]["mean"].get<double>() == doctest::Approx(2.468).epsilon(1e-4));
  CHECK(doc["per_processing"].size() == 3);

  mstest::spit(dir / "broken.json", R"({"grids": 3})");
  CHECK(run_cli({"stats", "--grid", (dir / "broken.json").string()}).code == 2);
}
