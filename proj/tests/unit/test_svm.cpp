#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "morphscope/error.hpp"
#include "morphscope/svm.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace morphscope;

namespace {

TrainingSet two_points(std::size_t d) {
  TrainingSet t{Matrix(2, d), {-1, +1}};
  t.features(0, 0) = -1.0f;
  t.features(1, 0) = 1.0f;
  return t;
}

TrainingSet blobs(std::size_t per_class, std::size_t d, double separation, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TrainingSet t{Matrix(2 * per_class, d), {}};
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int y = i < per_class ? -1 : 1;
    const auto v = mstest::gaussian_vector(d, 0.0, 1.0, rng);
    for (std::size_t j = 0; j < d; ++j) t.features(i, j) = v[j] + (j == 0 ? y * separation : 0.0);
    t.labels.push_back(y);
  }
  return t;
}

TrainingSet random_instance(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TrainingSet t{Matrix(n, d), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = mstest::gaussian_vector(d, 0.0, 1.0, rng);
    std::copy(v.begin(), v.end(), t.features.row(i).begin());
    t.labels.push_back(i % 2 ? 1 : -1);
  }
  return t;
}

ErrorKind train_error(const TrainingSet& t) {
  try {
    train(t, {});
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("training succeeded");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("two-point closed form") {
  const auto t = two_points(6);
  const LinearModel m = train(t, {});
  CHECK(m.converged);
  CHECK(std::fabs(m.weights[0] - 1.0f) <= 1e-3);
  for (std::size_t j = 1; j < 6; ++j) CHECK(m.weights[j] == 0.0f);
  CHECK(std::fabs(m.bias) <= 1e-3);
  CHECK(std::fabs(score(m, t.features.row(0)) + 1.0) <= 1e-3);
  CHECK(std::fabs(score(m, t.features.row(1)) - 1.0) <= 1e-3);
}

TEST_CASE("duplicating points with half the penalty keeps the optimum") {
  const auto t = random_instance(16, 5, 3);
  TrainingSet dup{Matrix(32, 5), {}};
  for (std::size_t i = 0; i < 32; ++i) {
    std::copy(t.features.row(i % 16).begin(), t.features.row(i % 16).end(), dup.features.row(i).begin());
    dup.labels.push_back(t.labels[i % 16]);
  }
  SvmConfig cfg;
  cfg.max_iter = 100000;
  const LinearModel a = train(t, cfg);
  cfg.C = 0.5;
  const LinearModel b = train(dup, cfg);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  // Same primal objective function, so same optimum.
  CHECK(std::fabs(primal_objective(a, t) - primal_objective(b, dup)) <= 1e-3);
  for (std::size_t j = 0; j < 5; ++j) CHECK(std::fabs(a.weights[j] - b.weights[j]) <= 1e-2);
}

TEST_CASE("separable blobs are fit exactly") {
  const auto t = blobs(50, 20, 6.0, 7);
  const LinearModel m = train(t, {});
  for (std::size_t i = 0; i < t.labels.size(); ++i) CHECK(score(m, t.features.row(i)) * t.labels[i] > 0.0);
}

TEST_CASE("dual objective never decreases") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    TrainingTrace trace;
    train(random_instance(30, 8, 40 + s), {}, &trace);
    REQUIRE(trace.dual_objective.size() >= 2);
    for (std::size_t i = 1; i < trace.dual_objective.size(); ++i)
      CHECK(trace.dual_objective[i] >= trace.dual_objective[i - 1] - 1e-9);
  }
}

TEST_CASE("KKT residual at convergence") {
  const auto t = random_instance(24, 6, 9);
  SvmConfig cfg;
  cfg.max_iter = 100000;
  TrainingTrace trace;
  const LinearModel m = train(t, cfg, &trace);
  REQUIRE(m.converged);
  CHECK(trace.max_violation.back() <= cfg.tol);
  // Recompute from the stored model; its float32 weights add rounding.
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    const double g = t.labels[i] * score(m, t.features.row(i)) - 1.0;
    double pg = g;
    if (trace.alpha[i] <= 0.0) pg = std::min(g, 0.0);
    else if (trace.alpha[i] >= trace.upper_bound[i]) pg = std::max(g, 0.0);
    CHECK(std::fabs(pg) <= cfg.tol + 1e-5);
    CHECK(trace.alpha[i] >= 0.0);
    CHECK(trace.alpha[i] <= trace.upper_bound[i]);
  }
}

TEST_CASE("flipping labels negates the model") {
  auto t = random_instance(20, 4, 11);
  const LinearModel a = train(t, {});
  for (int& y : t.labels) y = -y;
  const LinearModel b = train(t, {});
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::fabs(a.weights[j] + b.weights[j]) <= 1e-4);
  CHECK(std::fabs(a.bias + b.bias) <= 1e-4);
}

TEST_CASE("primal objective matches the QP oracle") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto t = random_instance(8, 10, 500 + s);
    SvmConfig cfg;
    cfg.max_iter = 100000;
    const LinearModel m = train(t, cfg);
    std::vector<std::vector<double>> x(8);
    for (std::size_t i = 0; i < 8; ++i) x[i].assign(t.features.row(i).begin(), t.features.row(i).end());
    const double oracle = mstest::qp_dual_optimum(x, t.labels, cfg.C);
    CHECK(std::fabs(primal_objective(m, t) - oracle) <= 1e-3);
  }
}

TEST_CASE("training is deterministic in the seed") {
  const auto t = random_instance(20, 5, 13);
  SvmConfig cfg;
  CHECK(train(t, cfg) == train(t, cfg));
}

TEST_CASE("training errors") {
  auto t = random_instance(6, 3, 1);
  for (int& y : t.labels) y = 1;
  CHECK(train_error(t) == ErrorKind::training);

  t = random_instance(6, 3, 1);
  t.features(2, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK(train_error(t) == ErrorKind::data);

  t = random_instance(6, 3, 1);
  t.labels[0] = 0;
  CHECK(train_error(t) == ErrorKind::data);

  t = random_instance(6, 3, 1);
  t.labels.pop_back();
  CHECK(train_error(t) == ErrorKind::shape);
}

TEST_CASE("score examples") {
  LinearModel zero;
  zero.weights.assign(4, 0.0f);
  CHECK(score(zero, std::vector<float>{1, -2, 3, 4}) == 0.0);

  const LinearModel m = train(random_instance(20, 4, 17), {});
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x1 = mstest::gaussian_vector(4, 0, 1, rng), x2 = mstest::gaussian_vector(4, 0, 1, rng);
    const double a = std::uniform_real_distribution<>(0, 1)(rng);
    std::vector<float> mix(4);
    for (std::size_t j = 0; j < 4; ++j) mix[j] = static_cast<float>(a * x1[j] + (1 - a) * x2[j]);
    CHECK(std::fabs(score(m, mix) - (a * score(m, x1) + (1 - a) * score(m, x2))) <= 1e-6);
  }
  try {
    score(m, std::vector<float>{1, 2, 3});
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
  }
}

TEST_CASE("standardized scaling is recorded and applied") {
  auto t = random_instance(30, 3, 19);
  for (std::size_t i = 0; i < 30; ++i) {
    t.features(i, 0) = t.features(i, 0) * 50.0f + 1000.0f;
    t.features(i, 2) *= 0.01f;
  }
  SvmConfig cfg;
  cfg.scaling = FeatureScaling::standardize;
  const LinearModel m = train(t, cfg);
  REQUIRE(m.scaling.mode == FeatureScaling::standardize);
  REQUIRE(m.scaling.mean.size() == 3);
  CHECK(m.scaling.mean[0] == doctest::Approx(1000.0).epsilon(0.01));
  const auto x = t.features.row(4);
  double manual = m.bias;
  for (std::size_t j = 0; j < 3; ++j) manual += m.weights[j] * ((x[j] - m.scaling.mean[j]) / m.scaling.scale[j]);
  CHECK(score(m, x) == doctest::Approx(manual).epsilon(1e-6));
  CHECK(parse_feature_scaling("standardize") == FeatureScaling::standardize);
  CHECK_THROWS_AS(parse_feature_scaling("minmax"), Error);
}

TEST_CASE("class weighting balances the penalties") {
  TrainingSet t = random_instance(12, 3, 23);
  t.labels = {1, 1, 1, 1, 1, 1, 1, 1, 1, -1, -1, -1};
  SvmConfig cfg;
  cfg.class_weighting = true;
  cfg.C = 2.0;
  TrainingTrace trace;
  train(t, cfg, &trace);
  CHECK(trace.upper_bound[0] == doctest::Approx(2.0 * 12 / (2 * 9)));
  CHECK(trace.upper_bound[11] == doctest::Approx(2.0 * 12 / (2 * 3)));
  cfg.class_weighting = false;
  train(t, cfg, &trace);
  CHECK(trace.upper_bound[0] == 2.0);
}

TEST_CASE("model file round trip") {
  mstest::TempDir dir("svm");
  for (auto scaling : {FeatureScaling::none, FeatureScaling::standardize}) {
    SvmConfig cfg;
    cfg.scaling = scaling;
    cfg.C = 0.25;
    cfg.seed = 9;
    const LinearModel m = train(random_instance(20, 7, 29), cfg);
    save_model(m, dir / "m.msm");
    CHECK(load_model(dir / "m.msm") == m);
    const std::string bytes = mstest::slurp(dir / "m.msm");
    CHECK(bytes.substr(0, 4) == "MSM1");
    save_model(m, dir / "n.msm");
    CHECK(mstest::slurp(dir / "n.msm") == bytes);

    mstest::spit(dir / "t.msm", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_model(dir / "t.msm"), Error);
    mstest::spit(dir / "x.msm", "XXXX" + bytes.substr(4));
    try {
      load_model(dir / "x.msm");
      FAIL("expected format error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::format);
    }
  }
}
