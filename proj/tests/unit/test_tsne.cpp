#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "morphscope/error.hpp"
#include "morphscope/tsne.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace morphscope;

namespace {

Matrix gaussian_rows(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = mstest::gaussian_vector(d, 0.0, scale, rng);
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

Matrix two_blobs(std::size_t per_blob, std::size_t d, double offset, std::uint64_t seed) {
  Matrix m = gaussian_rows(2 * per_blob, d, seed);
  for (std::size_t i = per_blob; i < 2 * per_blob; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) += static_cast<float>(offset);
  return m;
}

double row_perplexity(const ConditionalAffinities& c, std::size_t i) {
  double h = 0.0;
  for (std::size_t j = 0; j < c.n; ++j) {
    const double p = c.p[i * c.n + j];
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::exp(h);
}

double separation_factor(const TsneResult& r, std::size_t per_blob) {
  auto dist = [&](std::size_t a, std::size_t b) {
    return std::hypot(r.layout[2 * a] - r.layout[2 * b], r.layout[2 * a + 1] - r.layout[2 * b + 1]);
  };
  double intra = 0.0, inter = 0.0;
  std::size_t ni = 0, nx = 0;
  for (std::size_t a = 0; a < 2 * per_blob; ++a)
    for (std::size_t b = a + 1; b < 2 * per_blob; ++b) {
      if ((a < per_blob) == (b < per_blob)) {
        intra += dist(a, b);
        ++ni;
      } else {
        inter += dist(a, b);
        ++nx;
      }
    }
  return (inter / nx) / (intra / ni);
}

}  // namespace

TEST_CASE("equidistant points share affinity equally") {
  const Matrix x(3, 2, {0.0f, 0.0f, 1.0f, 0.0f, 0.5f, std::sqrt(3.0f) / 2.0f});
  const auto c = conditional_affinities(x, 2.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(c.p[i * 3 + j] == doctest::Approx(i == j ? 0.0 : 0.5).epsilon(1e-6));
}

TEST_CASE("row perplexity hits the target") {
  const Matrix x = gaussian_rows(60, 10, 3, 2.0);
  for (double perp : {2.0, 5.0, 15.0, 30.0, 59.0}) {
    const auto c = conditional_affinities(x, perp);
    for (std::size_t i = 0; i < 60; ++i) {
      CHECK(std::fabs(row_perplexity(c, i) - perp) <= 1e-3);
      CHECK(std::fabs(c.row_perplexity[i] - perp) <= 1e-3);
      double s = 0.0;
      for (std::size_t j = 0; j < 60; ++j) s += c.p[i * 60 + j];
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("joint affinities are a symmetric distribution") {
  const Matrix x = gaussian_rows(40, 5, 4);
  const auto p = pairwise_affinities(x, 10.0);
  CHECK(p.perplexity == 10.0);
  double total = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(p(i, i) == 0.0);
    for (std::size_t j = 0; j < 40; ++j) {
      CHECK(p(i, j) >= 0.0);
      CHECK(p(i, j) == p(j, i));
      total += p(i, j);
    }
  }
  CHECK(std::fabs(total - 1.0) <= 1e-9);

  const auto c = conditional_affinities(x, 10.0);
  CHECK(p(3, 7) == doctest::Approx((c.p[3 * 40 + 7] + c.p[7 * 40 + 3]) / 80.0));
}

TEST_CASE("affinity arguments") {
  const Matrix x = gaussian_rows(5, 3, 1);
  auto kind = [&](const Matrix& m, double perp) {
    try {
      pairwise_affinities(m, perp);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::io;
  };
  CHECK(kind(x, 5.0) == ErrorKind::argument);
  CHECK(kind(x, 7.0) == ErrorKind::argument);
  CHECK(kind(x, 1.0) == ErrorKind::argument);
  CHECK(kind(gaussian_rows(2, 3, 1), 1.5) == ErrorKind::argument);
  CHECK(kind(x, 4.0) == ErrorKind::io);
}

TEST_CASE("analytic gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = pairwise_affinities(gaussian_rows(5, 3, 10 + seed), 2.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> y(10);
    for (double& v : y) v = g(rng);
    for (double exaggeration : {1.0, 4.0}) {
      const auto analytic = kl_gradient(p, y, 2, exaggeration);
      std::function<double(const std::vector<double>&)> f;
      if (exaggeration == 1.0) {
        f = [&](const std::vector<double>& yy) { return kl_divergence(p, yy, 2); };
      } else {
        // −Σ αp·log(num) + log Σ num, whose gradient is the exaggerated one.
        f = [&, exaggeration](const std::vector<double>& yy) {
          double attract = 0.0, z = 0.0;
          for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
              if (i == j) continue;
              const double dx = yy[2 * i] - yy[2 * j], dy = yy[2 * i + 1] - yy[2 * j + 1];
              const double num = 1.0 / (1.0 + dx * dx + dy * dy);
              attract -= exaggeration * p(i, j) * std::log(num);
              z += num;
            }
          return attract + std::log(z);
        };
      }
      const auto numeric = mstest::central_differences(f, y, 1e-5);
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double scale = std::max(std::fabs(numeric[i]), 1e-6);
        CHECK(std::fabs(analytic[i] - numeric[i]) / scale <= 1e-4);
      }
    }
  }
}

TEST_CASE("KL divergence basics") {
  const auto p = pairwise_affinities(gaussian_rows(6, 3, 2), 3.0);
  std::vector<double> y(12);
  for (std::size_t i = 0; i < 12; ++i) y[i] = std::sin(1.0 + i);
  CHECK(kl_divergence(p, y, 2) >= 0.0);
}

TEST_CASE("embedding run") {
  const Matrix x = two_blobs(30, 1024, 2.0, 5);
  TsneParams params;
  params.perplexity = 10.0;
  params.iterations = 600;
  const auto r = tsne_embed(x, params);
  CHECK(r.n == 60);
  CHECK(r.dims == 2);
  REQUIRE(r.layout.size() == 120);
  REQUIRE(r.kl_trace.size() == params.iterations + 1);
  for (double v : r.kl_trace) CHECK(std::isfinite(v));
  CHECK(r.kl_trace.back() >= 0.0);
  CHECK(separation_factor(r, 30) > 2.0);

  // After early exaggeration, KL does not increase over 50-iteration windows.
  for (std::size_t i = params.exaggeration_iterations + 1; i + 50 < r.kl_trace.size(); ++i)
    CHECK(r.kl_trace[i + 50] <= r.kl_trace[i] + 1e-6);

  const auto again = tsne_embed(x, params);
  CHECK(std::memcmp(again.layout.data(), r.layout.data(), r.layout.size() * sizeof(double)) == 0);
  params.seed = 7;
  CHECK(tsne_embed(x, params).layout != r.layout);
}

TEST_CASE("plain momentum descent also separates blobs") {
  const Matrix x = two_blobs(20, 50, 3.0, 6);
  TsneParams params;
  params.perplexity = 8.0;
  params.iterations = 500;
  params.adaptive_gains = false;
  const auto r = tsne_embed(x, params);
  CHECK(separation_factor(r, 20) > 2.0);
}

TEST_CASE("PCA projection") {
  // Points on a plane inside 6-d space.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix x(50, 6);
  for (std::size_t i = 0; i < 50; ++i) {
    const double a = 5.0 * g(rng), b = g(rng);
    for (std::size_t j = 0; j < 6; ++j) x(i, j) = static_cast<float>(a * (j + 1) / 6.0 + b * (j % 2 ? 1 : -1) + 2.0);
  }
  const Matrix z = pca_reduce(x, 3);
  REQUIRE(z.rows() == 50);
  REQUIRE(z.cols() == 3);
  double var[3] = {0, 0, 0}, cov01 = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 50; ++i) mean += z(i, k);
    CHECK(std::fabs(mean / 50) <= 1e-4);
    for (std::size_t i = 0; i < 50; ++i) var[k] += z(i, k) * z(i, k);
  }
  for (std::size_t i = 0; i < 50; ++i) cov01 += z(i, 0) * z(i, 1);
  CHECK(var[0] >= var[1]);
  CHECK(var[1] >= var[2]);
  CHECK(var[2] <= 1e-6 * var[0]);
  CHECK(std::fabs(cov01) <= 1e-3 * var[0]);
  CHECK(pca_reduce(x, 3) == z);
  CHECK_THROWS_AS(pca_reduce(x, 7), Error);
}

TEST_CASE("layout CSV round trip") {
  mstest::TempDir dir("tsne");
  TsneResult r{3, 2, {0.5, -1.25, 3e-9, 2.0, -7.0, 1e5}, {}};
  const std::vector<std::string> ids{"a.png", "b,c.png", "d"}, groups{"bona fide", "MIPGAN-I", "bona fide"};
  write_layout_csv(ids, groups, r, dir / "l.csv");
  CHECK(mstest::slurp(dir / "l.csv").rfind("image_id,x,y,group\n", 0) == 0);
  const auto pts = read_layout_csv(dir / "l.csv");
  REQUIRE(pts.size() == 3);
  CHECK(pts[1].image_id == "b,c.png");
  CHECK(pts[1].group == "MIPGAN-I");
  CHECK(pts[2].y == 1e5);
  CHECK(pts[0].y == -1.25);
}
