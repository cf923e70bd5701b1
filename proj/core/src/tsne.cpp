#include "morphscope/tsne.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "binary_io.hpp"
#include "csv.hpp"
#include "morphscope/error.hpp"

namespace morphscope {

namespace {

constexpr std::size_t kMaxBisection = 200;
constexpr double kPerplexityTolerance = 1e-5;
constexpr double kMinGain = 0.01;

std::vector<double> squared_distances(ConstMatrixView x) {
  const std::size_t n = x.rows;
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) {
        const double diff = static_cast<double>(x(i, k)) - x(j, k);
        s += diff * diff;
      }
      d[i * n + j] = d[j * n + i] = s;
    }
  }
  return d;
}

// Fills row i of P(j|i) for precision beta; returns the entropy in nats.
double conditional_row(const double* dist, std::size_t n, std::size_t i, double beta, double* row) {
  double dmin = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (j != i) dmin = std::min(dmin, dist[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = j == i ? 0.0 : std::exp(-beta * (dist[j] - dmin));
    sum += row[j];
  }
  double weighted = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] /= sum;
    if (j != i) weighted += row[j] * (dist[j] - dmin);
  }
  return std::log(sum) + beta * weighted;
}

// Student-t kernel numerators and their sum.
struct QKernel {
  std::vector<double> num;
  double sum = 0.0;
};

QKernel student_kernel(std::span<const double> y, std::size_t n, std::size_t dims) {
  QKernel q;
  q.num.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < dims; ++k) {
        const double diff = y[i * dims + k] - y[j * dims + k];
        s += diff * diff;
      }
      const double v = 1.0 / (1.0 + s);
      q.num[i * n + j] = q.num[j * n + i] = v;
      q.sum += 2.0 * v;
    }
  }
  return q;
}

double kl_from_kernel(const AffinityMatrix& p, const QKernel& q) {
  double kl = 0.0;
  for (std::size_t k = 0; k < p.p.size(); ++k) {
    const double pk = p.p[k];
    if (pk > 0.0) {
      const double qk = std::max(q.num[k] / q.sum, std::numeric_limits<double>::min());
      kl += pk * std::log(pk / qk);
    }
  }
  return kl;
}

void gradient_from_kernel(const AffinityMatrix& p, const QKernel& q, std::span<const double> y,
                          std::size_t dims, double exaggeration, std::span<double> grad) {
  const std::size_t n = p.n;
  std::fill(grad.begin(), grad.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double num = q.num[i * n + j];
      const double mult = (exaggeration * p.p[i * n + j] - num / q.sum) * num;
      for (std::size_t k = 0; k < dims; ++k) grad[i * dims + k] += 4.0 * mult * (y[i * dims + k] - y[j * dims + k]);
    }
  }
}

// Box–Muller over 53-bit uniforms, independent of library distributions.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace

ConditionalAffinities conditional_affinities(ConstMatrixView x, double perplexity) {
  const std::size_t n = x.rows;
  if (n < 3) raise(ErrorKind::argument, "t-SNE needs at least 3 points, got " + std::to_string(n));
  if (!(perplexity > 1.0)) raise(ErrorKind::argument, "perplexity must exceed 1");
  if (perplexity >= static_cast<double>(n)) {
    raise(ErrorKind::argument, "perplexity " + std::to_string(perplexity) + " must be below the point count " +
                                   std::to_string(n));
  }
  if (perplexity > static_cast<double>(n - 1)) {
    raise(ErrorKind::argument, "perplexity above n-1 = " + std::to_string(n - 1) + " is unattainable");
  }
  for (float v : x.values())
    if (!std::isfinite(v)) raise(ErrorKind::argument, "t-SNE input contains NaN or infinity");

  const std::vector<double> dist = squared_distances(x);
  ConditionalAffinities c;
  c.n = n;
  c.p.assign(n * n, 0.0);
  c.beta.assign(n, 1.0);
  c.row_perplexity.assign(n, 0.0);
  const double target = std::log(perplexity);

  for (std::size_t i = 0; i < n; ++i) {
    const double* di = &dist[i * n];
    double* row = &c.p[i * n];
    // Start from a bandwidth matched to the typical distance of the row.
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += di[j];
    mean /= static_cast<double>(n - 1);
    double beta = mean > 0.0 ? 1.0 / mean : 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double h = conditional_row(di, n, i, beta, row);
    for (std::size_t step = 0; step < kMaxBisection; ++step) {
      if (std::fabs(std::exp(h) - perplexity) <= kPerplexityTolerance) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
      h = conditional_row(di, n, i, beta, row);
    }
    c.beta[i] = beta;
    c.row_perplexity[i] = std::exp(h);
  }
  return c;
}

AffinityMatrix symmetrize(const ConditionalAffinities& conditional, double perplexity) {
  const std::size_t n = conditional.n;
  AffinityMatrix a;
  a.n = n;
  a.perplexity = perplexity;
  a.p.assign(n * n, 0.0);
  const double denom = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = (conditional.p[i * n + j] + conditional.p[j * n + i]) / denom;
      a.p[i * n + j] = a.p[j * n + i] = v;
    }
  }
  return a;
}

AffinityMatrix pairwise_affinities(ConstMatrixView x, double perplexity) {
  return symmetrize(conditional_affinities(x, perplexity), perplexity);
}

double kl_divergence(const AffinityMatrix& p, std::span<const double> y, std::size_t dims) {
  if (y.size() != p.n * dims) raise(ErrorKind::shape, "layout size does not match affinity matrix");
  return kl_from_kernel(p, student_kernel(y, p.n, dims));
}

std::vector<double> kl_gradient(const AffinityMatrix& p, std::span<const double> y, std::size_t dims,
                                double exaggeration) {
  if (y.size() != p.n * dims) raise(ErrorKind::shape, "layout size does not match affinity matrix");
  std::vector<double> grad(y.size());
  gradient_from_kernel(p, student_kernel(y, p.n, dims), y, dims, exaggeration, grad);
  return grad;
}

Matrix pca_reduce(ConstMatrixView x, std::size_t components) {
  const std::size_t n = x.rows, d = x.cols;
  if (components == 0 || components > d) {
    raise(ErrorKind::argument, "PCA components must lie in [1, " + std::to_string(d) + "]");
  }
  Eigen::MatrixXd m(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = x(i, j);
  m.rowwise() -= m.colwise().mean();
  const Eigen::MatrixXd cov = (m.transpose() * m) / std::max<double>(1.0, static_cast<double>(n) - 1.0);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) raise(ErrorKind::numeric, "PCA eigendecomposition failed");
  // Eigenvalues ascend; take the last `components` columns, largest first.
  Eigen::MatrixXd basis(d, components);
  for (std::size_t c = 0; c < components; ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - c));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(static_cast<Eigen::Index>(c)) = v;
  }
  const Eigen::MatrixXd proj = m * basis;
  Matrix out(n, components);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < components; ++c) out(i, c) = static_cast<float>(proj(i, c));
  return out;
}

TsneResult tsne_embed(ConstMatrixView x, const TsneParams& params) {
  if (params.dims == 0) raise(ErrorKind::argument, "t-SNE output dimension must be positive");
  if (!(params.learning_rate > 0.0)) raise(ErrorKind::argument, "learning rate must be positive");
  Matrix reduced;
  if (params.pca_dims > 0 && params.pca_dims < x.cols) {
    reduced = pca_reduce(x, params.pca_dims);
    x = reduced.view();
  }
  const AffinityMatrix p = pairwise_affinities(x, params.perplexity);
  const std::size_t n = p.n, dims = params.dims;

  TsneResult r;
  r.n = n;
  r.dims = dims;
  r.layout.resize(n * dims);
  Gaussian gauss(params.seed);
  for (double& v : r.layout) v = params.init_stddev * gauss();

  std::vector<double> grad(n * dims), update(n * dims, 0.0), gains(n * dims, 1.0);
  QKernel q = student_kernel(r.layout, n, dims);
  r.kl_trace.push_back(kl_from_kernel(p, q));
  for (std::size_t it = 0; it < params.iterations; ++it) {
    const double exaggeration = it < params.exaggeration_iterations ? params.early_exaggeration : 1.0;
    const double momentum = it < params.momentum_switch ? params.initial_momentum : params.final_momentum;
    gradient_from_kernel(p, q, r.layout, dims, exaggeration, grad);
    for (std::size_t k = 0; k < grad.size(); ++k) {
      if (params.adaptive_gains) {
        gains[k] = (grad[k] > 0.0) != (update[k] > 0.0) ? gains[k] + 0.2 : gains[k] * 0.8;
        gains[k] = std::max(gains[k], kMinGain);
      }
      update[k] = momentum * update[k] - params.learning_rate * gains[k] * grad[k];
      r.layout[k] += update[k];
    }
    for (std::size_t c = 0; c < dims; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += r.layout[i * dims + c];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) r.layout[i * dims + c] -= mean;
    }
    q = student_kernel(r.layout, n, dims);
    const double kl = kl_from_kernel(p, q);
    if (!std::isfinite(kl)) raise(ErrorKind::numeric, "t-SNE diverged at iteration " + std::to_string(it));
    r.kl_trace.push_back(kl);
  }
  return r;
}

void write_layout_csv(const std::vector<std::string>& image_ids, const std::vector<std::string>& groups,
                      const TsneResult& result, const std::filesystem::path& path) {
  if (image_ids.size() != result.n || groups.size() != result.n) {
    raise(ErrorKind::shape, "layout has " + std::to_string(result.n) + " points but " +
                                std::to_string(image_ids.size()) + " ids and " + std::to_string(groups.size()) +
                                " groups");
  }
  if (result.dims < 2) raise(ErrorKind::shape, "layout CSV needs a 2-d embedding");
  auto out = detail::open_output(path);
  out << "image_id,x,y,group\n";
  char buf[80];
  for (std::size_t i = 0; i < result.n; ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g", result.layout[i * result.dims], result.layout[i * result.dims + 1]);
    out << detail::csv_field(image_ids[i]) << ',' << buf << ',' << detail::csv_field(groups[i]) << '\n';
  }
  if (!out) raise(ErrorKind::io, "write failed for " + path.string());
}

std::vector<LayoutPoint> read_layout_csv(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::string line;
  if (!std::getline(in, line) ||
      detail::split_csv_line(line) != std::vector<std::string>{"image_id", "x", "y", "group"}) {
    raise(ErrorKind::format, path.string() + ": expected header image_id,x,y,group");
  }
  std::vector<LayoutPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 4) raise(ErrorKind::format, path.string() + ": expected 4 fields per row");
    try {
      out.push_back({f[0], std::stod(f[1]), std::stod(f[2]), f[3]});
    } catch (const std::exception&) {
      raise(ErrorKind::format, path.string() + ": bad coordinate in row for " + f[0]);
    }
  }
  return out;
}

}  // namespace morphscope
