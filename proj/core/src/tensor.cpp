#include "morphscope/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "morphscope/error.hpp"

namespace morphscope {

namespace {

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

// Register-blocked GEMM. B is packed into zero-padded panels of kPanel
// columns over a depth block of kDepth rows; each micro-tile keeps a
// kRows x kPanel accumulator in vector registers and walks the depth index
// in ascending order.
#if defined(__AVX512F__)
constexpr std::size_t kLanes = 16;
#else
constexpr std::size_t kLanes = 8;
#endif
typedef float Lane __attribute__((vector_size(kLanes * sizeof(float))));

constexpr std::size_t kPanel = 2 * kLanes;
constexpr std::size_t kRows = 8;
constexpr std::size_t kDepth = 256;

void pack_panel(const float* b, std::size_t ldb, std::size_t depth, std::size_t width,
                float* out) {
  for (std::size_t p = 0; p < depth; ++p) {
    const float* src = b + p * ldb;
    float* dst = out + p * kPanel;
    std::memcpy(dst, src, width * sizeof(float));
    std::fill(dst + width, dst + kPanel, 0.0f);
  }
}

template <std::size_t R>
void micro_tile(const float* __restrict a, std::size_t lda, const float* __restrict panel,
                std::size_t depth, float* __restrict c, std::size_t ldc, std::size_t width,
                bool accumulate) {
  Lane acc[R][2];
  alignas(64) float staging[kPanel];
  for (std::size_t r = 0; r < R; ++r) {
    std::fill(staging, staging + kPanel, 0.0f);
    if (accumulate) std::memcpy(staging, c + r * ldc, width * sizeof(float));
    std::memcpy(&acc[r][0], staging, sizeof(Lane));
    std::memcpy(&acc[r][1], staging + kLanes, sizeof(Lane));
  }
  const Lane* bp = reinterpret_cast<const Lane*>(panel);
  for (std::size_t p = 0; p < depth; ++p, bp += 2) {
    const Lane b0 = bp[0];
    const Lane b1 = bp[1];
#pragma GCC unroll 8
    for (std::size_t r = 0; r < R; ++r) {
      const float av = a[r * lda + p];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    std::memcpy(staging, &acc[r][0], sizeof(Lane));
    std::memcpy(staging + kLanes, &acc[r][1], sizeof(Lane));
    std::memcpy(c + r * ldc, staging, width * sizeof(float));
  }
}

void tile_dispatch(std::size_t rows, const float* a, std::size_t lda, const float* panel,
                   std::size_t depth, float* c, std::size_t ldc, std::size_t width,
                   bool accumulate) {
  static_assert(kRows == 8);
  switch (rows) {
    case 1: micro_tile<1>(a, lda, panel, depth, c, ldc, width, accumulate); break;
    case 2: micro_tile<2>(a, lda, panel, depth, c, ldc, width, accumulate); break;
    case 3: micro_tile<3>(a, lda, panel, depth, c, ldc, width, accumulate); break;
    case 4: micro_tile<4>(a, lda, panel, depth, c, ldc, width, accumulate); break;
    case 5: micro_tile<5>(a, lda, panel, depth, c, ldc, width, accumulate); break;
    case 6: micro_tile<6>(a, lda, panel, depth, c, ldc, width, accumulate); break;
    case 7: micro_tile<7>(a, lda, panel, depth, c, ldc, width, accumulate); break;
    default: micro_tile<kRows>(a, lda, panel, depth, c, ldc, width, accumulate); break;
  }
}

}  // namespace

ConstMatrixView::ConstMatrixView(std::span<const float> values, std::size_t r, std::size_t c)
    : data(values.data()), rows(r), cols(c) {
  if (values.size() != r * c) {
    raise(ErrorKind::shape, "view of " + dims(r, c) + " over " + std::to_string(values.size()) +
                                " values");
  }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    raise(ErrorKind::shape, "matrix " + dims(rows, cols) + " given " +
                                std::to_string(data_.size()) + " values");
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void matmul_into(ConstMatrixView a, ConstMatrixView b, std::span<float> out) {
  if (a.cols != b.rows) {
    raise(ErrorKind::shape, "matmul " + dims(a.rows, a.cols) + " by " + dims(b.rows, b.cols));
  }
  const std::size_t m = a.rows, k = a.cols, n = b.cols;
  if (out.size() != m * n) {
    raise(ErrorKind::shape, "matmul output holds " + std::to_string(out.size()) +
                                " values, expected " + dims(m, n));
  }
  if (k == 0) {
    std::fill(out.begin(), out.end(), 0.0f);
    return;
  }
  alignas(64) static thread_local float panel[kDepth * kPanel];
  for (std::size_t k0 = 0; k0 < k; k0 += kDepth) {
    const std::size_t depth = std::min(kDepth, k - k0);
    for (std::size_t j0 = 0; j0 < n; j0 += kPanel) {
      const std::size_t width = std::min(kPanel, n - j0);
      pack_panel(b.data + k0 * n + j0, n, depth, width, panel);
      for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
        const std::size_t rows = std::min(kRows, m - i0);
        tile_dispatch(rows, a.data + i0 * k + k0, k, panel, depth, out.data() + i0 * n + j0, n,
                      width, k0 != 0);
      }
    }
  }
}

Matrix matmul(ConstMatrixView a, ConstMatrixView b) {
  if (a.cols != b.rows) {
    raise(ErrorKind::shape, "matmul " + dims(a.rows, a.cols) + " by " + dims(b.rows, b.cols));
  }
  Matrix c(a.rows, b.cols);
  matmul_into(a, b, c.values());
  return c;
}

Matrix linear(ConstMatrixView x, ConstMatrixView w, std::span<const float> bias) {
  Matrix y = matmul(x, w);
  if (bias.size() != w.cols) {
    raise(ErrorKind::shape, "bias of length " + std::to_string(bias.size()) + " for " +
                                std::to_string(w.cols) + " outputs");
  }
  for (std::size_t r = 0; r < y.rows(); ++r) add_inplace(y.row(r), bias);
  return y;
}

Matrix transpose(ConstMatrixView m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
  return t;
}

void softmax_rows_inplace(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    if (row.empty()) continue;
    const float peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (float& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    const float inv = static_cast<float>(1.0 / total);
    for (float& v : row) v *= inv;
  }
}

Matrix softmax_rows(ConstMatrixView m) {
  Matrix out(m.rows, m.cols, std::vector<float>(m.data, m.data + m.size()));
  softmax_rows_inplace(out);
  return out;
}

void layer_norm_into(std::span<const float> x, std::span<const float> gamma,
                     std::span<const float> beta, float eps, std::span<float> out) {
  if (gamma.size() != x.size() || beta.size() != x.size() || out.size() != x.size()) {
    raise(ErrorKind::shape, "layer_norm over " + std::to_string(x.size()) +
                                " values with gamma " + std::to_string(gamma.size()) +
                                " and beta " + std::to_string(beta.size()));
  }
  if (x.empty()) return;
  double mean = 0.0;
  for (float v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (float v : x) {
    const double d = v - mean;
    var += d * d;
  }
  var /= static_cast<double>(x.size());
  const double denom = std::sqrt(var + static_cast<double>(eps));
  const double inv = denom > 0.0 ? 1.0 / denom : 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(gamma[i] * ((x[i] - mean) * inv) + beta[i]);
  }
}

std::vector<float> layer_norm(std::span<const float> x, std::span<const float> gamma,
                              std::span<const float> beta, float eps) {
  std::vector<float> out(x.size());
  layer_norm_into(x, gamma, beta, eps, out);
  return out;
}

Matrix layer_norm_rows(ConstMatrixView m, std::span<const float> gamma,
                       std::span<const float> beta, float eps) {
  Matrix out(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) layer_norm_into(m.row(r), gamma, beta, eps, out.row(r));
  return out;
}

float gelu(float x) {
  return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752440f));
}

std::vector<float> gelu(std::span<const float> x) {
  std::vector<float> out(x.begin(), x.end());
  gelu_inplace(out);
  return out;
}

void gelu_inplace(std::span<float> x) {
  for (float& v : x) v = gelu(v);
}

void add_inplace(std::span<float> dst, std::span<const float> src) {
  if (dst.size() != src.size()) {
    raise(ErrorKind::shape, "elementwise add of " + std::to_string(dst.size()) + " and " +
                                std::to_string(src.size()) + " values");
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace morphscope
