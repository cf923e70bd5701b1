#pragma once

// Dense float32 kernels shared by the encoder, classifier and embedding code.

#include <cstddef>
#include <span>
#include <vector>

namespace morphscope {

// Non-owning, row-major, read-only view.
struct ConstMatrixView {
  const float* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  ConstMatrixView() = default;
  ConstMatrixView(const float* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {}
  ConstMatrixView(std::span<const float> values, std::size_t r, std::size_t c);

  std::size_t size() const { return rows * cols; }
  std::span<const float> row(std::size_t r) const { return {data + r * cols, cols}; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const float> values() const { return {data, size()}; }
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> values);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  const std::vector<float>& storage() const { return data_; }

  ConstMatrixView view() const { return {data_.data(), rows_, cols_}; }
  operator ConstMatrixView() const { return view(); }

  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// c = a·b. Each output cell is reduced over the inner index in ascending
/// order, so results are bit-reproducible regardless of blocking.
Matrix matmul(ConstMatrixView a, ConstMatrixView b);

/// out = a·b written into caller storage of size a.rows × b.cols.
void matmul_into(ConstMatrixView a, ConstMatrixView b, std::span<float> out);

/// x·w + bias (bias broadcast over rows).
Matrix linear(ConstMatrixView x, ConstMatrixView w, std::span<const float> bias);

Matrix transpose(ConstMatrixView m);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(ConstMatrixView m);
void softmax_rows_inplace(Matrix& m);

inline constexpr float kDefaultLayerNormEps = 1e-6f;

/// gamma ⊙ (x − mean) / sqrt(var + eps) + beta, population variance.
std::vector<float> layer_norm(std::span<const float> x, std::span<const float> gamma,
                              std::span<const float> beta, float eps = kDefaultLayerNormEps);
void layer_norm_into(std::span<const float> x, std::span<const float> gamma,
                     std::span<const float> beta, float eps, std::span<float> out);
/// Applies layer_norm independently to every row.
Matrix layer_norm_rows(ConstMatrixView m, std::span<const float> gamma,
                       std::span<const float> beta, float eps = kDefaultLayerNormEps);

/// Exact GELU, x·Φ(x) via erf.
float gelu(float x);
std::vector<float> gelu(std::span<const float> x);
void gelu_inplace(std::span<float> x);

void add_inplace(std::span<float> dst, std::span<const float> src);

}  // namespace morphscope
