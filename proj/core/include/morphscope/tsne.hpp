#pragma once

// Exact O(n²) t-SNE for inspecting CLS feature clusters.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "morphscope/tensor.hpp"

namespace morphscope {

/// Symmetric joint probabilities P, row-major n×n.
struct AffinityMatrix {
  std::size_t n = 0;
  double perplexity = 0.0;
  std::vector<double> p;

  double operator()(std::size_t i, std::size_t j) const { return p[i * n + j]; }
};

/// Conditional distributions P(j|i) and the per-row precision found by
/// bisection, kept for diagnostics.
struct ConditionalAffinities {
  std::size_t n = 0;
  std::vector<double> p;               // row-major, rows sum to 1
  std::vector<double> beta;            // 1 / (2σ_i²)
  std::vector<double> row_perplexity;  // exp(entropy) actually reached
};

/// Bisection over each row's precision until its perplexity is within
/// 1e-5 of target (at most 200 steps). Needs n ≥ 3 and 1 < perplexity ≤ n−1;
/// perplexity ≥ n raises ErrorKind::argument.
ConditionalAffinities conditional_affinities(ConstMatrixView x, double perplexity);
AffinityMatrix symmetrize(const ConditionalAffinities& conditional, double perplexity);
AffinityMatrix pairwise_affinities(ConstMatrixView x, double perplexity);

/// KL(P‖Q) with Student-t (1 dof) Q over layout y (n × dims, row-major).
double kl_divergence(const AffinityMatrix& p, std::span<const double> y, std::size_t dims);
/// ∂KL/∂y; P is multiplied by `exaggeration` first.
std::vector<double> kl_gradient(const AffinityMatrix& p, std::span<const double> y, std::size_t dims,
                                double exaggeration = 1.0);

struct TsneParams {
  std::size_t dims = 2;
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  std::size_t exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;
  /// Per-coordinate adaptive gains (delta-bar-delta), as in the reference
  /// implementation. Off gives plain momentum descent.
  bool adaptive_gains = true;
  double init_stddev = 1e-4;
  std::uint64_t seed = 42;
  /// Reduce inputs to this many principal components first; 0 disables.
  std::size_t pca_dims = 0;
};

struct TsneResult {
  std::size_t n = 0;
  std::size_t dims = 0;
  std::vector<double> layout;    // n × dims
  std::vector<double> kl_trace;  // KL before iteration 0, then after every iteration
};

TsneResult tsne_embed(ConstMatrixView x, const TsneParams& params = {});

/// Projection onto the leading principal components (deterministic signs).
Matrix pca_reduce(ConstMatrixView x, std::size_t components);

/// CSV with header image_id,x,y,group.
void write_layout_csv(const std::vector<std::string>& image_ids, const std::vector<std::string>& groups,
                      const TsneResult& result, const std::filesystem::path& path);

struct LayoutPoint {
  std::string image_id;
  double x = 0.0;
  double y = 0.0;
  std::string group;
};

std::vector<LayoutPoint> read_layout_csv(const std::filesystem::path& path);

}  // namespace morphscope
