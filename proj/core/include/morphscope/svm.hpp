#pragma once

// L2-regularized L1-loss (hinge) linear SVM trained by dual coordinate
// descent. The bias is learned as the weight of an appended constant
// feature of value 1, so it is regularized like every other weight.
//
// Labels: -1 bona fide, +1 morph. Scores are w·scale(x) + b; larger means
// more morph-like.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "morphscope/tensor.hpp"

namespace morphscope {

enum class FeatureScaling { none, standardize };

std::string_view to_string(FeatureScaling scaling);
FeatureScaling parse_feature_scaling(std::string_view text);

struct SvmConfig {
  double C = 1.0;
  double tol = 1e-4;
  std::size_t max_iter = 1000;
  std::uint64_t seed = 42;
  FeatureScaling scaling = FeatureScaling::none;
  /// Balanced per-class penalties C·n/(2·n_class) instead of a shared C.
  bool class_weighting = false;

  friend bool operator==(const SvmConfig&, const SvmConfig&) = default;
};

struct TrainingSet {
  Matrix features;          // n × d
  std::vector<int> labels;  // -1 or +1 per row
};

/// Per-dimension standardization parameters; empty when scaling is none.
struct ScalingRecord {
  FeatureScaling mode = FeatureScaling::none;
  std::vector<float> mean;
  std::vector<float> scale;

  friend bool operator==(const ScalingRecord&, const ScalingRecord&) = default;
};

struct LinearModel {
  std::vector<float> weights;
  float bias = 0.0f;
  SvmConfig config;
  std::size_t iterations = 0;
  bool converged = false;
  ScalingRecord scaling;

  std::size_t dim() const { return weights.size(); }

  friend bool operator==(const LinearModel&, const LinearModel&) = default;
};

/// Per-sweep diagnostics. dual_objective[s] = Σα − ½‖w̃‖² after sweep s;
/// max_violation[s] is the largest projected-gradient magnitude after it.
struct TrainingTrace {
  std::vector<double> dual_objective;
  std::vector<double> max_violation;
  std::vector<double> alpha;
  std::vector<double> upper_bound;
};

LinearModel train(const TrainingSet& data, const SvmConfig& config, TrainingTrace* trace = nullptr);

double score(const LinearModel& model, std::span<const float> x);

/// Primal objective ½‖w̃‖² + Σ C_i·max(0, 1 − y_i·score_i) in the scaled
/// space the model was trained in.
double primal_objective(const LinearModel& model, const TrainingSet& data);

// "MSM1" model file: magic | u32 JSON header length | JSON header
// (hyperparameters, dim, scaling) | dim × f32 weights | f32 bias.
void save_model(const LinearModel& model, const std::filesystem::path& path);
LinearModel load_model(const std::filesystem::path& path);

}  // namespace morphscope
