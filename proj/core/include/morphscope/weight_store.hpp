#pragma once

// ViT geometry and the "MSW1" parameter container.
//
// File layout (all integers little-endian):
//   bytes 0..3   magic "MSW1"
//   bytes 4..7   u32 header length L
//   bytes 8..    L bytes of UTF-8 JSON
//                {"config":{...},"tensors":[{"byte_offset","name","shape"}...],"version":1}
//   zero padding up to the next 64-byte boundary (start of the data section)
//   raw float32 tensors in header order; byte_offset is relative to the data
//   section and every tensor starts on a 64-byte boundary.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "morphscope/tensor.hpp"

namespace morphscope {

enum class PositionalMode { learned, sinusoidal };

std::string_view to_string(PositionalMode mode);
PositionalMode parse_positional_mode(std::string_view text);

struct ViTConfig {
  std::size_t image_side = 384;
  std::size_t patch_side = 32;
  std::size_t channels = 3;
  std::size_t hidden_dim = 1024;
  std::size_t depth = 24;
  std::size_t heads = 16;
  std::size_t mlp_dim = 4096;
  PositionalMode positional_mode = PositionalMode::learned;
  bool final_layer_norm = true;
  float layer_norm_eps = kDefaultLayerNormEps;

  std::size_t grid_side() const { return image_side / patch_side; }
  std::size_t patch_count() const { return grid_side() * grid_side(); }
  std::size_t patch_dim() const { return patch_side * patch_side * channels; }
  std::size_t sequence_length() const { return patch_count() + 1; }
  std::size_t head_dim() const { return hidden_dim / heads; }

  /// Throws ErrorKind::argument when the geometry is empty or inconsistent.
  void validate() const;

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

/// Shape-carrying float32 tensor of rank 1 or 2.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> values;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<float> v);
  static Tensor zeros(std::vector<std::size_t> s);

  std::size_t element_count() const;
  ConstMatrixView matrix() const;  // rank 2 only
  std::span<const float> flat() const { return values; }
  std::span<float> flat() { return values; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::string shape_string(std::span<const std::size_t> shape);

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
};

/// Canonical tensors for a geometry, in file order.
std::vector<TensorSpec> tensor_schema(const ViTConfig& config);
std::size_t parameter_count(const ViTConfig& config);

class WeightBundle {
 public:
  WeightBundle() = default;
  explicit WeightBundle(ViTConfig config) : config_(config) {}

  const ViTConfig& config() const { return config_; }
  void set_config(const ViTConfig& config) { config_ = config; }

  void set(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  bool erase(const std::string& name) { return entries_.erase(name) != 0; }
  /// Throws ErrorKind::schema naming the tensor when absent.
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  const std::map<std::string, Tensor>& entries() const { return entries_; }
  std::size_t total_parameters() const;

 private:
  ViTConfig config_{};
  std::map<std::string, Tensor> entries_;
};

struct SchemaViolation {
  enum class Kind { missing, extra, shape, non_finite };
  Kind kind;
  std::string name;
  std::vector<std::size_t> expected;
  std::vector<std::size_t> actual;

  std::string describe() const;
};

struct ValidationReport {
  std::vector<SchemaViolation> violations;

  bool ok() const { return violations.empty(); }
  std::string summary() const;
};

/// Lists missing, unexpected and mis-shaped tensors. With check_values the
/// payload is also scanned for non-finite entries.
ValidationReport validate_schema(const WeightBundle& bundle, const ViTConfig& config,
                                 bool check_values = true);

/// Synthetic bundle with uniform weights of the given standard deviation,
/// unit LayerNorm gains and zero LayerNorm shifts. Deterministic in seed.
WeightBundle random_bundle(const ViTConfig& config, std::uint64_t seed, float stddev = 0.02f);

/// Uses pos_embed when the bundle carries it, sinusoidal otherwise.
PositionalMode default_positional_mode(const WeightBundle& bundle);

void save_weights(const WeightBundle& bundle, const std::filesystem::path& path);
WeightBundle load_weights(const std::filesystem::path& path);

/// Size of everything before the data section for a bundle's header.
std::size_t weight_file_header_size(const WeightBundle& bundle);

/// Content fingerprint over config, names, shapes and payload.
std::uint64_t bundle_fingerprint(const WeightBundle& bundle);

}  // namespace morphscope
