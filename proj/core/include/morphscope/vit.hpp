#pragma once

// Inference-only ViT encoder producing the class-token embedding.
//
//   z0  = [cls; patches·E + b] + E_pos
//   z'  = MSA(LN1(z)) + z
//   out = MLP(LN2(z')) + z'          MLP = fc2(gelu(fc1(·)))
//   feature = LN_final(z_depth)[0]   (final LN optional)

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "morphscope/features.hpp"
#include "morphscope/preprocess.hpp"
#include "morphscope/tensor.hpp"
#include "morphscope/weight_store.hpp"

namespace morphscope {

struct TokenSequence {
  Matrix tokens;  // sequence_length × hidden_dim, row 0 is the class token
  std::size_t layer_index = 0;
};

/// Borrowed views onto one encoder block's parameters.
struct LayerParams {
  std::span<const float> ln1_gamma, ln1_beta;
  ConstMatrixView q_weight, k_weight, v_weight, out_weight;
  std::span<const float> q_bias, k_bias, v_bias, out_bias;
  std::span<const float> ln2_gamma, ln2_beta;
  ConstMatrixView fc1_weight, fc2_weight;
  std::span<const float> fc1_bias, fc2_bias;
};

LayerParams layer_params(const WeightBundle& bundle, std::size_t layer);

/// Called with each head's softmax-normalized attention matrix.
using AttentionObserver =
    std::function<void(std::size_t layer, std::size_t head, const Matrix& probabilities)>;

/// Raster-order patches (grid row-major; within a patch: row, column,
/// channel). Throws ErrorKind::shape unless the image is image_side².
Matrix patchify(const ImageTensor& image, const ViTConfig& config);

/// PE(pos,2i) = sin(pos/10000^(2i/d)), PE(pos,2i+1) = cos(pos/10000^(2i/d)).
Matrix sinusoidal_positions(std::size_t n, std::size_t d);

TokenSequence embed(ConstMatrixView patches, const WeightBundle& bundle, const ViTConfig& config);

/// Scaled dot-product attention with `heads` heads over the rows of x,
/// followed by the output projection.
Matrix multi_head_attention(ConstMatrixView x, const LayerParams& params, std::size_t heads,
                            const AttentionObserver& observer = {}, std::size_t layer = 0);

TokenSequence encoder_block(const TokenSequence& z, const LayerParams& params,
                            const ViTConfig& config, const AttentionObserver& observer = {});

/// Binds a validated bundle to a geometry. The bundle must outlive the
/// encoder. All members are const and safe to call concurrently.
class Encoder {
 public:
  Encoder(const WeightBundle& bundle, ViTConfig config);

  const ViTConfig& config() const { return config_; }

  TokenSequence forward(const ImageTensor& preprocessed, const AttentionObserver& observer = {}) const;
  FeatureVector extract(const ImageTensor& preprocessed, std::string image_id = {},
                        const AttentionObserver& observer = {}) const;

  /// Encodes images on `workers` threads; output order follows input order.
  std::vector<FeatureVector> extract_batch(std::span<const ImageTensor> images,
                                           std::span<const std::string> ids,
                                           std::size_t workers = 1) const;

 private:
  const WeightBundle* bundle_;
  ViTConfig config_;
  std::vector<LayerParams> layers_;
};

FeatureVector extract_cls(const ImageTensor& preprocessed, const WeightBundle& bundle,
                          const ViTConfig& config, const AttentionObserver& observer = {});

}  // namespace morphscope
