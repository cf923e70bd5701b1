#include "morphscope/vit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "morphscope/error.hpp"

namespace morphscope {

namespace {

std::span<const float> vec(const WeightBundle& b, const std::string& name) { return b.at(name).flat(); }
ConstMatrixView mat(const WeightBundle& b, const std::string& name) { return b.at(name).matrix(); }

void require_valid(const WeightBundle& bundle, const ViTConfig& config) {
  config.validate();
  const auto report = validate_schema(bundle, config, /*check_values=*/false);
  if (!report.ok()) raise(ErrorKind::schema, report.summary());
}

// Copies columns [col, col + width) of m.
Matrix column_slice(const Matrix& m, std::size_t col, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto src = m.row(r).subspan(col, width);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

TokenSequence embed_unchecked(ConstMatrixView patches, const WeightBundle& bundle,
                              const ViTConfig& config) {
  if (patches.rows != config.patch_count() || patches.cols != config.patch_dim()) {
    raise(ErrorKind::shape, "expected " + std::to_string(config.patch_count()) + "x" +
                                std::to_string(config.patch_dim()) + " patches, got " +
                                std::to_string(patches.rows) + "x" + std::to_string(patches.cols));
  }
  const std::size_t d = config.hidden_dim;
  const Matrix projected = linear(patches, mat(bundle, "embed.patch.weight"), vec(bundle, "embed.patch.bias"));

  TokenSequence z{Matrix(config.sequence_length(), d), 0};
  const auto cls = vec(bundle, "cls_token");
  std::copy(cls.begin(), cls.end(), z.tokens.row(0).begin());
  std::copy(projected.values().begin(), projected.values().end(), z.tokens.row(1).begin());

  if (config.positional_mode == PositionalMode::learned) {
    add_inplace(z.tokens.values(), vec(bundle, "pos_embed"));
  } else {
    const Matrix pe = sinusoidal_positions(config.sequence_length(), d);
    add_inplace(z.tokens.values(), pe.values());
  }
  return z;
}

}  // namespace

LayerParams layer_params(const WeightBundle& b, std::size_t layer) {
  const std::string p = "blocks." + std::to_string(layer) + ".";
  LayerParams lp;
  lp.ln1_gamma = vec(b, p + "ln1.gamma");
  lp.ln1_beta = vec(b, p + "ln1.beta");
  lp.q_weight = mat(b, p + "attn.q.weight");
  lp.k_weight = mat(b, p + "attn.k.weight");
  lp.v_weight = mat(b, p + "attn.v.weight");
  lp.out_weight = mat(b, p + "attn.out.weight");
  lp.q_bias = vec(b, p + "attn.q.bias");
  lp.k_bias = vec(b, p + "attn.k.bias");
  lp.v_bias = vec(b, p + "attn.v.bias");
  lp.out_bias = vec(b, p + "attn.out.bias");
  lp.ln2_gamma = vec(b, p + "ln2.gamma");
  lp.ln2_beta = vec(b, p + "ln2.beta");
  lp.fc1_weight = mat(b, p + "mlp.fc1.weight");
  lp.fc1_bias = vec(b, p + "mlp.fc1.bias");
  lp.fc2_weight = mat(b, p + "mlp.fc2.weight");
  lp.fc2_bias = vec(b, p + "mlp.fc2.bias");
  return lp;
}

Matrix patchify(const ImageTensor& image, const ViTConfig& config) {
  if (image.height != config.image_side || image.width != config.image_side) {
    raise(ErrorKind::shape, "encoder expects " + std::to_string(config.image_side) + "x" +
                                std::to_string(config.image_side) + " input, got " +
                                std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  const std::size_t ps = config.patch_side;
  const std::size_t grid = config.grid_side();
  const std::size_t row_values = ps * ImageTensor::channels;
  Matrix patches(config.patch_count(), config.patch_dim());
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      auto dst = patches.row(gy * grid + gx).begin();
      for (std::size_t y = 0; y < ps; ++y) {
        const float* src = &image.data[((gy * ps + y) * image.width + gx * ps) * ImageTensor::channels];
        dst = std::copy(src, src + row_values, dst);
      }
    }
  }
  return patches;
}

Matrix sinusoidal_positions(std::size_t n, std::size_t d) {
  if (d % 2 != 0) raise(ErrorKind::shape, "sinusoidal positions need an even dimension, got " + std::to_string(d));
  Matrix pe(n, d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe(pos, i) = static_cast<float>(std::sin(angle));
      pe(pos, i + 1) = static_cast<float>(std::cos(angle));
    }
  }
  return pe;
}

TokenSequence embed(ConstMatrixView patches, const WeightBundle& bundle, const ViTConfig& config) {
  require_valid(bundle, config);
  return embed_unchecked(patches, bundle, config);
}

Matrix multi_head_attention(ConstMatrixView x, const LayerParams& p, std::size_t heads,
                            const AttentionObserver& observer, std::size_t layer) {
  const std::size_t d = p.q_weight.cols;
  if (heads == 0 || d % heads != 0) {
    raise(ErrorKind::shape, std::to_string(d) + " channels cannot be split into " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t hd = d / heads;
  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(hd)));

  const Matrix q = linear(x, p.q_weight, p.q_bias);
  const Matrix k = linear(x, p.k_weight, p.k_bias);
  const Matrix v = linear(x, p.v_weight, p.v_bias);

  Matrix concat(x.rows, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix qh = column_slice(q, h * hd, hd);
    const Matrix kh_t = transpose(column_slice(k, h * hd, hd));
    const Matrix vh = column_slice(v, h * hd, hd);

    Matrix scores = matmul(qh, kh_t);
    for (float& s : scores.values()) s *= scale;
    softmax_rows_inplace(scores);
    if (observer) observer(layer, h, scores);

    const Matrix head_out = matmul(scores, vh);
    for (std::size_t r = 0; r < x.rows; ++r) {
      const auto src = head_out.row(r);
      std::copy(src.begin(), src.end(), concat.row(r).begin() + static_cast<std::ptrdiff_t>(h * hd));
    }
  }
  return linear(concat, p.out_weight, p.out_bias);
}

TokenSequence encoder_block(const TokenSequence& z, const LayerParams& p, const ViTConfig& config,
                            const AttentionObserver& observer) {
  const float eps = config.layer_norm_eps;
  TokenSequence out{z.tokens, z.layer_index + 1};

  const Matrix attn_in = layer_norm_rows(z.tokens, p.ln1_gamma, p.ln1_beta, eps);
  const Matrix attn = multi_head_attention(attn_in, p, config.heads, observer, z.layer_index);
  add_inplace(out.tokens.values(), attn.values());

  const Matrix mlp_in = layer_norm_rows(out.tokens, p.ln2_gamma, p.ln2_beta, eps);
  Matrix hidden = linear(mlp_in, p.fc1_weight, p.fc1_bias);
  gelu_inplace(hidden.values());
  const Matrix mlp = linear(hidden, p.fc2_weight, p.fc2_bias);
  add_inplace(out.tokens.values(), mlp.values());
  return out;
}

Encoder::Encoder(const WeightBundle& bundle, ViTConfig config) : bundle_(&bundle), config_(config) {
  require_valid(bundle, config_);
  layers_.reserve(config_.depth);
  for (std::size_t l = 0; l < config_.depth; ++l) layers_.push_back(layer_params(bundle, l));
}

TokenSequence Encoder::forward(const ImageTensor& preprocessed, const AttentionObserver& observer) const {
  TokenSequence z = embed_unchecked(patchify(preprocessed, config_), *bundle_, config_);
  for (const auto& layer : layers_) z = encoder_block(z, layer, config_, observer);
  return z;
}

FeatureVector Encoder::extract(const ImageTensor& preprocessed, std::string image_id,
                               const AttentionObserver& observer) const {
  const TokenSequence z = forward(preprocessed, observer);
  FeatureVector f{std::move(image_id), std::vector<float>(config_.hidden_dim)};
  const auto cls = z.tokens.row(0);
  if (config_.final_layer_norm) {
    layer_norm_into(cls, bundle_->at("final_ln.gamma").flat(), bundle_->at("final_ln.beta").flat(),
                    config_.layer_norm_eps, f.values);
  } else {
    std::copy(cls.begin(), cls.end(), f.values.begin());
  }
  return f;
}

std::vector<FeatureVector> Encoder::extract_batch(std::span<const ImageTensor> images,
                                                  std::span<const std::string> ids,
                                                  std::size_t workers) const {
  if (!ids.empty() && ids.size() != images.size()) {
    raise(ErrorKind::argument, "image and id counts differ");
  }
  std::vector<FeatureVector> out(images.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      try {
        out[i] = extract(images[i], ids.empty() ? std::string{} : ids[i]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, images.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

FeatureVector extract_cls(const ImageTensor& preprocessed, const WeightBundle& bundle,
                          const ViTConfig& config, const AttentionObserver& observer) {
  return Encoder(bundle, config).extract(preprocessed, {}, observer);
}

}  // namespace morphscope
