#pragma once

// Manifest → preprocessed images → CLS features, with an on-disk cache.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "morphscope/features.hpp"
#include "morphscope/preprocess.hpp"
#include "morphscope/protocol.hpp"
#include "morphscope/vit.hpp"

namespace morphscope {

struct ExtractionOptions {
  PreprocessConfig preprocess;
  std::size_t workers = 1;
  /// Directory holding cached MSF1 files; empty disables caching.
  std::filesystem::path cache_dir;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Cache file name for one (preprocessing, weights, encoder geometry)
/// combination. Records inside it are keyed by manifest path, so the
/// effective key is (image path, preprocessing hash, bundle hash).
std::string feature_cache_name(const PreprocessConfig& preprocess, std::uint64_t bundle_hash,
                               const ViTConfig& encoder);

/// Features for every manifest record, in manifest order. Cached records
/// are reused; newly computed ones are merged back into the cache file.
FeatureSet extract_features(const DatasetManifest& manifest, const Encoder& encoder,
                            std::uint64_t bundle_hash, const ExtractionOptions& options = {});

}  // namespace morphscope
