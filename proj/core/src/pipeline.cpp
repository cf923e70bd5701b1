#include "morphscope/pipeline.hpp"

#include <algorithm>

#include "morphscope/error.hpp"
#include "morphscope/hash.hpp"

namespace morphscope {

std::string feature_cache_name(const PreprocessConfig& preprocess, std::uint64_t bundle_hash,
                               const ViTConfig& encoder) {
  const std::string geometry =
      "side=" + std::to_string(encoder.image_side) + ";patch=" + std::to_string(encoder.patch_side) +
      ";hidden=" + std::to_string(encoder.hidden_dim) + ";depth=" + std::to_string(encoder.depth) +
      ";heads=" + std::to_string(encoder.heads) + ";mlp=" + std::to_string(encoder.mlp_dim) +
      ";pos=" + std::string(to_string(encoder.positional_mode)) +
      ";final_ln=" + (encoder.final_layer_norm ? "1" : "0");
  return "features-" + hex64(bundle_hash) + "-" + hex64(fnv1a(preprocess.describe())) + "-" +
         hex64(fnv1a(geometry)) + ".msf";
}

FeatureSet extract_features(const DatasetManifest& manifest, const Encoder& encoder, std::uint64_t bundle_hash,
                            const ExtractionOptions& options) {
  const std::size_t dim = encoder.config().hidden_dim;
  FeatureSet cache(dim);
  std::filesystem::path cache_path;
  if (!options.cache_dir.empty()) {
    std::filesystem::create_directories(options.cache_dir);
    cache_path = options.cache_dir / feature_cache_name(options.preprocess, bundle_hash, encoder.config());
    if (std::filesystem::exists(cache_path)) {
      cache = load_features(cache_path);
      if (cache.dim() != dim) raise(ErrorKind::format, cache_path.string() + " holds features of another dimension");
    }
  }

  std::vector<const ManifestRecord*> pending;
  for (const auto& r : manifest.records)
    if (!cache.contains(r.path)) pending.push_back(&r);

  const std::size_t workers = std::max<std::size_t>(1, options.workers);
  const std::size_t chunk = 2 * workers;
  std::size_t done = manifest.records.size() - pending.size();
  if (options.progress) options.progress(done, manifest.records.size());
  for (std::size_t start = 0; start < pending.size(); start += chunk) {
    const std::size_t end = std::min(pending.size(), start + chunk);
    std::vector<ImageTensor> images;
    std::vector<std::string> ids;
    for (std::size_t k = start; k < end; ++k) {
      const ManifestRecord& r = *pending[k];
      try {
        images.push_back(preprocess(read_image(manifest.resolve(r)), r.bbox, options.preprocess));
      } catch (const Error& e) {
        throw Error(e.kind(), r.path + ": " + e.what());
      }
      ids.push_back(r.path);
    }
    for (auto& f : encoder.extract_batch(images, ids, workers)) cache.put(std::move(f));
    done += end - start;
    if (options.progress) options.progress(done, manifest.records.size());
  }

  if (!cache_path.empty() && !pending.empty()) {
    cache.sort_by_id();
    const auto tmp = cache_path.string() + ".tmp";
    save_features(cache, tmp);
    std::filesystem::rename(tmp, cache_path);
  }

  FeatureSet out(dim);
  for (const auto& r : manifest.records) out.put(*cache.find(r.path));
  return out;
}

}  // namespace morphscope
