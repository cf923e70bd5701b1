#pragma once

// CLS feature vectors and the "MSF1" feature cache.
//
//   magic "MSF1" | u32 count | u32 dim |
//   count × ( u32 id length | id bytes (UTF-8) | dim × f32 )
// All integers and floats little-endian.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace morphscope {

struct FeatureVector {
  std::string image_id;
  std::vector<float> values;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Ordered feature records with lookup by image id.
class FeatureSet {
 public:
  FeatureSet() = default;
  explicit FeatureSet(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<FeatureVector>& records() const { return records_; }

  /// Inserts or replaces by id. Throws on dimension mismatch.
  void put(FeatureVector record);
  const FeatureVector* find(const std::string& image_id) const;
  bool contains(const std::string& image_id) const { return find(image_id) != nullptr; }

  /// Records sorted by id, for byte-stable output.
  void sort_by_id();

 private:
  std::size_t dim_ = 0;
  std::vector<FeatureVector> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

void save_features(const FeatureSet& features, const std::filesystem::path& path);
FeatureSet load_features(const std::filesystem::path& path);

}  // namespace morphscope
