#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "morphscope/error.hpp"
#include "morphscope/features.hpp"

namespace morphscope {

namespace {
constexpr char kMagic[5] = "MSF1";
}

void FeatureSet::put(FeatureVector record) {
  if (dim_ == 0 && records_.empty()) dim_ = record.values.size();
  if (record.values.size() != dim_) {
    raise(ErrorKind::shape, "feature '" + record.image_id + "' has " +
                                std::to_string(record.values.size()) + " values, expected " +
                                std::to_string(dim_));
  }
  if (auto it = index_.find(record.image_id); it != index_.end()) {
    records_[it->second] = std::move(record);
    return;
  }
  index_.emplace(record.image_id, records_.size());
  records_.push_back(std::move(record));
}

const FeatureVector* FeatureSet::find(const std::string& image_id) const {
  auto it = index_.find(image_id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

void FeatureSet::sort_by_id() {
  std::sort(records_.begin(), records_.end(),
            [](const FeatureVector& a, const FeatureVector& b) { return a.image_id < b.image_id; });
  index_.clear();
  for (std::size_t i = 0; i < records_.size(); ++i) index_.emplace(records_[i].image_id, i);
}

void save_features(const FeatureSet& features, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out.write(kMagic, 4);
  detail::write_u32(out, static_cast<std::uint32_t>(features.size()));
  detail::write_u32(out, static_cast<std::uint32_t>(features.dim()));
  for (const auto& r : features.records()) {
    detail::write_u32(out, static_cast<std::uint32_t>(r.image_id.size()));
    out.write(r.image_id.data(), static_cast<std::streamsize>(r.image_id.size()));
    detail::write_floats(out, r.values);
  }
  if (!out) raise(ErrorKind::io, "write failed for " + path.string());
}

FeatureSet load_features(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  detail::check_magic(in, kMagic, path.string());
  std::uint32_t count = 0, dim = 0;
  if (!detail::read_u32(in, count) || !detail::read_u32(in, dim)) {
    raise(ErrorKind::corruption, path.string() + ": truncated MSF1 header");
  }
  FeatureSet set(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    if (!detail::read_u32(in, len)) raise(ErrorKind::corruption, path.string() + ": truncated record");
    if (len > (1u << 20)) raise(ErrorKind::corruption, path.string() + ": implausible id length");
    FeatureVector r;
    r.image_id.resize(len);
    r.values.resize(dim);
    if (!in.read(r.image_id.data(), len) || !detail::read_floats(in, r.values)) {
      raise(ErrorKind::corruption, path.string() + ": truncated record " + std::to_string(i));
    }
    if (set.contains(r.image_id)) raise(ErrorKind::data, "duplicate feature id '" + r.image_id + "'");
    set.put(std::move(r));
  }
  return set;
}

}  // namespace morphscope
