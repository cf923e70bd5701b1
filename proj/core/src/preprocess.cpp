#include "morphscope/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "morphscope/error.hpp"

namespace morphscope {

BBox center_square(std::size_t height, std::size_t width) {
  const long side = static_cast<long>(std::min(height, width));
  return {static_cast<long>(width - side) / 2, static_cast<long>(height - side) / 2, side, side};
}

BBox face_region(std::size_t height, std::size_t width, const BBox& box, double margin) {
  if (box.w <= 0 || box.h <= 0) {
    raise(ErrorKind::argument, "degenerate face box " + std::to_string(box.w) + "x" +
                                   std::to_string(box.h));
  }
  if (!(margin >= 0.0) || !std::isfinite(margin)) raise(ErrorKind::argument, "crop margin must be >= 0");
  const long W = static_cast<long>(width), H = static_cast<long>(height);
  const long grow = std::lround(margin * static_cast<double>(std::max(box.w, box.h)));
  long x0 = std::max(0L, box.x - grow);
  long y0 = std::max(0L, box.y - grow);
  long x1 = std::min(W, box.x + box.w + grow);
  long y1 = std::min(H, box.y + box.h + grow);
  if (x1 <= x0 || y1 <= y0) raise(ErrorKind::argument, "face box does not intersect the image");

  const long side = std::min({std::max(x1 - x0, y1 - y0), W, H});
  auto square_axis = [side](long lo, long hi, long limit) {
    const long extent = side;
    long start = lo - (extent - (hi - lo)) / 2;
    start = std::clamp(start, 0L, limit - extent);
    return std::pair{start, extent};
  };
  const auto [sx, sw] = square_axis(x0, x1, W);
  const auto [sy, sh] = square_axis(y0, y1, H);
  return {sx, sy, sw, sh};
}

ImageTensor crop_face(const ImageTensor& image, const BBox& box, double margin) {
  if (image.empty()) raise(ErrorKind::argument, "cannot crop an empty image");
  const BBox r = face_region(image.height, image.width, box, margin);
  ImageTensor out(static_cast<std::size_t>(r.h), static_cast<std::size_t>(r.w));
  const std::size_t row_values = static_cast<std::size_t>(r.w) * ImageTensor::channels;
  for (long y = 0; y < r.h; ++y) {
    const float* src = &image.data[((static_cast<std::size_t>(r.y + y)) * image.width +
                                    static_cast<std::size_t>(r.x)) *
                                   ImageTensor::channels];
    std::copy(src, src + row_values, out.data.begin() + static_cast<std::ptrdiff_t>(y * row_values));
  }
  return out;
}

ImageTensor resize_bilinear(const ImageTensor& image, std::size_t side) {
  if (image.empty()) raise(ErrorKind::argument, "cannot resize an empty image");
  if (side == 0) raise(ErrorKind::argument, "resize target must be positive");
  ImageTensor out(side, side);
  const double sy_scale = static_cast<double>(image.height) / static_cast<double>(side);
  const double sx_scale = static_cast<double>(image.width) / static_cast<double>(side);
  const double max_y = static_cast<double>(image.height - 1);
  const double max_x = static_cast<double>(image.width - 1);

  std::vector<std::size_t> x0s(side), x1s(side);
  std::vector<float> fxs(side);
  for (std::size_t ox = 0; ox < side; ++ox) {
    const double sx = std::clamp((static_cast<double>(ox) + 0.5) * sx_scale - 0.5, 0.0, max_x);
    x0s[ox] = static_cast<std::size_t>(sx);
    x1s[ox] = std::min(x0s[ox] + 1, image.width - 1);
    fxs[ox] = static_cast<float>(sx - static_cast<double>(x0s[ox]));
  }
  for (std::size_t oy = 0; oy < side; ++oy) {
    const double sy = std::clamp((static_cast<double>(oy) + 0.5) * sy_scale - 0.5, 0.0, max_y);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const float fy = static_cast<float>(sy - static_cast<double>(y0));
    for (std::size_t ox = 0; ox < side; ++ox) {
      const float fx = fxs[ox];
      for (std::size_t c = 0; c < ImageTensor::channels; ++c) {
        const float top = image.at(y0, x0s[ox], c) * (1.0f - fx) + image.at(y0, x1s[ox], c) * fx;
        const float bottom = image.at(y1, x0s[ox], c) * (1.0f - fx) + image.at(y1, x1s[ox], c) * fx;
        out.at(oy, ox, c) = top * (1.0f - fy) + bottom * fy;
      }
    }
  }
  return out;
}

ImageTensor normalize(const ImageTensor& image, const Normalization& norm) {
  for (float s : norm.stddev) {
    if (!(s > 0.0f)) raise(ErrorKind::argument, "normalization stddev must be positive");
  }
  ImageTensor out = image;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const std::size_t c = i % ImageTensor::channels;
    out.data[i] = (out.data[i] - norm.mean[c]) / norm.stddev[c];
  }
  return out;
}

ImageTensor denormalize(const ImageTensor& image, const Normalization& norm) {
  ImageTensor out = image;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const std::size_t c = i % ImageTensor::channels;
    out.data[i] = out.data[i] * norm.stddev[c] + norm.mean[c];
  }
  return out;
}

std::string PreprocessConfig::describe() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "side=%zu;margin=%.9g;mean=%.9g,%.9g,%.9g;std=%.9g,%.9g,%.9g;crop=margin-square",
                side, margin, normalization.mean[0], normalization.mean[1], normalization.mean[2],
                normalization.stddev[0], normalization.stddev[1], normalization.stddev[2]);
  return buf;
}

ImageTensor preprocess(const ImageTensor& image, const std::optional<BBox>& box,
                       const PreprocessConfig& config) {
  const BBox region = box ? *box : center_square(image.height, image.width);
  const double margin = box ? config.margin : 0.0;
  return normalize(resize_bilinear(crop_face(image, region, margin), config.side),
                   config.normalization);
}

}  // namespace morphscope
