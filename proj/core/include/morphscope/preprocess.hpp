#pragma once

// Image decoding and the crop / resize / normalize chain that produces the
// encoder input. Face detection is external: boxes arrive from the manifest.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace morphscope {

/// Interleaved RGB (HWC), row-major.
struct ImageTensor {
  static constexpr std::size_t channels = 3;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), data(h * w * channels, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }
  bool empty() const { return data.empty(); }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

enum class ImageFormat { automatic, ppm, png };

/// Binary PPM (P6, maxval ≤ 255) or 8-bit PNG. Values scaled to [0,1].
ImageTensor decode_image(std::span<const std::uint8_t> bytes,
                         ImageFormat hint = ImageFormat::automatic);
ImageTensor read_image(const std::filesystem::path& path);

/// 8-bit encoders (values clamped to [0,1] and rounded).
std::vector<std::uint8_t> encode_ppm(const ImageTensor& image);
std::vector<std::uint8_t> encode_png(const ImageTensor& image);
void write_image(const ImageTensor& image, const std::filesystem::path& path);

struct BBox {
  long x = 0;
  long y = 0;
  long w = 0;
  long h = 0;

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Largest centered square, used when no face box is supplied.
BBox center_square(std::size_t height, std::size_t width);

/// Expands the box by margin·max(w,h) on every side, clamps to the image,
/// then grows the shorter side around the box center to a square (shifted
/// and clamped to stay inside the image). The square side never exceeds
/// the shorter image side.
BBox face_region(std::size_t height, std::size_t width, const BBox& box, double margin);

ImageTensor crop_face(const ImageTensor& image, const BBox& box, double margin = 0.0);

/// Bilinear resampling to side×side with half-pixel centers.
ImageTensor resize_bilinear(const ImageTensor& image, std::size_t side);

struct Normalization {
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev{0.5f, 0.5f, 0.5f};

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

ImageTensor normalize(const ImageTensor& image, const Normalization& norm = {});
ImageTensor denormalize(const ImageTensor& image, const Normalization& norm = {});

struct PreprocessConfig {
  std::size_t side = 384;
  double margin = 0.0;
  Normalization normalization{};

  /// Stable description recorded in run metadata and cache keys.
  std::string describe() const;
};

/// crop (box or center square) → resize → normalize.
ImageTensor preprocess(const ImageTensor& image, const std::optional<BBox>& box,
                       const PreprocessConfig& config);

}  // namespace morphscope
