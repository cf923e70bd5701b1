#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include "binary_io.hpp"
#include "morphscope/error.hpp"
#include "morphscope/preprocess.hpp"

namespace morphscope {

namespace {

bool looks_like_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return b.size() >= 8 && std::equal(sig, sig + 8, b.begin());
}

bool looks_like_ppm(std::span<const std::uint8_t> b) {
  return b.size() >= 2 && b[0] == 'P' && b[1] == '6';
}

// Netpbm header tokenizer: whitespace separated, '#' comments to end of line.
class PpmHeader {
 public:
  explicit PpmHeader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  long next_number() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      raise(ErrorKind::decode, "malformed PPM header");
    }
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1'000'000'000) raise(ErrorKind::decode, "PPM header value out of range");
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      raise(ErrorKind::decode, "malformed PPM header");
    }
    return pos_ + 1;
  }

  void skip_magic() { pos_ = 2; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

ImageTensor decode_ppm(std::span<const std::uint8_t> bytes) {
  if (!looks_like_ppm(bytes)) raise(ErrorKind::decode, "not a binary PPM (P6)");
  PpmHeader header(bytes);
  header.skip_magic();
  const long width = header.next_number();
  const long height = header.next_number();
  const long maxval = header.next_number();
  const std::size_t start = header.raster_start();
  if (width <= 0 || height <= 0) raise(ErrorKind::decode, "PPM with empty dimensions");
  if (maxval <= 0) raise(ErrorKind::decode, "PPM maxval must be positive");
  if (maxval > 255) raise(ErrorKind::unsupported_format, "16-bit PPM is not supported");

  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
  if (bytes.size() < start + count) raise(ErrorKind::decode, "truncated PPM payload");

  ImageTensor img(static_cast<std::size_t>(height), static_cast<std::size_t>(width));
  const auto max = static_cast<float>(maxval);
  for (std::size_t i = 0; i < count; ++i) img.data[i] = static_cast<float>(bytes[start + i]) / max;
  return img;
}

ImageTensor decode_png(std::span<const std::uint8_t> bytes) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    std::string why = png.message;
    png_image_free(&png);
    raise(ErrorKind::decode, "PNG: " + why);
  }
  if (png.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&png);
    raise(ErrorKind::unsupported_format, "16-bit PNG is not supported");
  }
  png.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, rgba.data(), 0, nullptr)) {
    std::string why = png.message;
    png_image_free(&png);
    raise(ErrorKind::decode, "PNG: " + why);
  }
  ImageTensor img(png.height, png.width);
  const std::size_t pixels = static_cast<std::size_t>(png.width) * png.height;
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t c = 0; c < 3; ++c) img.data[p * 3 + c] = static_cast<float>(rgba[p * 4 + c]) / 255.0f;
  }
  return img;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

ImageTensor decode_image(std::span<const std::uint8_t> bytes, ImageFormat hint) {
  switch (hint) {
    case ImageFormat::ppm: return decode_ppm(bytes);
    case ImageFormat::png: return decode_png(bytes);
    case ImageFormat::automatic: break;
  }
  if (looks_like_png(bytes)) return decode_png(bytes);
  if (looks_like_ppm(bytes)) return decode_ppm(bytes);
  raise(ErrorKind::unsupported_format, "neither PNG nor binary PPM");
}

ImageTensor read_image(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    raise(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_ppm(const ImageTensor& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + image.data.size());
  for (float v : image.data) out.push_back(to_byte(v));
  return out;
}

std::vector<std::uint8_t> encode_png(const ImageTensor& image) {
  std::vector<std::uint8_t> rgb(image.data.size());
  std::transform(image.data.begin(), image.data.end(), rgb.begin(), to_byte);
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    raise(ErrorKind::io, std::string("PNG encode: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    raise(ErrorKind::io, std::string("PNG encode: ") + png.message);
  }
  out.resize(size);
  return out;
}

void write_image(const ImageTensor& image, const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  const auto bytes = (ext == ".png" || ext == ".PNG") ? encode_png(image) : encode_ppm(image);
  auto out = detail::open_output(path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(ErrorKind::io, "write failed for " + path.string());
}

}  // namespace morphscope
