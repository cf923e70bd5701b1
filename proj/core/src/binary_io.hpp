#pragma once

// Little-endian stream helpers shared by the MSW1 / MSF1 / MSM1 codecs.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "morphscope/error.hpp"

namespace morphscope::detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorKind::io, "cannot open " + path.string() + " for writing");
  return out;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::io, "cannot open " + path.string());
  return in;
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                       static_cast<unsigned char>(v >> 16),
                                       static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline std::uint32_t decode_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// Returns false on short read.
inline bool read_u32(std::istream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = decode_u32(b);
  return true;
}

inline void write_floats(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float f : values) write_u32(out, std::bit_cast<std::uint32_t>(f));
  }
}

inline bool read_floats(std::istream& in, std::span<float> values) {
  if (!in.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(float)))) {
    return false;
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (float& f : values) {
      unsigned char b[4];
      std::memcpy(b, &f, 4);
      f = std::bit_cast<float>(decode_u32(b));
    }
  }
  return true;
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void check_magic(std::istream& in, const char (&magic)[5], const std::string& what) {
  char got[4] = {0, 0, 0, 0};
  in.read(got, 4);
  if (in.gcount() != 4 || std::memcmp(got, magic, 4) != 0) {
    raise(ErrorKind::format, what + ": expected magic \"" + std::string(magic, 4) + "\"");
  }
}

}  // namespace morphscope::detail
