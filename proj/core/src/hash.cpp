#include "morphscope/hash.hpp"

#include <cstdio>
#include <cstring>

namespace morphscope {

namespace {
constexpr std::uint64_t kFnvPrime = 1099511628211ull;
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
  return fnv1a(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()), seed);
}

std::uint64_t fnv1a_words(std::span<const float> values, std::uint64_t seed) {
  std::uint64_t h = seed;
  std::size_t i = 0;
  for (; i + 1 < values.size(); i += 2) {
    std::uint64_t word;
    std::memcpy(&word, values.data() + i, sizeof(word));
    h ^= word;
    h *= kFnvPrime;
  }
  if (i < values.size()) {
    std::uint32_t tail;
    std::memcpy(&tail, values.data() + i, sizeof(tail));
    h ^= tail;
    h *= kFnvPrime;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace morphscope
