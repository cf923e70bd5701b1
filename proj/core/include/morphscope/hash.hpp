#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace morphscope {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;

/// 64-bit FNV-1a, chainable through the seed argument.
std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed = kFnvOffset);
std::uint64_t fnv1a(std::string_view text, std::uint64_t seed = kFnvOffset);
/// Word-at-a-time FNV-1a variant for large float payloads.
std::uint64_t fnv1a_words(std::span<const float> values, std::uint64_t seed = kFnvOffset);

std::string hex64(std::uint64_t value);

}  // namespace morphscope
