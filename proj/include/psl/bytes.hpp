#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace psl {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// SHA-256 output. Compared bytewise, which is the same as comparing the
/// digests as big-endian unsigned 256-bit integers.
using Digest = std::array<std::uint8_t, 32>;

inline constexpr Digest kZeroDigest{};

struct DigestHash {
  std::size_t operator()(const Digest& d) const noexcept {
    std::size_t h = 0;
    for (int i = 0; i < 8; ++i) h = (h << 8) | d[static_cast<std::size_t>(i)];
    return h;
  }
};

std::string to_hex(ByteView bytes);
inline std::string to_hex(const Digest& d) { return to_hex(ByteView(d)); }

/// Throws std::invalid_argument on odd length or non-hex characters.
Bytes from_hex(std::string_view hex);
Digest digest_from_hex(std::string_view hex);

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(ByteView b) { return std::string(b.begin(), b.end()); }

}  // namespace psl
