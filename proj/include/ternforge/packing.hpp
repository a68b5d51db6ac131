#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ternforge {

// Four trits per byte, trit i in bits [2(i%4), 2(i%4)+1] of byte i/4.
// Codes: 00 -> 0, 01 -> +1, 10 -> -1; 11 is never written. Unused slots of
// the final byte are 00.
struct PackedTritBuffer {
  std::vector<std::uint8_t> bytes;
  std::size_t logical_len = 0;

  bool operator==(const PackedTritBuffer&) const = default;
};

constexpr std::size_t packed_size(std::size_t trits) noexcept { return (trits + 3) / 4; }

PackedTritBuffer pack_trits(std::span<const std::int8_t> codes);
std::vector<std::int8_t> unpack_trits(const PackedTritBuffer& buf);

// Throws CORRUPT_TRIT on any 11 pair inside logical_len or non-zero padding.
void validate_packed(const PackedTritBuffer& buf);

// Decoded trits of every byte value; entries for bytes containing 11 are 0
// and must be rejected by validate_packed before use.
const std::array<std::array<std::int8_t, 4>, 256>& trit_lut() noexcept;

inline std::int8_t trit_at(std::span<const std::uint8_t> bytes, std::size_t i) noexcept {
  const unsigned bits = (bytes[i >> 2] >> ((i & 3u) * 2u)) & 3u;
  return static_cast<std::int8_t>(bits == 1u ? 1 : (bits == 2u ? -1 : 0));
}

// IEEE binary16 storage helpers (round to nearest even).
std::uint16_t float_to_half_bits(float v) noexcept;
float half_bits_to_float(std::uint16_t bits) noexcept;
float round_to_half(float v) noexcept;

}  // namespace ternforge
