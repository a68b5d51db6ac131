#include "ternforge/packing.hpp"

#include <Eigen/Core>
#include <string>

#include "ternforge/error.hpp"

namespace ternforge {

namespace {

std::array<std::array<std::int8_t, 4>, 256> build_lut() {
  std::array<std::array<std::int8_t, 4>, 256> lut{};
  for (unsigned b = 0; b < 256; ++b) {
    for (unsigned slot = 0; slot < 4; ++slot) {
      const unsigned bits = (b >> (slot * 2)) & 3u;
      lut[b][slot] = static_cast<std::int8_t>(bits == 1u ? 1 : (bits == 2u ? -1 : 0));
    }
  }
  return lut;
}

}  // namespace

const std::array<std::array<std::int8_t, 4>, 256>& trit_lut() noexcept {
  static const auto lut = build_lut();
  return lut;
}

PackedTritBuffer pack_trits(std::span<const std::int8_t> codes) {
  PackedTritBuffer buf{std::vector<std::uint8_t>(packed_size(codes.size()), 0), codes.size()};
  for (std::size_t i = 0; i < codes.size(); ++i) {
    std::uint8_t bits = 0;
    switch (codes[i]) {
      case 0: bits = 0; break;
      case 1: bits = 1; break;
      case -1: bits = 2; break;
      default:
        throw Error(Errc::kInvalidTrit,
                    "code " + std::to_string(codes[i]) + " at index " + std::to_string(i));
    }
    buf.bytes[i >> 2] |= static_cast<std::uint8_t>(bits << ((i & 3u) * 2u));
  }
  return buf;
}

void validate_packed(const PackedTritBuffer& buf) {
  if (buf.bytes.size() != packed_size(buf.logical_len)) {
    throw Error(Errc::kSizeMismatch, std::to_string(buf.bytes.size()) + " bytes for " +
                                         std::to_string(buf.logical_len) + " trits");
  }
  for (std::size_t b = 0; b < buf.bytes.size(); ++b) {
    for (unsigned slot = 0; slot < 4; ++slot) {
      const unsigned bits = (buf.bytes[b] >> (slot * 2)) & 3u;
      const bool in_range = b * 4 + slot < buf.logical_len;
      if (bits == 3u || (!in_range && bits != 0u)) {
        throw Error(Errc::kCorruptTrit,
                    "byte " + std::to_string(b) + " slot " + std::to_string(slot) +
                        (in_range ? " holds 11" : " has non-zero padding"));
      }
    }
  }
}

std::vector<std::int8_t> unpack_trits(const PackedTritBuffer& buf) {
  validate_packed(buf);
  std::vector<std::int8_t> codes(buf.logical_len);
  for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = trit_at(buf.bytes, i);
  return codes;
}

std::uint16_t float_to_half_bits(float v) noexcept {
  return Eigen::numext::bit_cast<std::uint16_t>(Eigen::half(v));
}

float half_bits_to_float(std::uint16_t bits) noexcept {
  return static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(bits));
}

float round_to_half(float v) noexcept { return half_bits_to_float(float_to_half_bits(v)); }

}  // namespace ternforge
