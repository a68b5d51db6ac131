#include <gtest/gtest.h>

#include "reference_vit.hpp"
#include "test_util.hpp"
#include "ternforge/packing.hpp"

using namespace ternforge;

TEST(PackTrits, Examples) {
  EXPECT_EQ(pack_trits(std::vector<std::int8_t>{1, -1, 0, 1}).bytes, (std::vector<std::uint8_t>{0x49}));
  EXPECT_EQ(pack_trits(std::vector<std::int8_t>{0, 0, 0, 0}).bytes, (std::vector<std::uint8_t>{0x00}));
  const auto five = pack_trits(std::vector<std::int8_t>{1, 1, 1, 1, 1});
  EXPECT_EQ(five.bytes, (std::vector<std::uint8_t>{0x55, 0x01}));
  EXPECT_EQ(five.logical_len, 5u);
  EXPECT_ERRC(pack_trits(std::vector<std::int8_t>{0, 2}), Errc::kInvalidTrit);
}

TEST(UnpackTrits, Examples) {
  EXPECT_EQ(unpack_trits({{0x49}, 4}), (std::vector<std::int8_t>{1, -1, 0, 1}));
  EXPECT_ERRC(unpack_trits({{0x03}, 4}), Errc::kCorruptTrit);
  EXPECT_ERRC(unpack_trits({{0xC0}, 4}), Errc::kCorruptTrit);
  // Nonzero padding bits past the logical length.
  EXPECT_ERRC(unpack_trits({{0x55, 0x05}, 5}), Errc::kCorruptTrit);
  EXPECT_ERRC(unpack_trits({{0x55}, 5}), Errc::kSizeMismatch);
}

TEST(UnpackTrits, RandomRoundTrip) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    std::vector<std::int8_t> s(1 + rng() % 300);
    for (auto& c : s) c = static_cast<std::int8_t>(static_cast<int>(rng() % 3) - 1);
    const auto p = pack_trits(s);
    EXPECT_EQ(p.bytes.size(), packed_size(s.size()));
    ASSERT_EQ(unpack_trits(p), s);
    for (std::size_t j = 0; j < s.size(); ++j) ASSERT_EQ(trit_at(p.bytes, j), s[j]);
  }
}

TEST(TritLut, MatchesBitDefinition) {
  const auto& lut = trit_lut();
  for (int b = 0; b < 256; ++b) {
    for (int k = 0; k < 4; ++k) {
      const int bits = (b >> (2 * k)) & 3;
      const int want = bits == 1 ? 1 : (bits == 2 ? -1 : 0);
      EXPECT_EQ(lut[b][k], want);
    }
  }
}

TEST(Half, RoundTripMatchesOracle) {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> n(0.0f, 0.05f);
  for (int i = 0; i < 20000; ++i) {
    float v = n(rng);
    if (i % 7 == 0) v *= 1e-3f;  // subnormal range
    EXPECT_EQ(round_to_half(v), oracle::round_half(v)) << v;
  }
  EXPECT_EQ(float_to_half_bits(1.0f), 0x3C00);
  EXPECT_EQ(half_bits_to_float(0xC000), -2.0f);
}
