#pragma once

#include <gtest/gtest.h>

#include <cstdint>
#include <random>

#include "ternforge/error.hpp"
#include "ternforge/tensor.hpp"

#define EXPECT_ERRC(stmt, errc)                                                    \
  do {                                                                             \
    try {                                                                          \
      stmt;                                                                        \
      ADD_FAILURE() << "expected " << ternforge::errc_name(errc) << ", no throw";  \
    } catch (const ternforge::Error& e_) {                                         \
      EXPECT_EQ(e_.code(), errc) << e_.what();                                     \
    }                                                                              \
  } while (0)

inline ternforge::F32Tensor random_tensor(ternforge::Shape shape, std::uint64_t seed, float stddev = 1.0f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, stddev);
  ternforge::F32Tensor t(std::move(shape));
  for (auto& v : t.data()) v = n(rng);
  return t;
}
