#pragma once

#include <cstdint>

#include "ternforge/config.hpp"
#include "ternforge/format.hpp"
#include "ternforge/tensor.hpp"

namespace ternforge {

// Canonical tensor set with Gaussian weights (std 1/sqrt(fan_in)), zero
// biases, LayerNorm affines near (1, 0), LayerScale near 0.1 and Gaussian
// CLS/position embeddings (std 0.02). Reproducible from the seed.
ModelFile generate_synthetic_archive(const VitConfig& config, std::uint64_t seed);

// [C, img, img] standard-normal image, i.e. an already-normalized input.
F32Tensor synthetic_image(const VitConfig& config, std::uint64_t seed);

}  // namespace ternforge
