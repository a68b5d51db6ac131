#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ternforge/config.hpp"
#include "ternforge/tensor.hpp"

namespace ternforge {

// Binary P6 PPM (maxval 255) as [3, H, W] in [0, 1].
F32Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const F32Tensor& chw);

// "RAWF" + u32 side (little-endian) followed by channels * side * side f32
// values in CHW order, unnormalized [0, 1] range.
F32Tensor read_rawf(const std::filesystem::path& path, std::size_t channels);
void write_rawf(const std::filesystem::path& path, const F32Tensor& chw);

// (x - mean[c]) / std[c] per channel.
F32Tensor normalize_image(const F32Tensor& chw, const VitConfig& config);

// Reads PPM or RAWF (by magic), checks the resolution against the config
// and applies the input normalization.
F32Tensor load_model_input(const std::filesystem::path& path, const VitConfig& config);

// P5, 8-bit; values are min-max scaled into 0..255.
void write_pgm(const std::filesystem::path& path, const F32Tensor& map);

// One class name per line; line index is the class id.
std::vector<std::string> read_labels(const std::filesystem::path& path);

}  // namespace ternforge
