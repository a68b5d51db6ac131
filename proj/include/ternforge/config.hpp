#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ternforge {

// Architecture hyperparameters of a DeiT-style ViT plus the quantization
// knobs that the engine and any exporter must agree on.
struct VitConfig {
  std::uint32_t depth = 12;
  std::uint32_t dim = 192;
  std::uint32_t heads = 3;
  float mlp_ratio = 4.0f;
  std::uint32_t patch = 16;
  std::uint32_t img_size = 224;
  std::uint32_t in_channels = 3;
  std::uint32_t num_classes = 1000;
  bool use_layerscale = false;
  bool pre_quant_rmsnorm = false;
  bool fp32_layerscale = false;
  bool split_qkv_scales = false;
  // Fully-ternary plan stores the position embedding as IEEE half.
  bool fp16_pos_embed = true;
  float eps_ln = 1e-6f;
  float eps_w = 1e-6f;
  // Input normalization, one entry per input channel.
  std::vector<float> norm_mean{0.485f, 0.456f, 0.406f};
  std::vector<float> norm_std{0.229f, 0.224f, 0.225f};

  std::size_t head_dim() const noexcept { return dim / heads; }
  std::size_t hidden_dim() const noexcept;
  std::size_t grid() const noexcept { return img_size / patch; }
  std::size_t num_patches() const noexcept { return grid() * grid(); }
  std::size_t tokens() const noexcept { return num_patches() + 1; }

  // Throws INVALID_ARGUMENT when dims are inconsistent.
  void validate() const;

  bool operator==(const VitConfig&) const = default;
};

// deit_tiny_224, deit_small_224, deit3_small_224, deit3_small_384.
VitConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

VitConfig config_from_json(const std::string& text);
std::string config_to_json(const VitConfig& config);
// Preset name or path to a JSON config file.
VitConfig resolve_config(const std::string& name_or_path);

// Total learnable parameters in the canonical tensor set.
std::size_t parameter_count(const VitConfig& config);

}  // namespace ternforge
