#include "ternforge/synthetic.hpp"

#include <cmath>
#include <random>

#include "ternforge/model.hpp"

namespace ternforge {

ModelFile generate_synthetic_archive(const VitConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  ModelFile archive;
  archive.config = config;
  for (const auto& t : canonical_tensors(config)) {
    F32Tensor values(t.shape);
    float mean = 0.0f;
    float stddev = 0.0f;
    if (t.is_bias) {
      // zero
    } else if (t.role == TensorRole::kEmbedding) {
      stddev = 0.02f;
    } else if (t.role == TensorRole::kLayerNorm) {
      const bool gamma = t.name.ends_with(".weight");
      mean = gamma ? 1.0f : 0.0f;
      stddev = gamma ? 0.1f : 0.05f;
    } else if (t.role == TensorRole::kLayerScale) {
      mean = 0.1f;
      stddev = 0.01f;
    } else {
      const std::size_t fan_in = t.shape.numel() / t.shape[0];
      stddev = 1.0f / std::sqrt(static_cast<float>(fan_in));
    }
    if (stddev > 0.0f || mean != 0.0f) {
      for (auto& v : values.data()) v = mean + stddev * normal(rng);
    }
    archive.tensors.push_back(make_f32_record(t.name, values));
  }
  return archive;
}

F32Tensor synthetic_image(const VitConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  F32Tensor img(Shape{config.in_channels, config.img_size, config.img_size});
  for (auto& v : img.data()) v = normal(rng);
  return img;
}

}  // namespace ternforge
