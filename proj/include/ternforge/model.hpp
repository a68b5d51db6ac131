#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ternforge/config.hpp"
#include "ternforge/format.hpp"
#include "ternforge/kernels.hpp"
#include "ternforge/quantizer.hpp"

namespace ternforge {

// FP32: nothing quantized. PartialW2: encoder linears only (the usual prior
// practice). FullyTernary: every weight matrix, conv filter, LayerNorm affine
// and LayerScale vector.
enum class PrecisionPlan { kFp32, kPartialW2, kFullyTernary };

std::string_view plan_name(PrecisionPlan plan) noexcept;
PrecisionPlan parse_plan(std::string_view text);  // fp32 | partial-w2 | ternary

// Which part of the network a canonical tensor belongs to.
enum class TensorRole { kPatchEmbed, kEmbedding, kLayerNorm, kAttention, kFfn, kLayerScale, kHead };

std::string_view role_name(TensorRole role) noexcept;

struct CanonicalTensor {
  std::string name;
  Shape shape;
  TensorRole role;
  bool is_bias;
};

// The canonical tensor set of a config, in file order:
//   patch_embed.proj.{weight,bias}, cls_token, pos_embed,
//   blocks.{i}.norm1.{weight,bias}, blocks.{i}.attn.qkv.{weight,bias},
//   blocks.{i}.attn.proj.{weight,bias}, blocks.{i}.ls1.gamma,
//   blocks.{i}.norm2.{weight,bias}, blocks.{i}.mlp.fc1.{weight,bias},
//   blocks.{i}.mlp.fc2.{weight,bias}, blocks.{i}.ls2.gamma,
//   norm.{weight,bias}, head.{weight,bias}
// LayerScale entries appear only when use_layerscale is set.
std::vector<CanonicalTensor> canonical_tensors(const VitConfig& config);

struct F32Linear {
  F32Tensor weight;  // [out, in]
  std::optional<F32Tensor> bias;
};
struct F32Affine {
  F32Tensor gamma;
  F32Tensor beta;
  float eps = kDefaultLayerNormEps;
};
struct F32Conv {
  F32Tensor weight;  // [C_out, C_in, p, p]
  std::optional<F32Tensor> bias;
};

using Linear = std::variant<F32Linear, PackedLinearLayer>;
using Norm = std::variant<F32Affine, TernaryAffine>;
using PatchEmbed = std::variant<F32Conv, ConvPatchEmbedTern>;
using ScaleVector = std::variant<F32Tensor, TernaryTensor>;

struct BlockWeights {
  Norm norm1;
  Linear qkv;  // fused [3 * dim, dim]
  Linear proj;
  std::optional<ScaleVector> ls1;
  Norm norm2;
  Linear fc1;
  Linear fc2;
  std::optional<ScaleVector> ls2;
};

// Immutable once built; safe to share across threads.
struct VitWeights {
  VitConfig config;
  PatchEmbed patch_embed;
  F32Tensor cls_token;  // [1, dim]
  F32Tensor pos_embed;  // [tokens, dim]
  bool pos_embed_f16 = false;
  std::vector<BlockWeights> blocks;
  Norm norm;
  Linear head;
};

VitWeights build_from_archive(const ModelFile& archive, const VitConfig& config, PrecisionPlan plan);
VitWeights build_from_archive(const ModelFile& archive, PrecisionPlan plan);

ModelFile to_model_file(const VitWeights& weights);
VitWeights from_model_file(const ModelFile& file);
std::size_t save_ftv(const VitWeights& weights, const std::filesystem::path& path);
VitWeights load_ftv(const std::filesystem::path& path);

// Profile taxonomy; kOther is what the block components do not cover.
enum class Component { kLayerNorm, kQkv, kAttention, kOutProj, kFfn, kOther };
inline constexpr std::size_t kComponentCount = 6;

struct TraceOptions {
  bool patch_embed = false;
  bool attention = false;
  bool pre_head_cls = false;
};

struct ForwardTrace {
  std::optional<F32Tensor> patch_embed;  // [patches, dim]
  std::vector<F32Tensor> attention;      // per block, [heads, tokens, tokens]
  std::optional<F32Tensor> pre_head_cls; // [1, dim]
  F32Tensor logits;                      // [num_classes]
};

using KernelTap = std::function<void(std::string_view layer, const QuantizedActivations& input,
                                     const I32Accumulator& acc)>;

struct ForwardOptions {
  TraceOptions trace;
  // Receives the integer accumulators of every ternary linear layer.
  KernelTap tap;
  // When set, wall time per component is added into this array.
  std::array<std::chrono::nanoseconds, kComponentCount>* component_time = nullptr;
};

// img: [C, H, W], already resized and normalized.
ForwardTrace forward(const VitWeights& weights, const F32Tensor& img, const ForwardOptions& opts = {});

struct Prediction {
  std::size_t class_id;
  float score;
  std::string label;
};

// Descending by logit; ties go to the lower class index.
std::vector<Prediction> predict_topk(const F32Tensor& logits, std::size_t k,
                                     const std::vector<std::string>& labels = {});

// Kinds of every tensor in a built model, keyed by canonical name.
std::vector<std::pair<std::string, TensorKind>> tensor_kinds(const VitWeights& weights);

}  // namespace ternforge
