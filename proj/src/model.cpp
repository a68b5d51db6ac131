#include "ternforge/model.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <string>

namespace ternforge {

namespace {

std::string block_name(std::size_t i, std::string_view suffix) {
  return "blocks." + std::to_string(i) + "." + std::string(suffix);
}

using Clock = std::chrono::steady_clock;

class ComponentScope {
 public:
  ComponentScope(const ForwardOptions& opts, Component c)
      : slot_(opts.component_time ? &(*opts.component_time)[static_cast<std::size_t>(c)] : nullptr) {
    if (slot_) start_ = Clock::now();
  }
  ~ComponentScope() {
    if (slot_) *slot_ += std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start_);
  }
  ComponentScope(const ComponentScope&) = delete;
  ComponentScope& operator=(const ComponentScope&) = delete;

 private:
  std::chrono::nanoseconds* slot_;
  Clock::time_point start_;
};

void check_finite(const F32Tensor& t, const std::string& layer) {
  if (!all_finite(t.data())) throw Error(Errc::kNanDetected, "non-finite output of " + layer);
}

F32Tensor apply_norm(const Norm& norm, const F32Tensor& x) {
  return std::visit(
      [&](const auto& n) -> F32Tensor {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, F32Affine>) {
          return layernorm(x, n.gamma.data(), n.beta.data(), n.eps);
        } else {
          return ternary_layernorm(x, n);
        }
      },
      norm);
}

F32Tensor apply_linear(const Linear& layer, const F32Tensor& x, const VitConfig& config,
                       std::string_view name, const ForwardOptions& opts) {
  return std::visit(
      [&](const auto& l) -> F32Tensor {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, F32Linear>) {
          return linear_f32(x, l.weight, l.bias);
        } else {
          const QuantizedActivations q =
              config.pre_quant_rmsnorm ? quantize_activations_per_token(rms_normalize_tokens(x, config.eps_ln))
                                       : quantize_activations_per_token(x);
          const I32Accumulator acc = tern_accumulate_packed(q, l);
          if (opts.tap) opts.tap(name, q, acc);
          return dequantize_accumulator(acc, q.scales, l.scales, l.scale_kind, l.bias);
        }
      },
      layer);
}

std::vector<float> scale_values(const ScaleVector& s) {
  return std::visit(
      [](const auto& v) -> std::vector<float> {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, F32Tensor>) {
          return {v.data().begin(), v.data().end()};
        } else {
          const F32Tensor d = v.dequantize();
          return {d.data().begin(), d.data().end()};
        }
      },
      s);
}

void residual_add(F32Tensor& x, const F32Tensor& update, const std::optional<ScaleVector>& ls) {
  const std::size_t dim = x.shape()[1];
  if (ls) {
    const std::vector<float> g = scale_values(*ls);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += g[i % dim] * update[i];
  } else {
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += update[i];
  }
}

// [tokens, 3 * dim] -> Q, K, V each [heads, tokens, head_dim].
std::array<F32Tensor, 3> split_qkv(const F32Tensor& qkv, std::size_t heads) {
  const std::size_t tokens = qkv.shape()[0];
  const std::size_t dim = qkv.shape()[1] / 3;
  const std::size_t hd = dim / heads;
  std::array<F32Tensor, 3> out{F32Tensor(Shape{heads, tokens, hd}), F32Tensor(Shape{heads, tokens, hd}),
                               F32Tensor(Shape{heads, tokens, hd})};
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t h = 0; h < heads; ++h) {
        const float* src = qkv.raw() + t * 3 * dim + s * dim + h * hd;
        std::copy(src, src + hd, out[s].raw() + (h * tokens + t) * hd);
      }
    }
  }
  return out;
}

}  // namespace

std::string_view plan_name(PrecisionPlan plan) noexcept {
  switch (plan) {
    case PrecisionPlan::kFp32: return "fp32";
    case PrecisionPlan::kPartialW2: return "partial-w2";
    case PrecisionPlan::kFullyTernary: return "ternary";
  }
  return "?";
}

PrecisionPlan parse_plan(std::string_view text) {
  if (text == "fp32") return PrecisionPlan::kFp32;
  if (text == "partial-w2") return PrecisionPlan::kPartialW2;
  if (text == "ternary") return PrecisionPlan::kFullyTernary;
  throw Error(Errc::kInvalidArgument, "unknown plan '" + std::string(text) + "'");
}

std::string_view role_name(TensorRole role) noexcept {
  switch (role) {
    case TensorRole::kPatchEmbed: return "patch_embed";
    case TensorRole::kEmbedding: return "embeddings";
    case TensorRole::kLayerNorm: return "layernorm";
    case TensorRole::kAttention: return "attention";
    case TensorRole::kFfn: return "ffn";
    case TensorRole::kLayerScale: return "layerscale";
    case TensorRole::kHead: return "head";
  }
  return "?";
}

std::vector<CanonicalTensor> canonical_tensors(const VitConfig& c) {
  const std::size_t d = c.dim;
  const std::size_t h = c.hidden_dim();
  std::vector<CanonicalTensor> out;
  auto add = [&](std::string name, Shape shape, TensorRole role, bool bias) {
    out.push_back({std::move(name), std::move(shape), role, bias});
  };
  add("patch_embed.proj.weight", Shape{d, c.in_channels, c.patch, c.patch}, TensorRole::kPatchEmbed, false);
  add("patch_embed.proj.bias", Shape{d}, TensorRole::kPatchEmbed, true);
  add("cls_token", Shape{1, d}, TensorRole::kEmbedding, false);
  add("pos_embed", Shape{c.tokens(), d}, TensorRole::kEmbedding, false);
  for (std::size_t i = 0; i < c.depth; ++i) {
    add(block_name(i, "norm1.weight"), Shape{d}, TensorRole::kLayerNorm, false);
    add(block_name(i, "norm1.bias"), Shape{d}, TensorRole::kLayerNorm, false);
    add(block_name(i, "attn.qkv.weight"), Shape{3 * d, d}, TensorRole::kAttention, false);
    add(block_name(i, "attn.qkv.bias"), Shape{3 * d}, TensorRole::kAttention, true);
    add(block_name(i, "attn.proj.weight"), Shape{d, d}, TensorRole::kAttention, false);
    add(block_name(i, "attn.proj.bias"), Shape{d}, TensorRole::kAttention, true);
    if (c.use_layerscale) add(block_name(i, "ls1.gamma"), Shape{d}, TensorRole::kLayerScale, false);
    add(block_name(i, "norm2.weight"), Shape{d}, TensorRole::kLayerNorm, false);
    add(block_name(i, "norm2.bias"), Shape{d}, TensorRole::kLayerNorm, false);
    add(block_name(i, "mlp.fc1.weight"), Shape{h, d}, TensorRole::kFfn, false);
    add(block_name(i, "mlp.fc1.bias"), Shape{h}, TensorRole::kFfn, true);
    add(block_name(i, "mlp.fc2.weight"), Shape{d, h}, TensorRole::kFfn, false);
    add(block_name(i, "mlp.fc2.bias"), Shape{d}, TensorRole::kFfn, true);
    if (c.use_layerscale) add(block_name(i, "ls2.gamma"), Shape{d}, TensorRole::kLayerScale, false);
  }
  add("norm.weight", Shape{d}, TensorRole::kLayerNorm, false);
  add("norm.bias", Shape{d}, TensorRole::kLayerNorm, false);
  add("head.weight", Shape{c.num_classes, d}, TensorRole::kHead, false);
  add("head.bias", Shape{c.num_classes}, TensorRole::kHead, true);
  return out;
}

namespace {

class ArchiveView {
 public:
  ArchiveView(const ModelFile& file, const VitConfig& config) : file_(file) {
    for (auto& t : canonical_tensors(config)) shapes_.emplace(t.name, t.shape);
  }

  const TensorRecord& record(const std::string& name) const {
    const TensorRecord& r = file_.at(name);
    const auto it = shapes_.find(name);
    if (it != shapes_.end() && it->second != r.shape) {
      throw Error(Errc::kShapeMismatch, name + ": got " + to_string(r.shape) + ", expected " +
                                            to_string(it->second));
    }
    return r;
  }
  F32Tensor f32(const std::string& name) const { return record_to_f32(record(name)); }
  TernaryTensor ternary(const std::string& name) const { return record_to_ternary(record(name)); }
  bool ternary_kind(const std::string& name) const { return is_ternary(record(name).kind); }

 private:
  const ModelFile& file_;
  std::map<std::string, Shape> shapes_;
};

}  // namespace

VitWeights build_from_archive(const ModelFile& archive, const VitConfig& config, PrecisionPlan plan) {
  config.validate();
  const ArchiveView a(archive, config);
  const bool full = plan == PrecisionPlan::kFullyTernary;
  const bool encoder = plan != PrecisionPlan::kFp32;
  const float ew = config.eps_w;

  auto linear = [&](const std::string& prefix, bool ternary, std::size_t qkv_block) -> Linear {
    F32Tensor w = a.f32(prefix + ".weight");
    F32Tensor b = a.f32(prefix + ".bias");
    if (!ternary) return F32Linear{std::move(w), std::move(b)};
    TernaryTensor t = qkv_block ? ternarize_row_blocks(w, qkv_block, ew) : ternarize_weights(w, ew);
    return pack_linear(LinearLayerTern{std::move(t), std::move(b)});
  };
  auto norm = [&](const std::string& prefix, bool ternary) -> Norm {
    F32Tensor g = a.f32(prefix + ".weight");
    F32Tensor b = a.f32(prefix + ".bias");
    if (!ternary) return F32Affine{std::move(g), std::move(b), config.eps_ln};
    return ternarize_affine(g, b, ew, config.eps_ln);
  };
  auto layerscale = [&](const std::string& name) -> std::optional<ScaleVector> {
    if (!config.use_layerscale) return std::nullopt;
    F32Tensor g = a.f32(name);
    if (full && !config.fp32_layerscale) return ternarize_weights(g, ew);
    return g;
  };

  VitWeights w;
  w.config = config;
  {
    F32Tensor pw = a.f32("patch_embed.proj.weight");
    F32Tensor pb = a.f32("patch_embed.proj.bias");
    if (full) {
      w.patch_embed = ConvPatchEmbedTern{ternarize_conv_weights(pw, ew), std::move(pb)};
    } else {
      w.patch_embed = F32Conv{std::move(pw), std::move(pb)};
    }
  }
  w.cls_token = a.f32("cls_token");
  w.pos_embed = a.f32("pos_embed");
  if (full && config.fp16_pos_embed) {
    for (auto& v : w.pos_embed.data()) v = round_to_half(v);
    w.pos_embed_f16 = true;
  }
  const std::size_t qkv_block = config.split_qkv_scales ? config.dim : 0;
  for (std::size_t i = 0; i < config.depth; ++i) {
    BlockWeights b{
        norm(block_name(i, "norm1"), full),
        linear(block_name(i, "attn.qkv"), encoder, qkv_block),
        linear(block_name(i, "attn.proj"), encoder, 0),
        layerscale(block_name(i, "ls1.gamma")),
        norm(block_name(i, "norm2"), full),
        linear(block_name(i, "mlp.fc1"), encoder, 0),
        linear(block_name(i, "mlp.fc2"), encoder, 0),
        layerscale(block_name(i, "ls2.gamma")),
    };
    w.blocks.push_back(std::move(b));
  }
  w.norm = norm("norm", full);
  w.head = linear("head", full, 0);
  return w;
}

VitWeights build_from_archive(const ModelFile& archive, PrecisionPlan plan) {
  return build_from_archive(archive, archive.config, plan);
}

namespace {

void emit_linear(std::vector<TensorRecord>& out, const std::string& prefix, const Linear& l) {
  std::visit(
      [&](const auto& layer) {
        using T = std::decay_t<decltype(layer)>;
        if constexpr (std::is_same_v<T, F32Linear>) {
          out.push_back(make_f32_record(prefix + ".weight", layer.weight));
          if (layer.bias) out.push_back(make_f32_record(prefix + ".bias", *layer.bias));
        } else {
          const TensorKind kind = layer.scale_kind == ScaleKind::kPerTensor ? TensorKind::kTern2PerTensor
                                                                            : TensorKind::kTern2PerChannel;
          out.push_back({prefix + ".weight", kind, layer.shape, layer.scales, layer.codes.bytes});
          if (layer.bias) out.push_back(make_f32_record(prefix + ".bias", *layer.bias));
        }
      },
      l);
}

void emit_norm(std::vector<TensorRecord>& out, const std::string& prefix, const Norm& n) {
  std::visit(
      [&](const auto& affine) {
        using T = std::decay_t<decltype(affine)>;
        if constexpr (std::is_same_v<T, F32Affine>) {
          out.push_back(make_f32_record(prefix + ".weight", affine.gamma));
          out.push_back(make_f32_record(prefix + ".bias", affine.beta));
        } else {
          out.push_back(make_ternary_record(prefix + ".weight", affine.gamma));
          out.push_back(make_ternary_record(prefix + ".bias", affine.beta));
        }
      },
      n);
}

void emit_scale(std::vector<TensorRecord>& out, const std::string& name,
                const std::optional<ScaleVector>& s) {
  if (!s) return;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, F32Tensor>) {
          out.push_back(make_f32_record(name, v));
        } else {
          out.push_back(make_ternary_record(name, v));
        }
      },
      *s);
}

}  // namespace

ModelFile to_model_file(const VitWeights& w) {
  ModelFile f;
  f.config = w.config;
  auto& out = f.tensors;
  std::visit(
      [&](const auto& pe) {
        using T = std::decay_t<decltype(pe)>;
        if constexpr (std::is_same_v<T, F32Conv>) {
          out.push_back(make_f32_record("patch_embed.proj.weight", pe.weight));
        } else {
          out.push_back(make_ternary_record("patch_embed.proj.weight", pe.weights));
        }
        if (pe.bias) out.push_back(make_f32_record("patch_embed.proj.bias", *pe.bias));
      },
      w.patch_embed);
  out.push_back(make_f32_record("cls_token", w.cls_token));
  out.push_back(w.pos_embed_f16 ? make_f16_record("pos_embed", w.pos_embed)
                                : make_f32_record("pos_embed", w.pos_embed));
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    const BlockWeights& b = w.blocks[i];
    emit_norm(out, block_name(i, "norm1"), b.norm1);
    emit_linear(out, block_name(i, "attn.qkv"), b.qkv);
    emit_linear(out, block_name(i, "attn.proj"), b.proj);
    emit_scale(out, block_name(i, "ls1.gamma"), b.ls1);
    emit_norm(out, block_name(i, "norm2"), b.norm2);
    emit_linear(out, block_name(i, "mlp.fc1"), b.fc1);
    emit_linear(out, block_name(i, "mlp.fc2"), b.fc2);
    emit_scale(out, block_name(i, "ls2.gamma"), b.ls2);
  }
  emit_norm(out, "norm", w.norm);
  emit_linear(out, "head", w.head);
  return f;
}

VitWeights from_model_file(const ModelFile& file) {
  const VitConfig& config = file.config;
  config.validate();
  const ArchiveView a(file, config);

  auto linear = [&](const std::string& prefix) -> Linear {
    const std::string wname = prefix + ".weight";
    F32Tensor bias = a.f32(prefix + ".bias");
    if (!a.ternary_kind(wname)) return F32Linear{a.f32(wname), std::move(bias)};
    const TensorRecord& r = a.record(wname);
    return PackedLinearLayer{r.shape, record_packed_trits(r), r.scales,
                             r.kind == TensorKind::kTern2PerTensor ? ScaleKind::kPerTensor
                                                                   : ScaleKind::kPerOutChannel,
                             std::move(bias)};
  };
  auto norm = [&](const std::string& prefix) -> Norm {
    const std::string g = prefix + ".weight";
    const std::string b = prefix + ".bias";
    const bool tg = a.ternary_kind(g);
    if (tg != a.ternary_kind(b)) {
      throw Error(Errc::kInvalidArgument, prefix + ": gamma and beta must share a precision");
    }
    if (!tg) return F32Affine{a.f32(g), a.f32(b), config.eps_ln};
    return TernaryAffine{a.ternary(g), a.ternary(b), config.eps_ln};
  };
  auto layerscale = [&](const std::string& name) -> std::optional<ScaleVector> {
    if (!config.use_layerscale) return std::nullopt;
    if (a.ternary_kind(name)) return a.ternary(name);
    return a.f32(name);
  };

  VitWeights w;
  w.config = config;
  if (a.ternary_kind("patch_embed.proj.weight")) {
    TernaryTensor t = a.ternary("patch_embed.proj.weight");
    t.validate();
    w.patch_embed = ConvPatchEmbedTern{std::move(t), a.f32("patch_embed.proj.bias")};
  } else {
    w.patch_embed = F32Conv{a.f32("patch_embed.proj.weight"), a.f32("patch_embed.proj.bias")};
  }
  w.cls_token = a.f32("cls_token");
  w.pos_embed = a.f32("pos_embed");
  w.pos_embed_f16 = a.record("pos_embed").kind == TensorKind::kF16;
  for (std::size_t i = 0; i < config.depth; ++i) {
    w.blocks.push_back(BlockWeights{
        norm(block_name(i, "norm1")),
        linear(block_name(i, "attn.qkv")),
        linear(block_name(i, "attn.proj")),
        layerscale(block_name(i, "ls1.gamma")),
        norm(block_name(i, "norm2")),
        linear(block_name(i, "mlp.fc1")),
        linear(block_name(i, "mlp.fc2")),
        layerscale(block_name(i, "ls2.gamma")),
    });
  }
  w.norm = norm("norm");
  w.head = linear("head");
  return w;
}

std::size_t save_ftv(const VitWeights& weights, const std::filesystem::path& path) {
  return write_ftv(to_model_file(weights), path);
}

VitWeights load_ftv(const std::filesystem::path& path) { return from_model_file(read_ftv(path)); }

std::vector<std::pair<std::string, TensorKind>> tensor_kinds(const VitWeights& weights) {
  std::vector<std::pair<std::string, TensorKind>> out;
  for (const auto& r : to_model_file(weights).tensors) out.emplace_back(r.name, r.kind);
  return out;
}

ForwardTrace forward(const VitWeights& w, const F32Tensor& img, const ForwardOptions& opts) {
  const VitConfig& c = w.config;
  const Shape want{c.in_channels, c.img_size, c.img_size};
  if (img.shape() != want) {
    throw Error(Errc::kShapeMismatch, "image " + to_string(img.shape()) + ", model expects " + to_string(want));
  }
  ForwardTrace trace;
  const std::size_t dim = c.dim;
  const std::size_t tokens = c.tokens();

  F32Tensor x(Shape{tokens, dim});
  {
    ComponentScope scope(opts, Component::kOther);
    F32Tensor patches = std::visit(
        [&](const auto& pe) -> F32Tensor {
          using T = std::decay_t<decltype(pe)>;
          if constexpr (std::is_same_v<T, F32Conv>) {
            return conv_patch_embed_f32(img, pe.weight, pe.bias);
          } else {
            return tern_conv_patch_embed(img, pe);
          }
        },
        w.patch_embed);
    check_finite(patches, "patch_embed");
    for (std::size_t i = 0; i < dim; ++i) x[i] = w.cls_token[i] + w.pos_embed[i];
    for (std::size_t t = 1; t < tokens; ++t) {
      for (std::size_t i = 0; i < dim; ++i) {
        x[t * dim + i] = patches[(t - 1) * dim + i] + w.pos_embed[t * dim + i];
      }
    }
    if (opts.trace.patch_embed) trace.patch_embed = std::move(patches);
  }

  for (std::size_t bi = 0; bi < w.blocks.size(); ++bi) {
    const BlockWeights& b = w.blocks[bi];
    const std::string prefix = block_name(bi, "");
    F32Tensor h;
    {
      ComponentScope scope(opts, Component::kLayerNorm);
      h = apply_norm(b.norm1, x);
    }
    check_finite(h, prefix + "norm1");
    F32Tensor qkv;
    {
      ComponentScope scope(opts, Component::kQkv);
      qkv = apply_linear(b.qkv, h, c, prefix + "attn.qkv", opts);
    }
    check_finite(qkv, prefix + "attn.qkv");
    F32Tensor attn;
    {
      ComponentScope scope(opts, Component::kAttention);
      auto [q, k, v] = split_qkv(qkv, c.heads);
      F32Tensor probs;
      attn = attention(q, k, v, opts.trace.attention ? &probs : nullptr);
      if (opts.trace.attention) trace.attention.push_back(std::move(probs));
    }
    check_finite(attn, prefix + "attn");
    F32Tensor o;
    {
      ComponentScope scope(opts, Component::kOutProj);
      o = apply_linear(b.proj, attn, c, prefix + "attn.proj", opts);
    }
    check_finite(o, prefix + "attn.proj");
    {
      ComponentScope scope(opts, Component::kOther);
      residual_add(x, o, b.ls1);
    }
    {
      ComponentScope scope(opts, Component::kLayerNorm);
      h = apply_norm(b.norm2, x);
    }
    check_finite(h, prefix + "norm2");
    F32Tensor f;
    {
      ComponentScope scope(opts, Component::kFfn);
      f = gelu(apply_linear(b.fc1, h, c, prefix + "mlp.fc1", opts));
      check_finite(f, prefix + "mlp.fc1");
      f = apply_linear(b.fc2, f, c, prefix + "mlp.fc2", opts);
    }
    check_finite(f, prefix + "mlp.fc2");
    {
      ComponentScope scope(opts, Component::kOther);
      residual_add(x, f, b.ls2);
    }
  }

  ComponentScope scope(opts, Component::kOther);
  F32Tensor cls(Shape{1, dim}, std::vector<float>(x.raw(), x.raw() + dim));
  cls = apply_norm(w.norm, cls);
  check_finite(cls, "norm");
  F32Tensor logits = apply_linear(w.head, cls, c, "head", opts);
  check_finite(logits, "head");
  if (opts.trace.pre_head_cls) trace.pre_head_cls = cls;
  trace.logits = F32Tensor(Shape{c.num_classes}, {logits.data().begin(), logits.data().end()});
  return trace;
}

std::vector<Prediction> predict_topk(const F32Tensor& logits, std::size_t k,
                                     const std::vector<std::string>& labels) {
  const std::size_t n = logits.numel();
  if (k > n) throw Error(Errc::kInvalidArgument, "k=" + std::to_string(k) + " exceeds class count");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t id = order[i];
    out.push_back({id, logits[id], id < labels.size() ? labels[id] : std::to_string(id)});
  }
  return out;
}

}  // namespace ternforge
