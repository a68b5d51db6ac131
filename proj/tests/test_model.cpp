#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "reference_vit.hpp"
#include "test_util.hpp"
#include "ternforge/model.hpp"
#include "ternforge/synthetic.hpp"

using namespace ternforge;

namespace {

VitConfig tiny_config(bool layerscale = false) {
  VitConfig c;
  c.depth = 2;
  c.dim = 16;
  c.heads = 2;
  c.patch = 8;
  c.img_size = 32;
  c.num_classes = 7;
  c.use_layerscale = layerscale;
  return c;
}

std::map<std::string, TensorKind> kinds(const VitWeights& w) {
  std::map<std::string, TensorKind> out;
  for (auto& [name, kind] : tensor_kinds(w)) out[name] = kind;
  return out;
}

}  // namespace

TEST(Config, PresetsAndParameterCounts) {
  const VitConfig tiny = preset_config("deit_tiny_224");
  // Hand count: patch conv + cls + pos + 12 blocks + final norm + head.
  const std::size_t d = 192, h = 768, t = 197;
  const std::size_t block = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (h * d + h) + (d * h + d);
  const std::size_t hand = (d * 3 * 16 * 16 + d) + d + t * d + 12 * block + 2 * d + (1000 * d + 1000);
  EXPECT_EQ(parameter_count(tiny), hand);
  EXPECT_NEAR(static_cast<double>(parameter_count(tiny)) / 5.5e6, 1.0, 0.05);
  EXPECT_NEAR(static_cast<double>(parameter_count(preset_config("deit_small_224"))) / 22.1e6, 1.0, 0.02);
  EXPECT_EQ(preset_config("deit3_small_384").tokens(), 577u);
  EXPECT_TRUE(preset_config("deit3_small_224").use_layerscale);
  EXPECT_ERRC(preset_config("nope"), Errc::kInvalidArgument);
}

TEST(Config, JsonRoundTripAndValidation) {
  VitConfig c = tiny_config(true);
  c.split_qkv_scales = true;
  c.norm_mean = {0.5f, 0.5f, 0.5f};
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
  EXPECT_EQ(config_from_json(R"({"base": "deit_small_224", "num_classes": 10})").num_classes, 10u);
  EXPECT_ERRC(config_from_json(R"({"dim": 10, "heads": 3})"), Errc::kInvalidArgument);
  EXPECT_ERRC(config_from_json(R"({"img_size": 30, "patch": 16})"), Errc::kInvalidArgument);
  EXPECT_ERRC(config_from_json("{"), Errc::kInvalidArgument);
}

TEST(BuildFromArchive, PlanKinds) {
  const ModelFile archive = generate_synthetic_archive(tiny_config(true), 1);
  for (auto& [name, kind] : kinds(build_from_archive(archive, PrecisionPlan::kFp32))) {
    EXPECT_EQ(kind, TensorKind::kF32) << name;
  }
  for (auto& [name, kind] : kinds(build_from_archive(archive, PrecisionPlan::kFullyTernary))) {
    const bool residue = name.ends_with(".bias") && name.find("norm") == std::string::npos;
    if (residue || name == "cls_token") {
      EXPECT_EQ(kind, TensorKind::kF32) << name;
    } else if (name == "pos_embed") {
      EXPECT_EQ(kind, TensorKind::kF16);
    } else {
      EXPECT_TRUE(is_ternary(kind)) << name;
    }
  }
  for (auto& [name, kind] : kinds(build_from_archive(archive, PrecisionPlan::kPartialW2))) {
    const bool encoder_linear = name.find("attn.") != std::string::npos || name.find("mlp.") != std::string::npos;
    if (encoder_linear && name.ends_with(".weight")) {
      EXPECT_EQ(kind, TensorKind::kTern2PerTensor) << name;
    } else {
      EXPECT_EQ(kind, TensorKind::kF32) << name;
    }
  }
}

TEST(BuildFromArchive, Options) {
  VitConfig c = tiny_config(true);
  c.split_qkv_scales = true;
  c.fp32_layerscale = true;
  c.fp16_pos_embed = false;
  const auto k = kinds(build_from_archive(generate_synthetic_archive(c, 2), PrecisionPlan::kFullyTernary));
  EXPECT_EQ(k.at("blocks.0.attn.qkv.weight"), TensorKind::kTern2PerChannel);
  EXPECT_EQ(k.at("blocks.1.ls2.gamma"), TensorKind::kF32);
  EXPECT_EQ(k.at("pos_embed"), TensorKind::kF32);
  EXPECT_EQ(k.at("patch_embed.proj.weight"), TensorKind::kTern2PerChannel);
}

TEST(BuildFromArchive, MissingAndMisshapenTensors) {
  ModelFile archive = generate_synthetic_archive(tiny_config(), 3);
  ModelFile missing = archive;
  missing.tensors.erase(missing.tensors.begin() + 5);
  try {
    build_from_archive(missing, PrecisionPlan::kFp32);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kMissingTensor);
    EXPECT_NE(std::string(e.what()).find(archive.tensors[5].name), std::string::npos);
  }
  ModelFile bad = archive;
  bad.tensors[0] = make_f32_record(bad.tensors[0].name, F32Tensor(Shape{3, 3}));
  EXPECT_ERRC(build_from_archive(bad, PrecisionPlan::kFullyTernary), Errc::kShapeMismatch);
}

TEST(Forward, Fp32MatchesNaiveReference) {
  for (bool ls : {false, true}) {
    const ModelFile archive = generate_synthetic_archive(tiny_config(ls), 4);
    const auto img = synthetic_image(archive.config, 5);
    const auto got = forward(build_from_archive(archive, PrecisionPlan::kFp32), img).logits;
    EXPECT_EQ(got.shape(), Shape({7}));
    EXPECT_LE(oracle::rel_inf_error(got.data(), oracle::reference_fp32_logits(archive, img)), 1e-4);
  }
}

TEST(Forward, TernaryMatchesFloatEmulation) {
  for (bool ls : {false, true}) {
    const ModelFile archive = generate_synthetic_archive(tiny_config(ls), 6);
    const auto img = synthetic_image(archive.config, 7);
    const auto got = forward(build_from_archive(archive, PrecisionPlan::kFullyTernary), img).logits;
    const auto want = oracle::emulated_ternary_logits(archive, img);
    EXPECT_LE(oracle::rel_inf_error(got.data(), want), 1e-5);
  }
}

TEST(Forward, TapAccumulatorsMatchIntegerOracle) {
  const ModelFile archive = generate_synthetic_archive(tiny_config(), 8);
  const VitWeights w = build_from_archive(archive, PrecisionPlan::kFullyTernary);
  std::size_t layers = 0;
  ForwardOptions opts;
  opts.tap = [&](std::string_view layer, const QuantizedActivations& q, const I32Accumulator& acc) {
    const F32Tensor src = record_to_f32(archive.at(std::string(layer) + ".weight"));
    float s = 0;
    const auto codes = oracle::ternarize(src.data(), archive.config.eps_w, s);
    const auto ref = oracle::int_matmul(q.values.data(), q.values.shape()[0], codes, src.shape()[0], src.shape()[1]);
    ASSERT_EQ(acc.data().size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(acc[i], ref[i]) << layer;
    ++layers;
  };
  forward(w, synthetic_image(archive.config, 9), opts);
  EXPECT_EQ(layers, 4u * archive.config.depth + 1);
}

TEST(Forward, ShapesTraceAndDeterminism) {
  const ModelFile archive = generate_synthetic_archive(tiny_config(), 10);
  const VitWeights w = build_from_archive(archive, PrecisionPlan::kFullyTernary);
  const auto img = synthetic_image(archive.config, 11);
  ForwardOptions opts;
  opts.trace = {true, true, true};
  const auto a = forward(w, img, opts);
  const auto b = forward(w, img, opts);
  EXPECT_EQ(a.logits, b.logits);
  ASSERT_EQ(a.attention.size(), 2u);
  EXPECT_EQ(a.attention[0].shape(), Shape({2, 17, 17}));
  EXPECT_EQ(a.patch_embed->shape(), Shape({16, 16}));
  EXPECT_EQ(a.pre_head_cls->shape(), Shape({1, 16}));
  EXPECT_ERRC(forward(w, F32Tensor(Shape{3, 16, 16})), Errc::kShapeMismatch);
}

TEST(Forward, NonFiniteIntermediateNamesLayer) {
  ModelFile archive = generate_synthetic_archive(tiny_config(), 12);
  for (auto& r : archive.tensors) {
    if (r.name == "blocks.1.mlp.fc2.bias") {
      F32Tensor b = record_to_f32(r);
      b[0] = std::numeric_limits<float>::infinity();
      r = make_f32_record(r.name, b);
    }
  }
  try {
    forward(build_from_archive(archive, PrecisionPlan::kFp32), synthetic_image(archive.config, 1));
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kNanDetected);
    EXPECT_NE(std::string(e.what()).find("blocks.1.mlp.fc2"), std::string::npos);
  }
}

TEST(Forward, RepresentableWeightsOnlyPayActivationError) {
  VitConfig c = tiny_config();
  c.fp16_pos_embed = false;
  c.eps_w = 0.0f;
  ModelFile archive = generate_synthetic_archive(c, 13);
  // Snap every quantized tensor to sign(w) * absmean(w) (per filter for the
  // conv). Without zero codes the absmean is unchanged, so ternarization is exact.
  for (auto& r : archive.tensors) {
    const bool bias = r.name.ends_with(".bias") && r.name.find("norm") == std::string::npos;
    if (bias || r.name == "cls_token" || r.name == "pos_embed") continue;
    F32Tensor w = record_to_f32(r);
    const std::size_t rows = r.name == "patch_embed.proj.weight" ? w.shape()[0] : 1;
    const std::size_t len = w.numel() / rows;
    for (std::size_t row = 0; row < rows; ++row) {
      auto span = w.data().subspan(row * len, len);
      double mean = 0;
      for (float v : span) mean += std::abs(v);
      const auto s = static_cast<float>(mean / static_cast<double>(len));
      for (float& v : span) v = v < 0 ? -s : s;
    }
    r = make_f32_record(r.name, w);
  }
  const auto img = synthetic_image(c, 14);
  const auto fp = forward(build_from_archive(archive, PrecisionPlan::kFp32), img).logits;
  const auto tq = forward(build_from_archive(archive, PrecisionPlan::kFullyTernary), img).logits;
  EXPECT_LE(oracle::rel_inf_error(tq.data(), fp.data()), 0.05);
}

TEST(Forward, PreQuantRmsNormVariantRuns) {
  VitConfig c = tiny_config();
  c.pre_quant_rmsnorm = true;
  const ModelFile archive = generate_synthetic_archive(c, 15);
  const auto img = synthetic_image(c, 16);
  const auto a = forward(build_from_archive(archive, PrecisionPlan::kFullyTernary), img).logits;
  EXPECT_TRUE(all_finite(a.data()));
  ModelFile plain = archive;
  plain.config.pre_quant_rmsnorm = false;
  EXPECT_NE(a, forward(build_from_archive(plain, PrecisionPlan::kFullyTernary), img).logits);
}

TEST(Ftv, SaveLoadPreservesLogits) {
  const auto dir = std::filesystem::temp_directory_path() / "ternforge_model_test";
  std::filesystem::create_directories(dir);
  for (auto plan : {PrecisionPlan::kFp32, PrecisionPlan::kPartialW2, PrecisionPlan::kFullyTernary}) {
    const ModelFile archive = generate_synthetic_archive(tiny_config(true), 17);
    const VitWeights w = build_from_archive(archive, plan);
    save_ftv(w, dir / "m.ftv");
    const VitWeights back = load_ftv(dir / "m.ftv");
    const auto img = synthetic_image(archive.config, 18);
    EXPECT_EQ(forward(w, img).logits, forward(back, img).logits) << plan_name(plan);
    EXPECT_EQ(to_model_file(back), to_model_file(w));
  }
  std::filesystem::remove_all(dir);
}

TEST(PredictTopk, Examples) {
  const auto p = predict_topk(F32Tensor(Shape{3}, {0.1f, 0.9f, 0.2f}), 1);
  EXPECT_EQ(p[0].class_id, 1u);
  const auto tie = predict_topk(F32Tensor(Shape{4}, {1, 1, 1, 1}), 4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(tie[i].class_id, i);
  const auto all = predict_topk(F32Tensor(Shape{3}, {0.3f, -1, 2}), 3, {"a", "b", "c"});
  EXPECT_EQ(all[0].label, "c");
  EXPECT_EQ(all[1].label, "a");
  EXPECT_EQ(all[2].label, "b");
  EXPECT_ERRC(predict_topk(F32Tensor(Shape{3}), 4), Errc::kInvalidArgument);
}

TEST(Synthetic, SeedDeterminism) {
  const auto a = encode_model(generate_synthetic_archive(tiny_config(), 99), Container::kNwa);
  const auto b = encode_model(generate_synthetic_archive(tiny_config(), 99), Container::kNwa);
  const auto c = encode_model(generate_synthetic_archive(tiny_config(), 100), Container::kNwa);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  const ModelFile m = generate_synthetic_archive(tiny_config(), 99);
  const F32Tensor bias = record_to_f32(m.at("blocks.0.attn.qkv.bias"));
  for (float v : bias.data()) EXPECT_EQ(v, 0.0f);
}
