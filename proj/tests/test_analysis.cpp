#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "ternforge/analysis.hpp"
#include "ternforge/synthetic.hpp"
#include "ternforge/toy_models.hpp"

using namespace ternforge;

namespace {

// KL by direct summation over explicitly normalized probabilities.
double brute_kl(const std::vector<double>& zt, const std::vector<double>& zs, double temp) {
  auto probs = [&](const std::vector<double>& z) {
    std::vector<double> p(z.size());
    double s = 0;
    for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] / temp);
    for (double& v : p) v /= s;
    return p;
  };
  const auto p = probs(zt), q = probs(zs);
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

}  // namespace

TEST(KdKlLoss, ClosedForm) {
  const F32Tensor t(Shape{2}, {std::log(2.0f), 0.0f});
  const F32Tensor s(Shape{2}, {0.0f, 0.0f});
  const double closed = (2.0 / 3) * std::log(4.0 / 3) + (1.0 / 3) * std::log(2.0 / 3);
  EXPECT_NEAR(closed, 0.0566, 1e-4);
  EXPECT_NEAR(kd_kl_loss(t, s, 1.0), brute_kl({std::log(2.0f), 0}, {0, 0}, 1.0), 1e-9);
  EXPECT_NEAR(kd_kl_loss(t, s, 1.0), closed, 1e-7);  // ln2 rounded to float
  EXPECT_EQ(kd_kl_loss(t, t, 1.0), 0.0);
}

TEST(KdKlLoss, NonNegativeAndBatched) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_tensor(Shape{3, 5}, rng(), 3.0f), b = random_tensor(Shape{3, 5}, rng(), 3.0f);
    const double temp = 0.5 + static_cast<double>(i % 4);
    const double kl = kd_kl_loss(a, b, temp);
    EXPECT_GE(kl, -1e-9);
    double mean = 0;
    for (std::size_t r = 0; r < 3; ++r) {
      mean += brute_kl({a.row(r).begin(), a.row(r).end()}, {b.row(r).begin(), b.row(r).end()}, temp) / 3;
    }
    EXPECT_NEAR(kl, mean, 1e-9);
  }
  EXPECT_ERRC(kd_kl_loss(F32Tensor(Shape{2}), F32Tensor(Shape{3}), 1.0), Errc::kShapeMismatch);
  EXPECT_ERRC(kd_kl_loss(F32Tensor(Shape{2}), F32Tensor(Shape{2}), 0.0), Errc::kInvalidArgument);
}

TEST(TaylorFo, QuadraticShares) {
  const std::vector<double> a{1.0, 2.0, 0.5, 3.0};
  const std::vector<double> w{0.3, -1.2, 2.0, 0.1};
  LossFn loss = [&](std::span<const double> p) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * p[i] * p[i];
    return s;
  };
  const auto r = taylor_fo_importance(loss, w, per_coordinate_groups(4), 1e-3);
  double total = 0;
  for (std::size_t i = 0; i < 4; ++i) total += 2 * a[i] * w[i] * w[i];
  double sum = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(r.groups[i].taylor_fo_share, 2 * a[i] * w[i] * w[i] / total, 1e-9);
    sum += r.groups[i].taylor_fo_share;
  }
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(TaylorFo, LinearAndConstantLoss) {
  const std::vector<double> c{0.5, -2.0, 3.0};
  const std::vector<double> w{4.0, 0.25, -1.0};
  LossFn linear = [&](std::span<const double> p) { return c[0] * p[0] + c[1] * p[1] + c[2] * p[2]; };
  const auto r = taylor_fo_importance(linear, w, {{"a", {0, 2}}, {"b", {1}}});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.taylor_fo_per_param[i], std::abs(c[i] * w[i]), 1e-9);
  EXPECT_NEAR(r.groups[0].taylor_fo, 5.0, 1e-9);
  EXPECT_FALSE(r.taylor_uniform_fallback);

  const auto flat = taylor_fo_importance([](std::span<const double>) { return 1.0; }, w, per_coordinate_groups(3));
  EXPECT_TRUE(flat.taylor_uniform_fallback);
  for (const auto& g : flat.groups) {
    EXPECT_EQ(g.taylor_fo, 0.0);
    EXPECT_DOUBLE_EQ(g.taylor_fo_share, 1.0 / 3);
  }
}

TEST(TaylorFo, FdGradientMatchesPolynomial) {
  const std::vector<double> w{0.7, -1.3, 2.2};
  LossFn f = [](std::span<const double> p) { return p[0] * p[0] * p[1] + std::pow(p[2], 3) - 2 * p[1]; };
  const auto g = fd_gradient(f, w, 1e-3);
  const std::vector<double> analytic{2 * w[0] * w[1], w[0] * w[0] - 2, 3 * w[2] * w[2]};
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LE(std::abs(g[i] - analytic[i]), 1e-4 * std::abs(analytic[i]));
  EXPECT_ERRC(fd_gradient([](std::span<const double>) { return std::nan(""); }, w, 1e-3), Errc::kNanDetected);
}

TEST(Importance, GroupsMustPartition) {
  LossFn f = [](std::span<const double>) { return 0.0; };
  const std::vector<double> w(3, 1.0);
  EXPECT_ERRC(taylor_fo_importance(f, w, {{"a", {0, 1}}}), Errc::kInvalidArgument);
  EXPECT_ERRC(taylor_fo_importance(f, w, {{"a", {0, 1}}, {"b", {1, 2}}}), Errc::kInvalidArgument);
}

TEST(Hutchinson, DiagonalQuadraticWithinThreeStandardErrors) {
  const std::vector<double> a{1.0, 2.0, 0.5, 3.0, 1.5, 0.25};
  const std::vector<double> w{0.3, -1.2, 2.0, 0.1, -0.4, 0.9};
  LossFn loss = [&](std::span<const double> p) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * p[i] * p[i];
    return s;
  };
  const std::vector<ParamGroup> groups{{"g0", {0, 1, 2}}, {"g1", {3, 4, 5}}};
  const auto r = hessian_trace_importance(loss, w, groups, 64, 1e-3, 5);
  EXPECT_NEAR(r.groups[0].hessian_trace, 2 * (1.0 + 2.0 + 0.5), 3 * r.groups[0].hessian_stderr + 1e-6);
  EXPECT_NEAR(r.groups[1].hessian_trace, 2 * (3.0 + 1.5 + 0.25), 3 * r.groups[1].hessian_stderr + 1e-6);
  EXPECT_NEAR(r.groups[0].hessian_share + r.groups[1].hessian_share, 1.0, 1e-9);
}

TEST(Hutchinson, DenseQuadraticAndDeterminism) {
  const std::size_t n = 8;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::vector<double> A(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) A[i * n + j] = A[j * n + i] = (i == j ? 2.0 + i : 0.3 * nd(rng));
  std::vector<double> w(n);
  for (double& v : w) v = nd(rng);
  LossFn loss = [&](std::span<const double> p) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) s += p[i] * A[i * n + j] * p[j];
    return 0.5 * s;
  };
  double trace = 0;
  for (std::size_t i = 0; i < n; ++i) trace += A[i * n + i];
  const std::vector<ParamGroup> all{{"all", {0, 1, 2, 3, 4, 5, 6, 7}}};
  const auto r = hessian_trace_importance(loss, w, all, 400, 1e-3, 11);
  EXPECT_NEAR(r.groups[0].hessian_trace, trace, 3 * r.groups[0].hessian_stderr);
  const auto again = hessian_trace_importance(loss, w, all, 400, 1e-3, 11, 3);
  EXPECT_EQ(again.groups[0].hessian_trace, r.groups[0].hessian_trace);
  EXPECT_EQ(again.groups[0].hessian_stderr, r.groups[0].hessian_stderr);
}

TEST(Hutchinson, LinearLossHasZeroTrace) {
  const std::vector<double> w{1.0, -2.0, 0.5};
  LossFn f = [](std::span<const double> p) { return 3 * p[0] - p[1] + 0.5 * p[2]; };
  const auto r = hessian_trace_importance(f, w, per_coordinate_groups(3), 16, 1e-3, 1);
  for (const auto& g : r.groups) EXPECT_NEAR(g.hessian_trace, 0.0, 1e-5);
}

TEST(ToyModels, SpecsBuildAndPartition) {
  const auto q = make_toy_problem(R"({"type":"quadratic","w":[1,2],"a":[3,4]})", 0);
  EXPECT_DOUBLE_EQ(q.loss(q.params), 3 + 16);
  const auto m = make_toy_problem(R"({"type":"quadratic","w":[1,2],"matrix":[[2,0],[0,4]]})", 0);
  EXPECT_DOUBLE_EQ(m.loss(m.params), 0.5 * (2 + 16));
  const auto l = make_toy_problem(R"({"type":"linear","w":[1,2],"c":[3,4],
                                      "groups":[{"name":"x","indices":[0,1]}]})", 0);
  EXPECT_EQ(l.groups.size(), 1u);
  const auto mlp = make_toy_problem(R"({"type":"mlp","layers":[4,6,3],"samples":8})", 7);
  EXPECT_EQ(mlp.params.size(), 4u * 6 + 6 + 6 * 3 + 3);
  EXPECT_EQ(mlp.loss(mlp.params), make_toy_problem(R"({"type":"mlp","layers":[4,6,3],"samples":8})", 7).loss(mlp.params));
  const auto vit = make_toy_problem(
      R"({"type":"vit","images":1,"config":{"depth":1,"dim":8,"heads":2,"patch":4,"img_size":8,"num_classes":3}})", 1);
  check_partition(vit.groups, vit.params.size());
  EXPECT_TRUE(std::isfinite(vit.loss(vit.params)));
  EXPECT_ERRC(make_toy_problem(R"({"type":"cubic"})", 0), Errc::kInvalidArgument);
  EXPECT_ERRC(make_toy_problem(R"({"type":"linear","w":[1],"c":[1,2]})", 0), Errc::kShapeMismatch);
}

TEST(Rollout, UniformAttentionGivesFlatMap) {
  const std::size_t T = 5;
  std::vector<F32Tensor> layers(3, F32Tensor(Shape{2, T, T}));
  for (auto& l : layers)
    for (auto& v : l.data()) v = 1.0f / T;
  const auto map = attention_rollout(layers);
  EXPECT_EQ(map.shape(), Shape({2, 2}));
  for (float v : map.data()) EXPECT_EQ(v, map[0]);
}

TEST(Rollout, OneHotClsAttention) {
  const std::size_t T = 10, j = 7;
  F32Tensor a(Shape{1, T, T});
  for (std::size_t i = 1; i < T; ++i) a[i * T + i] = 1.0f;
  a[j] = 1.0f;
  const auto map = attention_rollout(std::vector<F32Tensor>{a});
  for (std::size_t k = 0; k < T - 1; ++k) EXPECT_EQ(map[k], k + 1 == j ? 1.0f : 0.0f);
}

TEST(Rollout, RowsStochasticAndScaleInvariant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const std::size_t T = 17, H = 3;
  std::vector<F32Tensor> layers;
  for (int l = 0; l < 4; ++l) {
    F32Tensor a(Shape{H, T, T});
    for (std::size_t r = 0; r < H * T; ++r) {
      float s = 0;
      for (std::size_t c = 0; c < T; ++c) s += a[r * T + c] = u(rng);
      for (std::size_t c = 0; c < T; ++c) a[r * T + c] /= s;
    }
    layers.push_back(a);
  }
  const auto R = rollout_matrix(layers);
  for (std::size_t i = 0; i < T; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < T; ++k) s += R[i * T + k];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  EXPECT_ERRC(attention_rollout(ForwardTrace{}), Errc::kMissingTrace);
}

TEST(Fidelity, IdenticalTracesAndStatistics) {
  VitConfig c;
  c.depth = 2;
  c.dim = 16;
  c.heads = 2;
  c.patch = 8;
  c.img_size = 32;
  c.num_classes = 6;
  const ModelFile archive = generate_synthetic_archive(c, 3);
  const VitWeights fp = build_from_archive(archive, PrecisionPlan::kFp32);
  const VitWeights tq = build_from_archive(archive, PrecisionPlan::kFullyTernary);
  ForwardOptions opts;
  opts.trace.patch_embed = true;
  std::vector<ForwardTrace> a, b;
  for (std::uint64_t s = 0; s < 3; ++s) {
    a.push_back(forward(fp, synthetic_image(c, s), opts));
    b.push_back(forward(tq, synthetic_image(c, s), opts));
  }
  const auto same = fidelity_compare(a, a, fp, fp);
  EXPECT_NEAR(same.patch_embed_cosine.mean, 1.0, 1e-12);
  EXPECT_NEAR(same.pooled_logit_r, 1.0, 1e-12);
  EXPECT_NEAR(same.gamma_cosine.mean, 1.0, 1e-12);
  EXPECT_TRUE(same.zero_fraction.empty());

  const auto r = fidelity_compare(a, b, fp, tq);
  EXPECT_EQ(r.logit_r.size(), 3u);
  EXPECT_EQ(r.affine_cosine.size(), 2u * 2 + 1);
  EXPECT_GT(r.ternary_count, 0u);
  for (const auto& z : r.zero_fraction) {
    EXPECT_GE(z.fraction, 0.0);
    EXPECT_LE(z.fraction, 1.0);
  }
  EXPECT_GE(r.patch_embed_cosine.p95, r.patch_embed_cosine.p5);
  EXPECT_LE(std::abs(r.pooled_logit_r), 1.0);
  EXPECT_FALSE(fidelity_csv(r).empty());
  EXPECT_ERRC(fidelity_compare(a, std::span(b).first(2), fp, tq), Errc::kShapeMismatch);
}

TEST(Fidelity, AllZeroCodesAndCosineStatistics) {
  VitConfig c;
  c.depth = 1;
  c.dim = 8;
  c.heads = 2;
  c.patch = 4;
  c.img_size = 8;
  c.num_classes = 3;
  ModelFile archive = generate_synthetic_archive(c, 1);
  for (auto& r : archive.tensors) r = make_f32_record(r.name, F32Tensor(r.shape));
  const VitWeights tq = build_from_archive(archive, PrecisionPlan::kFullyTernary);
  const auto r = fidelity_compare({}, {}, tq, tq);
  EXPECT_EQ(r.global_zero_fraction, 1.0);

  double sum = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto x = random_tensor(Shape{384}, 2 * s), y = random_tensor(Shape{384}, 2 * s + 1);
    const double cs = cosine_similarity(x.data(), y.data());
    EXPECT_LT(std::abs(cs), 0.2);
    sum += cs;
  }
  EXPECT_LT(std::abs(sum / 50), 0.1);
}

TEST(Summary, LinearPercentiles) {
  std::vector<double> v(101);
  for (std::size_t i = 0; i <= 100; ++i) v[i] = static_cast<double>(100 - i);
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 50.0);
  EXPECT_DOUBLE_EQ(s.p5, 5.0);
  EXPECT_DOUBLE_EQ(s.p95, 95.0);
  const auto two = summarize({0.0, 1.0});
  EXPECT_DOUBLE_EQ(two.p5, 0.05);
  EXPECT_DOUBLE_EQ(two.std, 0.5);
}
