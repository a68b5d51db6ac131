#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ternforge/model.hpp"
#include "ternforge/tensor.hpp"

namespace ternforge {

// KL(softmax(teacher / T) || softmax(student / T)), computed in double.
// Rank-2 inputs are [batch, classes] and the result is the batch mean.
double kd_kl_loss(const F32Tensor& teacher_logits, const F32Tensor& student_logits, double temperature);

using LossFn = std::function<double(std::span<const double> params)>;

struct ParamGroup {
  std::string name;
  std::vector<std::size_t> indices;
};

// Every parameter index must appear in exactly one group.
void check_partition(const std::vector<ParamGroup>& groups, std::size_t param_count);

// One group per coordinate, named "w<i>".
std::vector<ParamGroup> per_coordinate_groups(std::size_t param_count);

// Central differences with step fd_step * max(1, |w_i|). NAN_DETECTED on a
// non-finite loss.
std::vector<double> fd_gradient(const LossFn& loss, std::span<const double> params, double fd_step);

struct GroupImportance {
  std::string name;
  std::size_t params = 0;
  double param_share = 0;
  double taylor_fo = 0;        // sum of |g_i * w_i|
  double taylor_fo_share = 0;
  double hessian_trace = 0;    // Hutchinson mean of v'Hv over probes
  double hessian_stderr = 0;
  double hessian_share = 0;    // |trace| normalized over groups
};

struct ImportanceReport {
  std::vector<GroupImportance> groups;
  std::vector<double> taylor_fo_per_param;
  // Set when every group scored zero and shares fell back to uniform.
  bool taylor_uniform_fallback = false;
  bool hessian_uniform_fallback = false;
};

ImportanceReport taylor_fo_importance(const LossFn& loss, std::span<const double> params,
                                      const std::vector<ParamGroup>& groups, double fd_step = 1e-3);

// Rademacher probes restricted to each group; probe p of group g draws from a
// seed derived from (seed, g, p), so results do not depend on threads.
// loss must be safe to call concurrently when threads > 1.
ImportanceReport hessian_trace_importance(const LossFn& loss, std::span<const double> params,
                                          const std::vector<ParamGroup>& groups, std::size_t probes,
                                          double fd_step, std::uint64_t seed, std::size_t threads = 1);

// Taylor fields from the first report, Hessian fields from the second.
ImportanceReport merge_importance(const ImportanceReport& taylor, const ImportanceReport& hessian);

std::string importance_csv(const ImportanceReport& report);

// Product of per-layer row-normalized (0.5 * head-mean + 0.5 * I) matrices,
// last layer on the left. Inputs are [heads, T, T] per layer; result [T, T].
F32Tensor rollout_matrix(std::span<const F32Tensor> attention);

// CLS row of the rollout over patch tokens as a [grid, grid] map min-max
// scaled to [0, 1]; a flat map becomes all zeros. MISSING_TRACE when the
// trace carries no attention.
F32Tensor attention_rollout(const ForwardTrace& trace);
F32Tensor attention_rollout(std::span<const F32Tensor> attention);

struct Summary {
  std::size_t count = 0;
  double mean = 0;
  double std = 0;  // population
  double p5 = 0;   // linear interpolation between order statistics
  double p95 = 0;
};

Summary summarize(std::vector<double> values);

// Zero vectors: 1 when both are zero, otherwise 0.
double cosine_similarity(std::span<const float> a, std::span<const float> b);
// Constant inputs: 1 when equal, otherwise 0.
double pearson_r(std::span<const float> a, std::span<const float> b);

struct TensorZeroFraction {
  std::string name;
  std::size_t zeros = 0;
  std::size_t total = 0;
  double fraction = 0;
};

struct AffineCosine {
  std::string name;
  double gamma = 0;
  double beta = 0;
};

struct FidelityReport {
  std::vector<TensorZeroFraction> zero_fraction;
  std::size_t zero_count = 0;
  std::size_t ternary_count = 0;
  double global_zero_fraction = 0;
  Summary patch_embed_cosine;  // over every patch token of every image
  std::vector<AffineCosine> affine_cosine;
  Summary gamma_cosine;
  Summary beta_cosine;
  std::vector<double> logit_r;  // per image
  Summary logit_r_summary;
  double pooled_logit_r = 0;
};

// Traces must come from the same images in the same order and carry the
// patch-embed output.
FidelityReport fidelity_compare(std::span<const ForwardTrace> fp32_traces, std::span<const ForwardTrace> tern_traces,
                                const VitWeights& fp32_weights, const VitWeights& tern_weights);

std::string fidelity_csv(const FidelityReport& report, const std::vector<std::string>& image_names = {});

}  // namespace ternforge
