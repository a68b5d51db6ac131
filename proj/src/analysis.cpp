#include "ternforge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <thread>

#include "ternforge/packing.hpp"

namespace ternforge {

namespace {

std::vector<double> log_softmax(std::span<const float> z, double temperature) {
  std::vector<double> out(z.size());
  double mx = -INFINITY;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = static_cast<double>(z[i]) / temperature;
    mx = std::max(mx, out[i]);
  }
  double sum = 0;
  for (double v : out) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : out) v -= lse;
  return out;
}

double checked_loss(const LossFn& loss, std::span<const double> params) {
  const double v = loss(params);
  if (!std::isfinite(v)) throw Error(Errc::kNanDetected, "loss returned a non-finite value");
  return v;
}

double step_for(double w, double fd_step) { return fd_step * std::max(1.0, std::abs(w)); }

// Central-difference gradient over a subset of coordinates of `point`.
std::vector<double> partial_gradient(const LossFn& loss, std::vector<double>& point,
                                     const std::vector<std::size_t>& indices, double fd_step) {
  std::vector<double> g(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    const double w = point[i];
    const double h = step_for(w, fd_step);
    point[i] = w + h;
    const double up = checked_loss(loss, point);
    point[i] = w - h;
    const double down = checked_loss(loss, point);
    point[i] = w;
    g[k] = (up - down) / (2 * h);
  }
  return g;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t probe_seed(std::uint64_t seed, std::size_t group, std::size_t probe) {
  return splitmix64(splitmix64(seed) ^ splitmix64((static_cast<std::uint64_t>(group) << 32) ^ probe));
}

// One Hutchinson sample v'Hv with v Rademacher on the group coordinates.
double hutchinson_sample(const LossFn& loss, std::span<const double> params, const std::vector<std::size_t>& indices,
                         double fd_step, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(indices.size());
  double wmax = 0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    v[k] = (rng() & 1u) ? 1.0 : -1.0;
    wmax = std::max(wmax, std::abs(params[indices[k]]));
  }
  const double eps = step_for(wmax, fd_step);
  std::vector<double> point(params.begin(), params.end());
  for (std::size_t k = 0; k < indices.size(); ++k) point[indices[k]] = params[indices[k]] + eps * v[k];
  const std::vector<double> g_up = partial_gradient(loss, point, indices, fd_step);
  for (std::size_t k = 0; k < indices.size(); ++k) point[indices[k]] = params[indices[k]] - eps * v[k];
  const std::vector<double> g_down = partial_gradient(loss, point, indices, fd_step);
  double vhv = 0;
  for (std::size_t k = 0; k < indices.size(); ++k) vhv += v[k] * (g_up[k] - g_down[k]) / (2 * eps);
  return vhv;
}

ImportanceReport base_report(const std::vector<ParamGroup>& groups, std::size_t param_count) {
  check_partition(groups, param_count);
  ImportanceReport r;
  for (const auto& g : groups) {
    GroupImportance gi;
    gi.name = g.name;
    gi.params = g.indices.size();
    gi.param_share = static_cast<double>(gi.params) / static_cast<double>(param_count);
    r.groups.push_back(gi);
  }
  return r;
}

// Normalizes scores into shares; uniform when all are zero.
bool assign_shares(std::vector<GroupImportance>& groups, double GroupImportance::*score,
                   double GroupImportance::*share) {
  double total = 0;
  for (const auto& g : groups) total += std::abs(g.*score);
  const bool degenerate = !(total > 0);
  for (auto& g : groups) {
    g.*share = degenerate ? 1.0 / static_cast<double>(groups.size()) : std::abs(g.*score) / total;
  }
  return degenerate;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::vector<float> affine_vector(const Norm& norm, bool gamma) {
  return std::visit(
      [&](const auto& n) -> std::vector<float> {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, F32Affine>) {
          const F32Tensor& t = gamma ? n.gamma : n.beta;
          return {t.data().begin(), t.data().end()};
        } else {
          const F32Tensor t = (gamma ? n.gamma : n.beta).dequantize();
          return {t.data().begin(), t.data().end()};
        }
      },
      norm);
}

double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.size() == 1) return sorted.front();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

double kd_kl_loss(const F32Tensor& teacher, const F32Tensor& student, double temperature) {
  if (teacher.shape() != student.shape()) {
    throw Error(Errc::kShapeMismatch, "teacher " + to_string(teacher.shape()) + " vs student " +
                                          to_string(student.shape()));
  }
  if (!(temperature > 0)) throw Error(Errc::kInvalidArgument, "temperature must be positive");
  if (teacher.shape().rank() > 2) throw Error(Errc::kShapeMismatch, "logits must be rank 1 or 2");
  const std::size_t classes = teacher.shape()[teacher.shape().rank() - 1];
  const std::size_t rows = teacher.numel() / classes;
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto lp = log_softmax(teacher.data().subspan(r * classes, classes), temperature);
    const auto lq = log_softmax(student.data().subspan(r * classes, classes), temperature);
    double kl = 0;
    for (std::size_t i = 0; i < classes; ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
    total += kl;
  }
  return total / static_cast<double>(rows);
}

void check_partition(const std::vector<ParamGroup>& groups, std::size_t param_count) {
  if (groups.empty()) throw Error(Errc::kInvalidArgument, "no parameter groups");
  std::vector<std::uint8_t> seen(param_count, 0);
  for (const auto& g : groups) {
    if (g.indices.empty()) throw Error(Errc::kInvalidArgument, "group '" + g.name + "' is empty");
    for (std::size_t i : g.indices) {
      if (i >= param_count) throw Error(Errc::kInvalidArgument, "group '" + g.name + "' index out of range");
      if (seen[i]++) throw Error(Errc::kInvalidArgument, "parameter " + std::to_string(i) + " in two groups");
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw Error(Errc::kInvalidArgument, "groups do not cover every parameter");
  }
}

std::vector<ParamGroup> per_coordinate_groups(std::size_t param_count) {
  std::vector<ParamGroup> groups;
  for (std::size_t i = 0; i < param_count; ++i) groups.push_back({"w" + std::to_string(i), {i}});
  return groups;
}

std::vector<double> fd_gradient(const LossFn& loss, std::span<const double> params, double fd_step) {
  std::vector<double> point(params.begin(), params.end());
  std::vector<std::size_t> all(params.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return partial_gradient(loss, point, all, fd_step);
}

ImportanceReport taylor_fo_importance(const LossFn& loss, std::span<const double> params,
                                      const std::vector<ParamGroup>& groups, double fd_step) {
  ImportanceReport r = base_report(groups, params.size());
  const std::vector<double> g = fd_gradient(loss, params, fd_step);
  r.taylor_fo_per_param.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) r.taylor_fo_per_param[i] = std::abs(g[i] * params[i]);
  for (std::size_t k = 0; k < groups.size(); ++k) {
    double sum = 0;
    for (std::size_t i : groups[k].indices) sum += r.taylor_fo_per_param[i];
    r.groups[k].taylor_fo = sum;
  }
  r.taylor_uniform_fallback = assign_shares(r.groups, &GroupImportance::taylor_fo, &GroupImportance::taylor_fo_share);
  return r;
}

ImportanceReport hessian_trace_importance(const LossFn& loss, std::span<const double> params,
                                          const std::vector<ParamGroup>& groups, std::size_t probes,
                                          double fd_step, std::uint64_t seed, std::size_t threads) {
  if (probes == 0) throw Error(Errc::kInvalidArgument, "need at least one probe");
  ImportanceReport r = base_report(groups, params.size());
  checked_loss(loss, params);
  const std::size_t jobs = groups.size() * probes;
  std::vector<double> samples(jobs);
  std::vector<std::exception_ptr> failures(std::max<std::size_t>(threads, 1));
  auto run = [&](std::size_t worker, std::size_t stride) {
    try {
      for (std::size_t j = worker; j < jobs; j += stride) {
        const std::size_t g = j / probes;
        samples[j] = hutchinson_sample(loss, params, groups[g].indices, fd_step, probe_seed(seed, g, j % probes));
      }
    } catch (...) {
      failures[worker] = std::current_exception();
    }
  };
  if (threads <= 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(run, t, threads);
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double sum = 0;
    for (std::size_t p = 0; p < probes; ++p) sum += samples[g * probes + p];
    const double mean = sum / static_cast<double>(probes);
    double ss = 0;
    for (std::size_t p = 0; p < probes; ++p) ss += (samples[g * probes + p] - mean) * (samples[g * probes + p] - mean);
    r.groups[g].hessian_trace = mean;
    r.groups[g].hessian_stderr =
        probes > 1 ? std::sqrt(ss / static_cast<double>(probes - 1) / static_cast<double>(probes)) : 0.0;
  }
  r.hessian_uniform_fallback = assign_shares(r.groups, &GroupImportance::hessian_trace, &GroupImportance::hessian_share);
  return r;
}

ImportanceReport merge_importance(const ImportanceReport& taylor, const ImportanceReport& hessian) {
  if (taylor.groups.size() != hessian.groups.size()) throw Error(Errc::kShapeMismatch, "group count differs");
  ImportanceReport r = taylor;
  for (std::size_t g = 0; g < r.groups.size(); ++g) {
    if (r.groups[g].name != hessian.groups[g].name) throw Error(Errc::kShapeMismatch, "group names differ");
    r.groups[g].hessian_trace = hessian.groups[g].hessian_trace;
    r.groups[g].hessian_stderr = hessian.groups[g].hessian_stderr;
    r.groups[g].hessian_share = hessian.groups[g].hessian_share;
  }
  r.hessian_uniform_fallback = hessian.hessian_uniform_fallback;
  return r;
}

std::string importance_csv(const ImportanceReport& r) {
  std::ostringstream os;
  os << "group,params,param_share,taylor_fo,taylor_fo_share,hessian_trace,hessian_stderr,hessian_share\n";
  for (const auto& g : r.groups) {
    os << g.name << ',' << g.params << ',' << fmt(g.param_share) << ',' << fmt(g.taylor_fo) << ','
       << fmt(g.taylor_fo_share) << ',' << fmt(g.hessian_trace) << ',' << fmt(g.hessian_stderr) << ','
       << fmt(g.hessian_share) << '\n';
  }
  return os.str();
}

F32Tensor rollout_matrix(std::span<const F32Tensor> attention) {
  if (attention.empty()) throw Error(Errc::kMissingTrace, "no attention maps recorded");
  const Shape& s0 = attention.front().shape();
  if (s0.rank() != 3 || s0[1] != s0[2]) throw Error(Errc::kShapeMismatch, "attention must be [heads, T, T]");
  const std::size_t t = s0[1];
  std::vector<double> rollout(t * t, 0.0);
  std::vector<double> layer(t * t);
  std::vector<double> next(t * t);
  for (std::size_t l = 0; l < attention.size(); ++l) {
    const F32Tensor& a = attention[l];
    if (a.shape().rank() != 3 || a.shape()[1] != t || a.shape()[2] != t) {
      throw Error(Errc::kShapeMismatch, "attention layer " + std::to_string(l) + " is " + to_string(a.shape()));
    }
    const std::size_t heads = a.shape()[0];
    for (std::size_t i = 0; i < t * t; ++i) {
      double sum = 0;
      for (std::size_t h = 0; h < heads; ++h) sum += a[h * t * t + i];
      layer[i] = 0.5 * sum / static_cast<double>(heads);
    }
    for (std::size_t i = 0; i < t; ++i) {
      layer[i * t + i] += 0.5;
      double row = 0;
      for (std::size_t j = 0; j < t; ++j) row += layer[i * t + j];
      for (std::size_t j = 0; j < t; ++j) layer[i * t + j] /= row;
    }
    if (l == 0) {
      rollout = layer;
      continue;
    }
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t k = 0; k < t; ++k) {
        const double lik = layer[i * t + k];
        for (std::size_t j = 0; j < t; ++j) next[i * t + j] += lik * rollout[k * t + j];
      }
    }
    rollout.swap(next);
  }
  F32Tensor out(Shape{t, t});
  for (std::size_t i = 0; i < t * t; ++i) out[i] = static_cast<float>(rollout[i]);
  return out;
}

F32Tensor attention_rollout(std::span<const F32Tensor> attention) {
  const F32Tensor r = rollout_matrix(attention);
  const std::size_t t = r.shape()[0];
  const auto grid = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(t - 1))));
  if (grid * grid != t - 1) throw Error(Errc::kShapeMismatch, std::to_string(t - 1) + " patches is not a square grid");
  F32Tensor map(Shape{grid, grid});
  for (std::size_t j = 0; j < t - 1; ++j) map[j] = r[j + 1];
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const float mn = *lo;
  const float range = *hi - *lo;
  for (float& v : map.data()) v = range > 0 ? (v - mn) / range : 0.0f;
  return map;
}

F32Tensor attention_rollout(const ForwardTrace& trace) { return attention_rollout(trace.attention); }

Summary summarize(std::vector<double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size()));
  std::sort(values.begin(), values.end());
  s.p5 = percentile(values, 0.05);
  s.p95 = percentile(values, 0.95);
  return s;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error(Errc::kShapeMismatch, "cosine over vectors of different length");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) return na == nb ? 1.0 : 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double pearson_r(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw Error(Errc::kShapeMismatch, "pearson over mismatched vectors");
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0 || vb == 0) return std::equal(a.begin(), a.end(), b.begin()) ? 1.0 : 0.0;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

FidelityReport fidelity_compare(std::span<const ForwardTrace> fp32, std::span<const ForwardTrace> tern,
                                const VitWeights& fp32_w, const VitWeights& tern_w) {
  if (fp32.size() != tern.size()) throw Error(Errc::kShapeMismatch, "trace counts differ");
  if (fp32_w.blocks.size() != tern_w.blocks.size()) throw Error(Errc::kShapeMismatch, "block counts differ");
  FidelityReport r;

  for (const auto& rec : to_model_file(tern_w).tensors) {
    if (!is_ternary(rec.kind)) continue;
    const auto codes = unpack_trits(record_packed_trits(rec));
    TensorZeroFraction z{rec.name, 0, codes.size(), 0};
    z.zeros = static_cast<std::size_t>(std::count(codes.begin(), codes.end(), std::int8_t{0}));
    z.fraction = static_cast<double>(z.zeros) / static_cast<double>(z.total);
    r.zero_count += z.zeros;
    r.ternary_count += z.total;
    r.zero_fraction.push_back(std::move(z));
  }
  r.global_zero_fraction =
      r.ternary_count ? static_cast<double>(r.zero_count) / static_cast<double>(r.ternary_count) : 0.0;

  std::vector<double> patch_cos;
  std::vector<float> pooled_a, pooled_b;
  for (std::size_t i = 0; i < fp32.size(); ++i) {
    if (!fp32[i].patch_embed || !tern[i].patch_embed) {
      throw Error(Errc::kMissingTrace, "trace " + std::to_string(i) + " lacks the patch-embed output");
    }
    const F32Tensor& a = *fp32[i].patch_embed;
    const F32Tensor& b = *tern[i].patch_embed;
    if (a.shape() != b.shape()) throw Error(Errc::kShapeMismatch, "patch-embed shapes differ");
    for (std::size_t t = 0; t < a.shape()[0]; ++t) patch_cos.push_back(cosine_similarity(a.row(t), b.row(t)));
    if (fp32[i].logits.shape() != tern[i].logits.shape()) throw Error(Errc::kShapeMismatch, "logit shapes differ");
    r.logit_r.push_back(pearson_r(fp32[i].logits.data(), tern[i].logits.data()));
    pooled_a.insert(pooled_a.end(), fp32[i].logits.data().begin(), fp32[i].logits.data().end());
    pooled_b.insert(pooled_b.end(), tern[i].logits.data().begin(), tern[i].logits.data().end());
  }
  r.patch_embed_cosine = summarize(patch_cos);
  r.logit_r_summary = summarize(r.logit_r);
  r.pooled_logit_r = pooled_a.empty() ? 0.0 : pearson_r(pooled_a, pooled_b);

  auto affine = [&](const std::string& name, const Norm& a, const Norm& b) {
    r.affine_cosine.push_back({name, cosine_similarity(affine_vector(a, true), affine_vector(b, true)),
                               cosine_similarity(affine_vector(a, false), affine_vector(b, false))});
  };
  for (std::size_t i = 0; i < fp32_w.blocks.size(); ++i) {
    const std::string prefix = "blocks." + std::to_string(i) + ".";
    affine(prefix + "norm1", fp32_w.blocks[i].norm1, tern_w.blocks[i].norm1);
    affine(prefix + "norm2", fp32_w.blocks[i].norm2, tern_w.blocks[i].norm2);
  }
  affine("norm", fp32_w.norm, tern_w.norm);
  std::vector<double> gc, bc;
  for (const auto& a : r.affine_cosine) {
    gc.push_back(a.gamma);
    bc.push_back(a.beta);
  }
  r.gamma_cosine = summarize(gc);
  r.beta_cosine = summarize(bc);
  return r;
}

std::string fidelity_csv(const FidelityReport& r, const std::vector<std::string>& image_names) {
  std::ostringstream os;
  os << "section,name,metric,value\n";
  for (const auto& z : r.zero_fraction) os << "zero_fraction," << z.name << ",fraction," << fmt(z.fraction) << '\n';
  os << "zero_fraction,global,fraction," << fmt(r.global_zero_fraction) << '\n';
  os << "zero_fraction,global,zeros," << r.zero_count << '\n';
  os << "zero_fraction,global,ternary_weights," << r.ternary_count << '\n';
  auto summary = [&](const std::string& section, const std::string& name, const Summary& s) {
    os << section << ',' << name << ",mean," << fmt(s.mean) << '\n';
    os << section << ',' << name << ",std," << fmt(s.std) << '\n';
    os << section << ',' << name << ",p5," << fmt(s.p5) << '\n';
    os << section << ',' << name << ",p95," << fmt(s.p95) << '\n';
  };
  summary("patch_embed_cosine", "tokens", r.patch_embed_cosine);
  for (const auto& a : r.affine_cosine) {
    os << "affine_cosine," << a.name << ",gamma," << fmt(a.gamma) << '\n';
    os << "affine_cosine," << a.name << ",beta," << fmt(a.beta) << '\n';
  }
  summary("affine_cosine", "gamma", r.gamma_cosine);
  summary("affine_cosine", "beta", r.beta_cosine);
  for (std::size_t i = 0; i < r.logit_r.size(); ++i) {
    const std::string name = i < image_names.size() ? image_names[i] : "image_" + std::to_string(i);
    os << "logit_pearson," << name << ",r," << fmt(r.logit_r[i]) << '\n';
  }
  summary("logit_pearson", "per_image", r.logit_r_summary);
  os << "logit_pearson,pooled,r," << fmt(r.pooled_logit_r) << '\n';
  return os.str();
}

}  // namespace ternforge
