#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "ternforge/analysis.hpp"
#include "ternforge/config.hpp"
#include "ternforge/format.hpp"
#include "ternforge/image.hpp"
#include "ternforge/model.hpp"
#include "ternforge/profile.hpp"
#include "ternforge/size_report.hpp"
#include "ternforge/synthetic.hpp"
#include "ternforge/toy_models.hpp"

namespace fs = std::filesystem;
using namespace ternforge;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kParse = 2, kIo = 3, kFormat = 4, kMath = 5 };

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::kInvalidArgument:
      return kParse;
    case Errc::kIo:
      return kIo;
    case Errc::kBadMagic:
    case Errc::kBadVersion:
    case Errc::kTruncated:
    case Errc::kDuplicateTensor:
    case Errc::kSizeMismatch:
    case Errc::kCorruptTrit:
    case Errc::kInvalidTrit:
    case Errc::kMissingTensor:
    case Errc::kShapeMismatch:
      return kFormat;
    case Errc::kEmptyTensor:
    case Errc::kNanInput:
    case Errc::kNanDetected:
    case Errc::kAccumOverflowRisk:
    case Errc::kDimNotDivisible:
    case Errc::kMissingTrace:
      return kMath;
  }
  return kOther;
}

std::size_t resolve_threads(std::size_t flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("TERNFORGE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw Error(Errc::kInvalidArgument, std::string("TERNFORGE_THREADS must be a positive integer, got '") + env + "'");
    }
    return static_cast<std::size_t>(v);
  }
  return 1;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::kIo, dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".ppm" || ext == ".rawf")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(Errc::kIo, "no .ppm or .rawf images in " + dir.string());
  return out;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  std::vector<std::exception_ptr> failures(n);
  auto work = [&](std::size_t start) {
    for (std::size_t i = start; i < n; i += threads) {
      try {
        fn(i);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(work, t);
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
}

struct Args {
  std::string config, in, out, plan, model, image, labels, ref, images, toy;
  std::uint64_t seed = 0;
  std::size_t topk = 5;
  std::size_t reps = 10;
  std::size_t probes = 16;
  std::size_t threads = 0;
  double fd_step = 1e-3;
  std::string csv;
};

int cmd_gen_synthetic(const Args& a) {
  const VitConfig config = resolve_config(a.config);
  const ModelFile archive = generate_synthetic_archive(config, a.seed);
  const std::size_t bytes = write_nwa(archive, a.out);
  std::printf("wrote %s: %zu tensors, %zu parameters, %zu bytes\n", a.out.c_str(), archive.tensors.size(),
              parameter_count(config), bytes);
  return kOk;
}

int cmd_quantize(const Args& a) {
  const PrecisionPlan plan = parse_plan(a.plan);
  const ModelFile archive = read_nwa(a.in);
  const VitWeights weights = build_from_archive(archive, plan);
  const std::size_t bytes = save_ftv(weights, a.out);
  std::printf("wrote %s: plan %s, %zu bytes (%.3f MB)\n", a.out.c_str(), std::string(plan_name(plan)).c_str(),
              bytes, static_cast<double>(bytes) / kBytesPerMB);
  return kOk;
}

int cmd_size(const Args& a) {
  const SizeReport report = model_size_report(resolve_config(a.config), parse_plan(a.plan));
  std::cout << format_size_report(report);
  return kOk;
}

int cmd_infer(const Args& a) {
  const VitWeights weights = load_ftv(a.model);
  const F32Tensor img = load_model_input(a.image, weights.config);
  const std::vector<std::string> labels = a.labels.empty() ? std::vector<std::string>{} : read_labels(a.labels);
  const ForwardTrace trace = forward(weights, img);
  std::printf("%-5s %-8s %-14s %s\n", "rank", "class", "logit", "label");
  std::size_t rank = 1;
  for (const auto& p : predict_topk(trace.logits, a.topk, labels)) {
    std::printf("%-5zu %-8zu %-14.6f %s\n", rank++, p.class_id, p.score, p.label.c_str());
  }
  return kOk;
}

int cmd_compare(const Args& a) {
  const std::size_t threads = resolve_threads(a.threads);
  const ModelFile tern_file = read_ftv(a.model);
  const VitWeights tern = from_model_file(tern_file);
  const ModelFile ref = read_nwa(a.ref);
  const VitWeights fp32 = build_from_archive(ref, tern.config, PrecisionPlan::kFp32);
  const std::vector<fs::path> paths = list_images(a.images);
  std::vector<ForwardTrace> fp32_traces(paths.size());
  std::vector<ForwardTrace> tern_traces(paths.size());
  ForwardOptions opts;
  opts.trace.patch_embed = true;
  parallel_for(paths.size(), threads, [&](std::size_t i) {
    const F32Tensor img = load_model_input(paths[i], tern.config);
    fp32_traces[i] = forward(fp32, img, opts);
    tern_traces[i] = forward(tern, img, opts);
  });
  const FidelityReport report = fidelity_compare(fp32_traces, tern_traces, fp32, tern);
  std::vector<std::string> names;
  for (const auto& p : paths) names.push_back(p.filename().string());
  write_text(a.out, fidelity_csv(report, names));
  std::printf("images            %zu\n", paths.size());
  std::printf("zero fraction     %.4f (%zu of %zu ternary weights)\n", report.global_zero_fraction,
              report.zero_count, report.ternary_count);
  std::printf("patch-embed cos   mean %.4f std %.4f p5 %.4f p95 %.4f\n", report.patch_embed_cosine.mean,
              report.patch_embed_cosine.std, report.patch_embed_cosine.p5, report.patch_embed_cosine.p95);
  std::printf("LN gamma cos      mean %.4f\n", report.gamma_cosine.mean);
  std::printf("LN beta cos       mean %.4f\n", report.beta_cosine.mean);
  std::printf("logit pearson r   per-image mean %.4f, pooled %.4f\n", report.logit_r_summary.mean,
              report.pooled_logit_r);
  std::printf("wrote %s\n", a.out.c_str());
  return kOk;
}

int cmd_profile(const Args& a) {
  const ModelFile file = read_ftv(a.model);
  const VitWeights weights = from_model_file(file);
  const F32Tensor img = load_model_input(a.image, weights.config);
  const ProfileReport report = profile_model(weights, file, img, a.reps);
  std::cout << format_profile_table(report);
  const std::string csv = profile_csv(report);
  if (a.csv.empty()) {
    std::cout << "\n" << csv;
  } else {
    write_text(a.csv, csv);
  }
  return kOk;
}

int cmd_rollout(const Args& a) {
  const VitWeights weights = load_ftv(a.model);
  const F32Tensor img = load_model_input(a.image, weights.config);
  ForwardOptions opts;
  opts.trace.attention = true;
  const F32Tensor map = attention_rollout(forward(weights, img, opts));
  write_pgm(a.out, map);
  const auto peak = std::max_element(map.data().begin(), map.data().end()) - map.data().begin();
  const std::size_t grid = map.shape()[0];
  std::printf("wrote %s: %zux%zu rollout map, peak at patch (%zu, %zu)\n", a.out.c_str(), grid, grid,
              static_cast<std::size_t>(peak) / grid, static_cast<std::size_t>(peak) % grid);
  return kOk;
}

int cmd_importance(const Args& a) {
  const std::size_t threads = resolve_threads(a.threads);
  const ToyProblem toy = make_toy_problem(read_text(a.toy), a.seed);
  const ImportanceReport taylor = taylor_fo_importance(toy.loss, toy.params, toy.groups, a.fd_step);
  const ImportanceReport hessian =
      hessian_trace_importance(toy.loss, toy.params, toy.groups, a.probes, a.fd_step, a.seed, threads);
  const ImportanceReport report = merge_importance(taylor, hessian);
  write_text(a.out, importance_csv(report));
  std::printf("%-16s %10s %10s %10s\n", "group", "params", "taylor_fo", "hessian");
  for (const auto& g : report.groups) {
    std::printf("%-16s %9.2f%% %9.2f%% %9.2f%%\n", g.name.c_str(), 100 * g.param_share, 100 * g.taylor_fo_share,
                100 * g.hessian_share);
  }
  if (report.taylor_uniform_fallback) std::fprintf(stderr, "warning: all Taylor-FO scores are zero; shares uniform\n");
  if (report.hessian_uniform_fallback) std::fprintf(stderr, "warning: all Hessian traces are zero; shares uniform\n");
  std::printf("wrote %s\n", a.out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ternforge: fully ternary ViT quantizer, packer and inference engine"};
  app.require_subcommand(1);
  Args a;

  auto* gen = app.add_subcommand("gen-synthetic", "Write an FP32 weight archive with Gaussian weights");
  gen->add_option("--config", a.config, "Preset name or JSON config file")->required();
  gen->add_option("--seed", a.seed, "RNG seed")->required();
  gen->add_option("--out", a.out, "Output .nwa path")->required();

  auto* quant = app.add_subcommand("quantize", "Quantize and pack an archive into an FTV model");
  quant->add_option("--in", a.in, "Input .nwa archive")->required();
  quant->add_option("--plan", a.plan, "Precision plan")
      ->required()
      ->check(CLI::IsMember({"fp32", "partial-w2", "ternary"}));
  quant->add_option("--out", a.out, "Output .ftv path")->required();

  auto* size = app.add_subcommand("size", "Print the storage breakdown of a config under a plan");
  size->add_option("--config", a.config, "Preset name or JSON config file")->required();
  size->add_option("--plan", a.plan, "Precision plan")
      ->required()
      ->check(CLI::IsMember({"fp32", "partial-w2", "ternary"}));

  auto* infer = app.add_subcommand("infer", "Classify one image");
  infer->add_option("--model", a.model, "FTV model")->required();
  infer->add_option("--image", a.image, "P6 PPM or RAWF image")->required();
  infer->add_option("--labels", a.labels, "Class names, one per line");
  infer->add_option("--topk", a.topk, "Number of predictions")->check(CLI::PositiveNumber);

  auto* compare = app.add_subcommand("compare", "Fidelity of a packed model against its FP32 archive");
  compare->add_option("--model", a.model, "FTV model")->required();
  compare->add_option("--ref", a.ref, "FP32 .nwa archive")->required();
  compare->add_option("--images", a.images, "Directory of .ppm/.rawf images")->required();
  compare->add_option("--out", a.out, "Output CSV")->required();
  compare->add_option("--threads", a.threads, "Parallel forwards over images")->check(CLI::PositiveNumber);

  auto* profile = app.add_subcommand("profile", "Per-component latency and memory report");
  profile->add_option("--model", a.model, "FTV model")->required();
  profile->add_option("--image", a.image, "Input image")->required();
  profile->add_option("--reps", a.reps, "Timed repetitions (>= 3)")->check(CLI::Range(3, 1000000));
  profile->add_option("--csv", a.csv, "Write the CSV report here instead of stdout");

  auto* rollout = app.add_subcommand("rollout", "Attention rollout map of the CLS token");
  rollout->add_option("--model", a.model, "FTV model")->required();
  rollout->add_option("--image", a.image, "Input image")->required();
  rollout->add_option("--out", a.out, "Output .pgm")->required();

  auto* importance = app.add_subcommand("importance", "Taylor-FO and Hessian-trace importance on a toy model");
  importance->add_option("--toy", a.toy, "Toy spec JSON")->required();
  importance->add_option("--seed", a.seed, "RNG seed")->required();
  importance->add_option("--probes", a.probes, "Hutchinson probes per group")->check(CLI::PositiveNumber);
  importance->add_option("--out", a.out, "Output CSV")->required();
  importance->add_option("--fd-step", a.fd_step, "Relative finite-difference step")->check(CLI::PositiveNumber);
  importance->add_option("--threads", a.threads, "Parallel probe evaluation")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kParse;
  }

  try {
    if (*gen) return cmd_gen_synthetic(a);
    if (*quant) return cmd_quantize(a);
    if (*size) return cmd_size(a);
    if (*infer) return cmd_infer(a);
    if (*compare) return cmd_compare(a);
    if (*profile) return cmd_profile(a);
    if (*rollout) return cmd_rollout(a);
    if (*importance) return cmd_importance(a);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kOther;
  }
  return kOther;
}
