#include "ternforge/profile.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace ternforge {

namespace {

constexpr std::size_t kRowLayerNorm = 0;
constexpr std::size_t kRowTotalBlocks = 5;
constexpr std::size_t kRowOther = 6;
constexpr std::size_t kRowEndToEnd = 7;
constexpr std::size_t kRowThroughput = 8;

std::string fixed(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

}  // namespace

const std::array<std::string, kProfileRowCount>& profile_row_names() {
  static const std::array<std::string, kProfileRowCount> names{
      "LayerNorm (pre + post)",
      "QKV projection (fused)",
      "Attention (Q@K^T+softmax+V)",
      "Output projection",
      "FFN (fc1 + fc2)",
      "Total (N blocks)",
      "Patch embed + head + other",
      "End-to-end latency",
      "Throughput",
  };
  return names;
}

std::size_t peak_scratch_bytes(const VitConfig& c) {
  const std::size_t t = c.tokens();
  const std::size_t d = c.dim;
  const std::size_t h = c.hidden_dim();
  const std::size_t p = c.num_patches();
  const std::size_t img = std::size_t{c.in_channels} * c.img_size * c.img_size;
  // Each phase: residual stream x (4td) plus the buffers alive at its peak.
  const std::size_t patch = 4 * t * d + img + 4 * c.in_channels + 4 * p * d * c.in_channels + 4 * p * d;
  const std::size_t qkv = 4 * t * d + 4 * t * d + (t * d + 4 * t) + 4 * t * 3 * d + 4 * t * 3 * d;
  const std::size_t attn = 4 * t * d + 4 * t * 3 * d + 4 * t * 3 * d + 4 * t * d + 4 * t;
  const std::size_t fc1 = 4 * t * d + 4 * t * d + (t * d + 4 * t) + 4 * t * h + 4 * t * h;
  const std::size_t fc2 = 4 * t * d + 4 * t * h + (t * h + 4 * t) + 4 * t * d + 4 * t * d;
  return std::max({patch, qkv, attn, fc1, fc2});
}

MemoryReport memory_report(const ModelFile& file) {
  MemoryReport m;
  for (const auto& r : file.tensors) {
    m.packed_weight_bytes += r.payload.size();
    if (is_ternary(r.kind)) m.ternary_payload_bytes += r.payload.size();
  }
  m.file_bytes = encode_model(file, Container::kFtv).size();
  m.peak_scratch_bytes = peak_scratch_bytes(file.config);
  m.input_bytes = sizeof(float) * file.config.in_channels * file.config.img_size * file.config.img_size;
  return m;
}

ProfileReport profile_model(const VitWeights& weights, const ModelFile& file, const F32Tensor& img,
                            std::size_t reps) {
  if (reps < 3) throw Error(Errc::kInvalidArgument, "profile needs at least 3 reps");
  using Clock = std::chrono::steady_clock;
  using Times = std::array<std::chrono::nanoseconds, kComponentCount>;
  struct Run {
    Times components{};
    std::chrono::nanoseconds total{};
  };
  std::vector<Run> runs(reps);
  forward(weights, img);  // warm-up
  for (auto& run : runs) {
    ForwardOptions opts;
    opts.component_time = &run.components;
    const auto start = Clock::now();
    forward(weights, img, opts);
    run.total = Clock::now() - start;
  }
  std::sort(runs.begin(), runs.end(), [](const Run& a, const Run& b) { return a.total < b.total; });
  const Run& median = runs[runs.size() / 2];

  auto ms = [](std::chrono::nanoseconds ns) { return static_cast<double>(ns.count()) / 1e6; };
  const double e2e = ms(median.total);
  const std::size_t depth = weights.config.depth;
  const auto& names = profile_row_names();

  ProfileReport report;
  report.depth = depth;
  report.reps = reps;
  report.end_to_end_ms = e2e;
  report.throughput_fps = e2e > 0 ? 1000.0 / e2e : 0.0;
  double blocks = 0;
  for (std::size_t i = 0; i < kRowTotalBlocks; ++i) {
    const double total = ms(median.components[kRowLayerNorm + i]);
    blocks += total;
    report.rows.push_back({names[i], total / static_cast<double>(depth), total, 100.0 * total / e2e});
  }
  report.rows.push_back({names[kRowTotalBlocks], blocks / static_cast<double>(depth), blocks, 100.0 * blocks / e2e});
  const double other = e2e - blocks;
  report.rows.push_back({names[kRowOther], 0, other, 100.0 * other / e2e});
  report.rows.push_back({names[kRowEndToEnd], 0, e2e, 100.0});
  report.rows.push_back({names[kRowThroughput], 0, 0, 0});
  report.memory = memory_report(file);
  return report;
}

std::string format_profile_table(const ProfileReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-30s %12s %12s %8s\n", "Component", "Per block ms", "Total ms", "%");
  os << line;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const ProfileRow& row = r.rows[i];
    std::string name = row.name;
    if (i == kRowTotalBlocks) name = "Total (" + std::to_string(r.depth) + " blocks)";
    if (i == kRowThroughput) {
      std::snprintf(line, sizeof(line), "%-30s %12s %12s %8s\n", name.c_str(), "",
                    (fixed(r.throughput_fps, 2) + " fps").c_str(), "");
    } else {
      const std::string per_block = i <= kRowTotalBlocks ? fixed(row.per_block_ms, 3) : "";
      std::snprintf(line, sizeof(line), "%-30s %12s %12s %8s\n", name.c_str(), per_block.c_str(),
                    fixed(row.total_ms, 3).c_str(), fixed(row.percent, 1).c_str());
    }
    os << line;
  }
  const MemoryReport& m = r.memory;
  os << "\nMemory\n";
  auto mem = [&](const char* label, std::size_t bytes) {
    std::snprintf(line, sizeof(line), "%-30s %12zu B %10.3f MB\n", label, bytes, static_cast<double>(bytes) / 1e6);
    os << line;
  };
  mem("Packed weights (payload)", m.packed_weight_bytes);
  mem("  of which 2-bit ternary", m.ternary_payload_bytes);
  mem("Model file", m.file_bytes);
  mem("Peak activation scratch", m.peak_scratch_bytes);
  mem("Input image buffer", m.input_bytes);
  return os.str();
}

std::string profile_csv(const ProfileReport& r) {
  std::ostringstream os;
  os << "component,per_block_ms,total_ms,percent\n";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const ProfileRow& row = r.rows[i];
    if (i == kRowThroughput) continue;
    os << '"' << row.name << "\"," << fixed(row.per_block_ms, 6) << ',' << fixed(row.total_ms, 6) << ','
       << fixed(row.percent, 4) << "\n";
  }
  os << "throughput_fps,," << fixed(r.throughput_fps, 4) << ",\n";
  os << "packed_weight_bytes,," << r.memory.packed_weight_bytes << ",\n";
  os << "ternary_payload_bytes,," << r.memory.ternary_payload_bytes << ",\n";
  os << "file_bytes,," << r.memory.file_bytes << ",\n";
  os << "peak_scratch_bytes,," << r.memory.peak_scratch_bytes << ",\n";
  os << "input_bytes,," << r.memory.input_bytes << ",\n";
  return os.str();
}

}  // namespace ternforge
