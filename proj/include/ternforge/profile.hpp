#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "ternforge/format.hpp"
#include "ternforge/model.hpp"

namespace ternforge {

inline constexpr std::size_t kProfileRowCount = 9;

// Row labels of the on-device inference profile table, in order.
const std::array<std::string, kProfileRowCount>& profile_row_names();

struct ProfileRow {
  std::string name;
  double per_block_ms = 0;  // zero for rows that are not per block
  double total_ms = 0;
  double percent = 0;       // of end-to-end latency
};

struct MemoryReport {
  std::size_t packed_weight_bytes = 0;   // sum of FTV record payloads
  std::size_t ternary_payload_bytes = 0; // 2-bit payloads only
  std::size_t file_bytes = 0;
  std::size_t peak_scratch_bytes = 0;
  std::size_t input_bytes = 0;
};

struct ProfileReport {
  std::size_t depth = 0;
  std::size_t reps = 0;
  std::vector<ProfileRow> rows;  // one per profile_row_names() entry
  double end_to_end_ms = 0;
  double throughput_fps = 0;
  MemoryReport memory;
};

// Largest set of live intermediates during one forward of this config.
std::size_t peak_scratch_bytes(const VitConfig& config);

MemoryReport memory_report(const ModelFile& file);

// Runs reps (>= 3) timed forwards and reports the rep with median end-to-end
// latency. "Other" absorbs everything the five block components do not cover,
// so the block rows plus "Other" add up to the end-to-end time.
ProfileReport profile_model(const VitWeights& weights, const ModelFile& file, const F32Tensor& img,
                            std::size_t reps);

std::string format_profile_table(const ProfileReport& report);
std::string profile_csv(const ProfileReport& report);

}  // namespace ternforge
