#pragma once

// Exact parameter and multiply-accumulate accounting for any model config.
// Parameter counts come from the same enumeration the model allocates from.
// The headline MAC count follows the module-profiler convention: every
// linear projection costs tokens * in * out and everything else (attention
// score/value products, adjacency products, norms, softmax, activations,
// fusion arithmetic) costs zero. The in-mixer matrix products are tracked
// separately as aux_matmul_macs for anyone who wants the fuller number.

#include <cstdint>
#include <string>
#include <vector>

#include "agf/model_config.hpp"

namespace agf {

struct CostRow {
    std::string module;
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
};

struct CostReport {
    std::uint64_t param_count = 0;
    std::uint64_t total_macs = 0;
    std::uint64_t macs_per_frame = 0;
    std::uint64_t aux_matmul_macs = 0;  // attention QK^T/AV, adjacency and similarity products
    std::vector<CostRow> rows;          // sums to the totals exactly
};

std::uint64_t count_params(const ModelConfig& cfg);
CostReport count_macs(const ModelConfig& cfg);

// "2.2 M" / "48.3 G" style display rounding; comparisons use raw integers.
std::string format_count(std::uint64_t value);

std::string cost_report_to_json(const CostReport& report, const ModelConfig& cfg);
std::string cost_report_table(const CostReport& report, const ModelConfig& cfg);

}  // namespace agf
