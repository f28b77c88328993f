#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "config.hpp"
#include "sequence.hpp"

namespace motlab {

struct CostReport {
    std::string label;
    std::int64_t params_total = 0;
    std::map<std::string, std::int64_t> params_by_group;
    std::int64_t macs_forward_total = 0;
    std::int64_t macs_forward_per_token = 0;
    std::map<std::string, std::int64_t> macs_by_category;
    double ppf = 0;  // params_total / macs_forward_per_token
    std::int64_t mot_added = 0;
    std::int64_t moe_added = 0;
    std::int64_t probe_tokens = 0;
};

/// Closed-form parameter accounting (no tensor allocation). Per layer the
/// dense base is 4D^2 + 3DH + 2D; untying adds (K-1) copies of each untied
/// role; every expert-choice slot swaps its 3DH FFN for E*3DH + D*E.
/// Totals include embeddings, heads, position table and the patch/time/null
/// projectors. Cross-validated elsewhere against init_params enumeration.
CostReport count_params(const ModelConfig& cfg);

/// MACs of one real forward pass (loss path included) over a deterministic
/// probe sequence of length n, counted by the matmul instrumentation.
std::int64_t count_macs(const ModelConfig& cfg, std::int64_t n);

/// The deterministic probe used by count_macs; exposed so parity checks can
/// assert they really ran on identical token layouts.
Batch make_probe_batch(const ModelConfig& cfg, std::int64_t n);

/// count_params + count_macs (with category breakdown) in one report.
CostReport cost_report(const ModelConfig& cfg, std::int64_t n);

/// Side-by-side reports for >= 2 configs on the same probe length; rendered
/// by the callers (the PpF ordering is reported, not asserted).
std::vector<CostReport> ppf_compare(const std::vector<ModelConfig>& cfgs, std::int64_t n);
std::string ppf_table(const std::vector<CostReport>& reports);

}  // namespace motlab
