#pragma once

#include <cstdint>

namespace nitp {

// Architecture fields needed for closed-form per-token training FLOPs.
struct ArchSpec {
    int64_t d = 0;  // hidden size
    int64_t L = 0;  // layers
    int64_t V = 0;  // vocabulary
    bool dense = false;
    int64_t k = 0;              // activated experts per token (moe)
    int64_t d_e = 0;            // expert FFN width (moe)
    int64_t dense_ffn_dim = 0;  // FFN width (dense)

    void validate() const;
};

// Per-token training FLOPs (6x the parameters touched in forward). attention
// and ffn are per layer; baseline_total = L*(attention+ffn) + unembedding.
struct FlopsBreakdown {
    double attention_flops = 0.0;
    double ffn_flops = 0.0;
    double unembedding_flops = 0.0;
    double baseline_total = 0.0;
    double nitp_projection_flops = 0.0;
    double nitp_cosine_flops = 0.0;
    double overhead_ratio = 0.0;
};

FlopsBreakdown ntp_train_flops(const ArchSpec& spec);

struct NitpOverhead {
    double projection = 0.0;  // 72 d^2
    double cosine = 0.0;      // 18 d
};

NitpOverhead nitp_overhead_flops(const ArchSpec& spec);

double overhead_ratio(const ArchSpec& spec);

// Baseline plus overhead plus ratio in one record.
FlopsBreakdown full_breakdown(const ArchSpec& spec);

}  // namespace nitp
