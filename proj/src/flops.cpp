#include "nitp/flops.hpp"

#include <stdexcept>

namespace nitp {

void ArchSpec::validate() const {
    if (d < 1 || L < 0 || V < 1) throw std::invalid_argument("arch spec: d, V must be positive and L >= 0");
    if (dense) {
        if (dense_ffn_dim < 1) throw std::invalid_argument("arch spec: dense_ffn_dim must be positive");
    } else {
        if (k < 1 || d_e < 1) throw std::invalid_argument("arch spec: moe needs k and d_e positive");
    }
}

FlopsBreakdown ntp_train_flops(const ArchSpec& spec) {
    spec.validate();
    FlopsBreakdown b;
    // GQA projections hold ~3d^2 parameters -> 18d^2 training FLOPs per layer.
    b.attention_flops = 18.0 * static_cast<double>(spec.d) * static_cast<double>(spec.d);
    if (spec.dense) {
        b.ffn_flops = 18.0 * static_cast<double>(spec.d) * static_cast<double>(spec.dense_ffn_dim);
    } else {
        b.ffn_flops =
            18.0 * static_cast<double>(spec.k) * static_cast<double>(spec.d) * static_cast<double>(spec.d_e);
    }
    // input embedding is a lookup (0 FLOPs); the unembedding projection is not
    b.unembedding_flops = 6.0 * static_cast<double>(spec.V) * static_cast<double>(spec.d);
    b.baseline_total = static_cast<double>(spec.L) * (b.attention_flops + b.ffn_flops) + b.unembedding_flops;
    return b;
}

NitpOverhead nitp_overhead_flops(const ArchSpec& spec) {
    spec.validate();
    NitpOverhead o;
    o.projection = 72.0 * static_cast<double>(spec.d) * static_cast<double>(spec.d);
    o.cosine = 18.0 * static_cast<double>(spec.d);
    return o;
}

double overhead_ratio(const ArchSpec& spec) {
    FlopsBreakdown b = ntp_train_flops(spec);
    if (b.baseline_total <= 0.0) throw std::domain_error("overhead_ratio: zero baseline");
    NitpOverhead o = nitp_overhead_flops(spec);
    return (o.projection + o.cosine) / b.baseline_total;
}

FlopsBreakdown full_breakdown(const ArchSpec& spec) {
    FlopsBreakdown b = ntp_train_flops(spec);
    NitpOverhead o = nitp_overhead_flops(spec);
    b.nitp_projection_flops = o.projection;
    b.nitp_cosine_flops = o.cosine;
    b.overhead_ratio = (o.projection + o.cosine) / b.baseline_total;
    return b;
}

}  // namespace nitp
