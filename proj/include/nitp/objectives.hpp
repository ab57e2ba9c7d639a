#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "nitp/graph.hpp"
#include "nitp/model.hpp"

namespace nitp {

enum class TemporalShift { next_token, current_step };
enum class LossFamily { cosine, mse, smooth_l1, kl, generic_cosine_reg };

// Every design switch of the auxiliary latent-prediction objective. lambda = 0
// reduces training exactly to the plain next-token baseline.
struct ObjectiveConfig {
    double lambda = 1.0;
    int64_t target_layer = 0;  // 0 = auto: round(0.2 * L), clamped to >= 1
    TemporalShift temporal_shift = TemporalShift::next_token;
    LossFamily loss_family = LossFamily::cosine;
    bool use_projector = true;
    int64_t projector_hidden_mult = 4;
    bool stop_gradient_targets = true;
    int64_t nitp_start_step = 0;
    double kl_temperature = 1.0;
    double smooth_l1_beta = 1.0;

    int64_t resolved_target_layer(int64_t num_layers) const;
    void validate(const ModelConfig& model) const;
};

// Cross-entropy of logits at positions 0..T-2 against tokens 1..T-1.
Value ntp_loss(Graph& g, Value logits, std::span<const int32_t> tokens);

// Shallow-layer rows used as latent prediction targets. next_token pairs
// target row t+1 with prediction position t and returns [T-1 x d];
// current_step pairs row t with position t and returns [T x d]. Wrapped in
// stop_gradient unless the config disables it.
Value extract_implicit_tokens(Graph& g, const ActivationTrace& trace, const ObjectiveConfig& cfg,
                              int64_t num_layers);

// Trainable SwiGLU map d -> mult*d -> d applied to hidden states before the
// latent loss; dropped entirely at inference.
struct Projector {
    Tensor w_gate, w_up, w_down;
    Projector(int64_t hidden_dim, int64_t hidden_mult, uint64_t seed);
    int64_t parameter_count() const;
    std::vector<NamedParam> parameters();
};

struct BoundProjector {
    Value w_gate, w_up, w_down;
    BoundProjector(Graph& g, Projector& p);
    Value apply(Value h) const;
};

struct NitpLoss {
    Value loss;
    Value alignment;  // mean row cosine between pred and targets (detached for non-cosine families)
};

NitpLoss nitp_loss(Graph& g, Value pred, Value targets, const ObjectiveConfig& cfg);

// total = ntp + lambda * nitp once step >= start_step; before that (or at
// lambda = 0) the returned node is the ntp node itself.
Value total_loss(Graph& g, Value ntp, Value nitp, double lambda, int64_t step, int64_t nitp_start_step);

// Mean cosine similarity over sampled distinct-position row pairs; positive
// values penalize aligned hidden states. Uses all pairs when num_pairs covers
// them, otherwise samples without replacement.
Value generic_cosine_regularizer(Graph& g, Value states, int64_t num_pairs, std::mt19937_64& rng);

// Unordered distinct pairs (i < j) from [0, n). All pairs when m >= n(n-1)/2.
std::vector<std::pair<int64_t, int64_t>> sample_distinct_pairs(int64_t n, int64_t m, std::mt19937_64& rng);

}  // namespace nitp
