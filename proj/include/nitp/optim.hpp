#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nitp/model.hpp"

namespace nitp {

struct TrainConfig {
    double peak_lr = 1e-3;
    int64_t warmup_steps = 100;
    double decay_ratio = 0.2;
    int64_t total_steps = 1000;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.95;
    double adam_eps = 1e-8;
    double weight_decay = 0.1;
    double grad_clip = 1.0;
    int64_t batch_size = 2;
    int64_t seq_len = 64;
    uint64_t seed = 0;
    int64_t snapshot_every = 50;
    int64_t log_every = 1;
    int64_t checkpoint_every = 0;  // 0 = only at the end

    void validate() const;
};

// Warmup-stable-decay schedule: linear 0 -> peak over warmup_steps, flat until
// (1 - decay_ratio) * total_steps, then linear to 0 at total_steps.
double wsd_lr(int64_t step, const TrainConfig& cfg);

// Decoupled weight decay applies to matrix parameters only (NamedParam.decay).
class AdamW {
public:
    explicit AdamW(const TrainConfig& cfg);

    void step(std::span<NamedParam> params, double lr);

    struct Slot {
        std::vector<double> m, v;
    };
    std::map<std::string, Slot>& slots() { return slots_; }
    int64_t steps_taken() const { return t_; }
    void set_steps_taken(int64_t t) { t_ = t; }

private:
    TrainConfig cfg_;
    std::map<std::string, Slot> slots_;
    int64_t t_ = 0;
};

// Global l2 clipping across all parameter gradients; returns the pre-clip
// norm. Aborts with the parameter name on NaN gradients.
double clip_grad_norm(std::span<NamedParam> params, double max_norm);

void zero_grads(std::span<NamedParam> params);

}  // namespace nitp
