#include "nitp/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace nitp {

void TrainConfig::validate() const {
    if (total_steps < 1) throw std::invalid_argument("train config: total_steps must be >= 1");
    if (warmup_steps < 0 || warmup_steps >= total_steps) {
        throw std::invalid_argument("train config: warmup_steps must be < total_steps");
    }
    if (decay_ratio <= 0.0 || decay_ratio >= 1.0) {
        throw std::invalid_argument("train config: decay_ratio must be in (0, 1)");
    }
    if (peak_lr <= 0.0) throw std::invalid_argument("train config: peak_lr must be > 0");
    if (batch_size < 1 || seq_len < 2) throw std::invalid_argument("train config: batch_size >= 1, seq_len >= 2");
    if (grad_clip <= 0.0) throw std::invalid_argument("train config: grad_clip must be > 0");
    if (log_every < 1 || snapshot_every < 1) {
        throw std::invalid_argument("train config: log_every and snapshot_every must be >= 1");
    }
    if (checkpoint_every < 0) throw std::invalid_argument("train config: checkpoint_every must be >= 0");
}

double wsd_lr(int64_t step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.total_steps) {
        throw std::out_of_range("wsd_lr: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(cfg.total_steps) + "]");
    }
    double total = static_cast<double>(cfg.total_steps);
    double decay_start = (1.0 - cfg.decay_ratio) * total;
    double s = static_cast<double>(step);
    if (cfg.warmup_steps > 0 && s <= static_cast<double>(cfg.warmup_steps)) {
        return cfg.peak_lr * s / static_cast<double>(cfg.warmup_steps);
    }
    if (s <= decay_start) return cfg.peak_lr;
    return cfg.peak_lr * (total - s) / (total - decay_start);
}

AdamW::AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

void AdamW::step(std::span<NamedParam> params, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
    for (NamedParam& p : params) {
        Tensor& t = *p.tensor;
        Slot& slot = slots_[p.name];
        if (slot.m.empty()) {
            slot.m.assign(t.values.size(), 0.0);
            slot.v.assign(t.values.size(), 0.0);
        }
        if (slot.m.size() != t.values.size()) {
            throw std::invalid_argument("adamw: state shape mismatch for " + p.name);
        }
        if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
        double wd = p.decay ? cfg_.weight_decay : 0.0;
        for (size_t i = 0; i < t.values.size(); ++i) {
            double g = t.grad[i];
            if (wd != 0.0) t.values[i] -= lr * wd * t.values[i];
            slot.m[i] = cfg_.adam_beta1 * slot.m[i] + (1.0 - cfg_.adam_beta1) * g;
            slot.v[i] = cfg_.adam_beta2 * slot.v[i] + (1.0 - cfg_.adam_beta2) * g * g;
            double mhat = slot.m[i] / bc1;
            double vhat = slot.v[i] / bc2;
            t.values[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
        }
    }
}

double clip_grad_norm(std::span<NamedParam> params, double max_norm) {
    double sq = 0.0;
    for (const NamedParam& p : params) {
        for (double g : p.tensor->grad) {
            if (std::isnan(g)) {
                throw std::runtime_error("clip_grad_norm: NaN gradient in parameter '" + p.name + "'");
            }
            sq += g * g;
        }
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm) {
        double scale = max_norm / norm;
        for (const NamedParam& p : params) {
            for (double& g : p.tensor->grad) g *= scale;
        }
    }
    return norm;
}

void zero_grads(std::span<NamedParam> params) {
    for (const NamedParam& p : params) p.tensor->grad.assign(p.tensor->values.size(), 0.0);
}

}  // namespace nitp
