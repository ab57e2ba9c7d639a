#include "nitp/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "nitp/rng.hpp"

namespace nitp {

int64_t ObjectiveConfig::resolved_target_layer(int64_t num_layers) const {
    if (target_layer != 0) return target_layer;
    int64_t k = static_cast<int64_t>(std::llround(0.2 * static_cast<double>(num_layers)));
    return std::max<int64_t>(1, k);
}

void ObjectiveConfig::validate(const ModelConfig& model) const {
    if (lambda < 0) throw std::invalid_argument("objective config: lambda must be >= 0");
    int64_t k = resolved_target_layer(model.num_layers);
    if (k < 1 || k > model.num_layers) {
        throw std::invalid_argument("objective config: target_layer " + std::to_string(k) + " outside [1," +
                                    std::to_string(model.num_layers) + "]");
    }
    if (projector_hidden_mult < 1) throw std::invalid_argument("objective config: projector_hidden_mult >= 1");
    if (nitp_start_step < 0) throw std::invalid_argument("objective config: nitp_start_step must be >= 0");
    if (kl_temperature <= 0) throw std::invalid_argument("objective config: kl_temperature must be > 0");
    if (smooth_l1_beta <= 0) throw std::invalid_argument("objective config: smooth_l1_beta must be > 0");
}

Value ntp_loss(Graph& g, Value logits, std::span<const int32_t> tokens) {
    int64_t T = static_cast<int64_t>(tokens.size());
    if (T < 2) throw std::invalid_argument("ntp_loss: need at least 2 tokens, got " + std::to_string(T));
    if (logits.shape().size() != 2 || logits.shape()[0] != T) {
        throw std::invalid_argument("ntp_loss: logits rows must match token count");
    }
    std::vector<int32_t> targets(T, 0);
    std::vector<uint8_t> mask(T, 0);
    for (int64_t t = 0; t + 1 < T; ++t) {
        targets[t] = tokens[t + 1];
        mask[t] = 1;
    }
    return g.cross_entropy(logits, targets, mask);
}

Value extract_implicit_tokens(Graph& g, const ActivationTrace& trace, const ObjectiveConfig& cfg,
                              int64_t num_layers) {
    int64_t k = cfg.resolved_target_layer(num_layers);
    if (k < 1 || k >= static_cast<int64_t>(trace.layers.size())) {
        throw std::out_of_range("extract_implicit_tokens: target_layer " + std::to_string(k) + " outside [1," +
                                std::to_string(trace.layers.size() - 1) + "]");
    }
    Value layer = trace.layers[k];
    int64_t T = layer.shape()[0];
    Value rows;
    if (cfg.temporal_shift == TemporalShift::next_token) {
        if (T < 2) throw std::invalid_argument("extract_implicit_tokens: next_token shift needs T >= 2");
        rows = g.slice_rows(layer, 1, T - 1);
    } else {
        rows = g.slice_rows(layer, 0, T);
    }
    return cfg.stop_gradient_targets ? g.stop_gradient(rows) : rows;
}

Projector::Projector(int64_t hidden_dim, int64_t hidden_mult, uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "projector-init"));
    std::normal_distribution<double> dist(0.0, 0.02);
    int64_t m = hidden_dim * hidden_mult;
    auto init = [&](Shape s) {
        Tensor t = Tensor::zeros(std::move(s));
        for (double& v : t.values) v = dist(rng);
        t.requires_grad = true;
        return t;
    };
    w_gate = init({hidden_dim, m});
    w_up = init({hidden_dim, m});
    w_down = init({m, hidden_dim});
}

int64_t Projector::parameter_count() const { return w_gate.numel() + w_up.numel() + w_down.numel(); }

std::vector<NamedParam> Projector::parameters() {
    return {{"proj.w_gate", &w_gate, true}, {"proj.w_up", &w_up, true}, {"proj.w_down", &w_down, true}};
}

BoundProjector::BoundProjector(Graph& g, Projector& p)
    : w_gate(g.param(p.w_gate)), w_up(g.param(p.w_up)), w_down(g.param(p.w_down)) {}

Value BoundProjector::apply(Value h) const { return swiglu(*h.graph(), h, w_gate, w_up, w_down); }

NitpLoss nitp_loss(Graph& g, Value pred, Value targets, const ObjectiveConfig& cfg) {
    if (pred.shape() != targets.shape() || pred.shape().size() != 2) {
        throw std::invalid_argument("nitp_loss: pred " + shape_str(pred.shape()) + " vs targets " +
                                    shape_str(targets.shape()));
    }
    NitpLoss out;
    switch (cfg.loss_family) {
        case LossFamily::cosine: {
            Value mean_cos = g.mean_all(g.rows_cosine(pred, targets));
            out.loss = g.add_scalar(g.scale(mean_cos, -1.0), 1.0);
            out.alignment = mean_cos;
            return out;
        }
        case LossFamily::mse: {
            Value diff = g.sub(pred, targets);
            out.loss = g.mean_all(g.mul(diff, diff));
            break;
        }
        case LossFamily::smooth_l1: {
            out.loss = g.mean_all(g.huber(g.sub(pred, targets), cfg.smooth_l1_beta));
            break;
        }
        case LossFamily::kl: {
            out.loss = g.mean_all(g.rows_kl(pred, targets, cfg.kl_temperature));
            break;
        }
        case LossFamily::generic_cosine_reg:
            throw std::logic_error("nitp_loss: generic_cosine_reg is assembled by the trainer, not here");
    }
    out.alignment = g.mean_all(g.rows_cosine(g.stop_gradient(pred), g.stop_gradient(targets)));
    return out;
}

Value total_loss(Graph& g, Value ntp, Value nitp, double lambda, int64_t step, int64_t nitp_start_step) {
    if (lambda < 0) throw std::invalid_argument("total_loss: lambda must be >= 0");
    if (lambda == 0.0 || step < nitp_start_step || !nitp) return ntp;
    return g.add(ntp, g.scale(nitp, lambda));
}

std::vector<std::pair<int64_t, int64_t>> sample_distinct_pairs(int64_t n, int64_t m, std::mt19937_64& rng) {
    if (n < 2) throw std::invalid_argument("sample_distinct_pairs: need n >= 2");
    if (m < 1) throw std::invalid_argument("sample_distinct_pairs: need m >= 1");
    int64_t total = n * (n - 1) / 2;
    std::vector<std::pair<int64_t, int64_t>> pairs;
    if (m >= total || m * 2 >= total) {
        pairs.reserve(total);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
        if (m >= total) return pairs;
        // dense request: partial Fisher-Yates, keep the first m
        for (int64_t i = 0; i < m; ++i) {
            std::uniform_int_distribution<int64_t> pick(i, total - 1);
            std::swap(pairs[i], pairs[pick(rng)]);
        }
        pairs.resize(m);
        return pairs;
    }
    std::unordered_set<int64_t> seen;
    std::uniform_int_distribution<int64_t> pick(0, n - 1);
    pairs.reserve(m);
    while (static_cast<int64_t>(pairs.size()) < m) {
        int64_t i = pick(rng), j = pick(rng);
        if (i == j) continue;
        if (i > j) std::swap(i, j);
        if (seen.insert(i * n + j).second) pairs.emplace_back(i, j);
    }
    return pairs;
}

Value generic_cosine_regularizer(Graph& g, Value states, int64_t num_pairs, std::mt19937_64& rng) {
    const Shape& s = states.shape();
    if (s.size() != 2 || s[0] < 2) {
        throw std::invalid_argument("generic_cosine_regularizer: need at least 2 rows, got " + shape_str(s));
    }
    auto pairs = sample_distinct_pairs(s[0], num_pairs, rng);
    std::vector<int64_t> lhs, rhs;
    lhs.reserve(pairs.size());
    rhs.reserve(pairs.size());
    for (auto [i, j] : pairs) {
        lhs.push_back(i);
        rhs.push_back(j);
    }
    return g.mean_all(g.rows_cosine(g.gather_rows(states, lhs), g.gather_rows(states, rhs)));
}

}  // namespace nitp
