#include "nitp/model.hpp"

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "nitp/rng.hpp"

namespace nitp {

namespace {

constexpr double kInitStd = 0.02;

Tensor normal_init(Shape s, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, kInitStd);
    Tensor t = Tensor::zeros(std::move(s));
    for (double& v : t.values) v = dist(rng);
    t.requires_grad = true;
    return t;
}

Tensor ones_gain(int64_t d) {
    Tensor t = Tensor::full({d}, 1.0);
    t.requires_grad = true;
    return t;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 1 || hidden_dim < 1 || num_layers < 1 || max_seq_len < 1) {
        throw std::invalid_argument("model config: sizes must be positive");
    }
    if (num_q_heads < 1 || num_kv_heads < 1 || num_q_heads % num_kv_heads != 0) {
        throw std::invalid_argument("model config: num_q_heads must be a positive multiple of num_kv_heads");
    }
    if (num_q_heads * head_dim != hidden_dim) {
        throw std::invalid_argument("model config: num_q_heads * head_dim must equal hidden_dim");
    }
    if (ffn_kind == FfnKind::dense) {
        if (dense_ffn_dim < 1) throw std::invalid_argument("model config: dense_ffn_dim must be positive");
    } else {
        if (num_experts < 1 || expert_ffn_dim < 1) {
            throw std::invalid_argument("model config: moe requires num_experts and expert_ffn_dim");
        }
        if (experts_per_token < 1 || experts_per_token > num_experts) {
            throw std::invalid_argument("model config: experts_per_token must be in [1, num_experts]");
        }
    }
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(derive_seed(cfg_.seed, "model-init"));
    int64_t d = cfg_.hidden_dim, hd = cfg_.head_dim;

    embed = normal_init({cfg_.vocab_size, d}, rng);
    pos_embed = normal_init({cfg_.max_seq_len, d}, rng);
    layers.resize(cfg_.num_layers);
    for (auto& l : layers) {
        l.attn_gain = ones_gain(d);
        for (int64_t h = 0; h < cfg_.num_q_heads; ++h) l.w_q.push_back(normal_init({d, hd}, rng));
        for (int64_t h = 0; h < cfg_.num_kv_heads; ++h) l.w_k.push_back(normal_init({d, hd}, rng));
        for (int64_t h = 0; h < cfg_.num_kv_heads; ++h) l.w_v.push_back(normal_init({d, hd}, rng));
        for (int64_t h = 0; h < cfg_.num_q_heads; ++h) l.w_o.push_back(normal_init({hd, d}, rng));
        l.ffn_gain = ones_gain(d);
        if (cfg_.ffn_kind == FfnKind::dense) {
            l.w_gate = normal_init({d, cfg_.dense_ffn_dim}, rng);
            l.w_up = normal_init({d, cfg_.dense_ffn_dim}, rng);
            l.w_down = normal_init({cfg_.dense_ffn_dim, d}, rng);
        } else {
            l.router = normal_init({d, cfg_.num_experts}, rng);
            for (int64_t e = 0; e < cfg_.num_experts; ++e) {
                ExpertParams ep;
                ep.w_gate = normal_init({d, cfg_.expert_ffn_dim}, rng);
                ep.w_up = normal_init({d, cfg_.expert_ffn_dim}, rng);
                ep.w_down = normal_init({cfg_.expert_ffn_dim, d}, rng);
                l.experts.push_back(std::move(ep));
            }
        }
    }
    final_gain = ones_gain(d);
    unembed = normal_init({cfg_.vocab_size, d}, rng);
}

int64_t Model::parameter_count() const {
    int64_t n = 0;
    n += embed.numel() + pos_embed.numel();
    for (const auto& l : layers) {
        n += l.attn_gain.numel() + l.ffn_gain.numel();
        for (const auto& t : l.w_q) n += t.numel();
        for (const auto& t : l.w_k) n += t.numel();
        for (const auto& t : l.w_v) n += t.numel();
        for (const auto& t : l.w_o) n += t.numel();
        if (cfg_.ffn_kind == FfnKind::dense) {
            n += l.w_gate.numel() + l.w_up.numel() + l.w_down.numel();
        } else {
            n += l.router.numel();
            for (const auto& e : l.experts) n += e.w_gate.numel() + e.w_up.numel() + e.w_down.numel();
        }
    }
    n += final_gain.numel() + unembed.numel();
    return n;
}

std::vector<NamedParam> Model::parameters() {
    std::vector<NamedParam> ps;
    ps.push_back({"embed", &embed, true});
    ps.push_back({"pos_embed", &pos_embed, true});
    for (size_t li = 0; li < layers.size(); ++li) {
        auto& l = layers[li];
        std::string p = "layer" + std::to_string(li) + ".";
        ps.push_back({p + "attn_gain", &l.attn_gain, false});
        for (size_t h = 0; h < l.w_q.size(); ++h) ps.push_back({p + "w_q" + std::to_string(h), &l.w_q[h], true});
        for (size_t h = 0; h < l.w_k.size(); ++h) ps.push_back({p + "w_k" + std::to_string(h), &l.w_k[h], true});
        for (size_t h = 0; h < l.w_v.size(); ++h) ps.push_back({p + "w_v" + std::to_string(h), &l.w_v[h], true});
        for (size_t h = 0; h < l.w_o.size(); ++h) ps.push_back({p + "w_o" + std::to_string(h), &l.w_o[h], true});
        ps.push_back({p + "ffn_gain", &l.ffn_gain, false});
        if (cfg_.ffn_kind == FfnKind::dense) {
            ps.push_back({p + "ffn.w_gate", &l.w_gate, true});
            ps.push_back({p + "ffn.w_up", &l.w_up, true});
            ps.push_back({p + "ffn.w_down", &l.w_down, true});
        } else {
            ps.push_back({p + "router", &l.router, true});
            for (size_t e = 0; e < l.experts.size(); ++e) {
                std::string ep = p + "expert" + std::to_string(e) + ".";
                ps.push_back({ep + "w_gate", &l.experts[e].w_gate, true});
                ps.push_back({ep + "w_up", &l.experts[e].w_up, true});
                ps.push_back({ep + "w_down", &l.experts[e].w_down, true});
            }
        }
    }
    ps.push_back({"final_gain", &final_gain, false});
    ps.push_back({"unembed", &unembed, true});
    return ps;
}

Value moe_ffn(Graph& g, Value x, std::span<const std::array<Value, 3>> experts, Value router, int64_t k,
              double* entropy_out) {
    int64_t num_experts = router.shape()[1];
    if (k > num_experts) {
        throw std::invalid_argument("moe_ffn: k=" + std::to_string(k) + " exceeds expert count " +
                                    std::to_string(num_experts));
    }
    Value logits = g.matmul(x, router);
    Value weights = g.topk_renorm_softmax(logits, k);
    if (entropy_out) {
        const Tensor& w = weights.tensor();
        int64_t rows = w.shape[0];
        double ent = 0.0;
        for (int64_t i = 0; i < rows; ++i) {
            for (int64_t e = 0; e < num_experts; ++e) {
                double p = w.values[i * num_experts + e];
                if (p > 0) ent -= p * std::log(p);
            }
        }
        *entropy_out = ent / static_cast<double>(rows);
    }
    Value out;
    for (int64_t e = 0; e < num_experts; ++e) {
        Value expert_out = swiglu(g, x, experts[e][0], experts[e][1], experts[e][2]);
        Value weighted = g.scale_rows(expert_out, g.column(weights, e));
        out = out ? g.add(out, weighted) : weighted;
    }
    return out;
}

BoundModel::BoundModel(Graph& g, Model& m) : g_(&g), m_(&m) {
    embed_ = g.param(m.embed);
    pos_ = g.param(m.pos_embed);
    layers_.resize(m.layers.size());
    for (size_t li = 0; li < m.layers.size(); ++li) {
        auto& l = m.layers[li];
        auto& bl = layers_[li];
        bl.attn_gain = g.param(l.attn_gain);
        for (auto& t : l.w_q) bl.w_q.push_back(g.param(t));
        for (auto& t : l.w_k) bl.w_k.push_back(g.param(t));
        for (auto& t : l.w_v) bl.w_v.push_back(g.param(t));
        for (auto& t : l.w_o) bl.w_o.push_back(g.param(t));
        bl.ffn_gain = g.param(l.ffn_gain);
        if (m.config().ffn_kind == FfnKind::dense) {
            bl.w_gate = g.param(l.w_gate);
            bl.w_up = g.param(l.w_up);
            bl.w_down = g.param(l.w_down);
        } else {
            bl.router = g.param(l.router);
            for (auto& e : l.experts) {
                bl.experts.push_back({g.param(e.w_gate), g.param(e.w_up), g.param(e.w_down)});
            }
        }
    }
    final_gain_ = g.param(m.final_gain);
    unembed_t_ = g.transpose(g.param(m.unembed));
}

ForwardOut BoundModel::forward(std::span<const int32_t> tokens) {
    const ModelConfig& cfg = m_->config();
    int64_t T = static_cast<int64_t>(tokens.size());
    if (T < 1) throw std::invalid_argument("forward: empty token sequence");
    if (T > cfg.max_seq_len) {
        throw std::invalid_argument("forward: sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                                    std::to_string(cfg.max_seq_len));
    }
    Graph& g = *g_;
    double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
    int64_t group = cfg.num_q_heads / cfg.num_kv_heads;

    ForwardOut out;
    Value x = g.add(g.embedding(embed_, tokens), g.slice_rows(pos_, 0, T));
    out.trace.layers.push_back(x);

    double entropy_sum = 0.0;
    for (size_t li = 0; li < layers_.size(); ++li) {
        auto& bl = layers_[li];
        Value xa = g.rmsnorm(x, bl.attn_gain);
        std::vector<Value> keys(cfg.num_kv_heads), vals(cfg.num_kv_heads);
        for (int64_t kv = 0; kv < cfg.num_kv_heads; ++kv) {
            keys[kv] = g.transpose(g.matmul(xa, bl.w_k[kv]));
            vals[kv] = g.matmul(xa, bl.w_v[kv]);
        }
        Value attn_sum;
        for (int64_t h = 0; h < cfg.num_q_heads; ++h) {
            int64_t kv = h / group;
            Value q = g.matmul(xa, bl.w_q[h]);
            Value probs = g.causal_softmax(g.scale(g.matmul(q, keys[kv]), inv_sqrt_hd));
            Value head = g.matmul(g.matmul(probs, vals[kv]), bl.w_o[h]);
            attn_sum = attn_sum ? g.add(attn_sum, head) : head;
        }
        x = g.add(x, attn_sum);
        Value xf = g.rmsnorm(x, bl.ffn_gain);
        Value f;
        if (m_->config().ffn_kind == FfnKind::dense) {
            f = swiglu(g, xf, bl.w_gate, bl.w_up, bl.w_down);
        } else {
            double ent = 0.0;
            f = moe_ffn(g, xf, bl.experts, bl.router, cfg.experts_per_token, &ent);
            entropy_sum += ent;
        }
        x = g.add(x, f);
        out.trace.layers.push_back(x);
    }
    out.trace.h_final = g.rmsnorm(x, final_gain_);
    out.logits = g.matmul(out.trace.h_final, unembed_t_);
    if (cfg.ffn_kind == FfnKind::moe) {
        out.router_entropy = entropy_sum / static_cast<double>(layers_.size());
    }
    return out;
}

}  // namespace nitp
