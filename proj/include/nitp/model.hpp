#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nitp/graph.hpp"
#include "nitp/tensor.hpp"

namespace nitp {

enum class FfnKind { dense, moe };

struct ModelConfig {
    int64_t vocab_size = 256;
    int64_t hidden_dim = 64;
    int64_t num_layers = 2;
    int64_t num_q_heads = 4;
    int64_t num_kv_heads = 2;
    int64_t head_dim = 16;
    FfnKind ffn_kind = FfnKind::dense;
    int64_t dense_ffn_dim = 256;
    int64_t num_experts = 0;
    int64_t experts_per_token = 0;
    int64_t expert_ffn_dim = 0;
    int64_t max_seq_len = 256;
    uint64_t seed = 0;

    void validate() const;  // throws on invariant violations
};

// Parameter with its optimizer/checkpoint identity. `decay` marks matrix
// parameters (weight decay applies to those only).
struct NamedParam {
    std::string name;
    Tensor* tensor;
    bool decay;
};

struct ExpertParams {
    Tensor w_gate, w_up, w_down;
};

struct LayerParams {
    Tensor attn_gain;
    std::vector<Tensor> w_q, w_k, w_v, w_o;
    Tensor ffn_gain;
    // dense
    Tensor w_gate, w_up, w_down;
    // moe
    Tensor router;
    std::vector<ExpertParams> experts;
};

// Per-layer residual-stream states H^(l) for l = 0..L (index 0 = embedding
// output) plus the final-normed hidden states that feed the unembedding.
struct ActivationTrace {
    std::vector<Value> layers;
    Value h_final;
};

struct ForwardOut {
    Value logits;
    ActivationTrace trace;
    double router_entropy = 0.0;  // mean over tokens/layers; 0 for dense models
};

class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    int64_t parameter_count() const;
    std::vector<NamedParam> parameters();

    Tensor embed, pos_embed, final_gain, unembed;  // unembed is [V x d]
    std::vector<LayerParams> layers;

private:
    ModelConfig cfg_;
};

// Model parameters registered as nodes of one graph, reusable across several
// forward passes within that graph (one binding per step).
class BoundModel {
public:
    BoundModel(Graph& g, Model& m);
    ForwardOut forward(std::span<const int32_t> tokens);

    Graph& graph() { return *g_; }
    const Model& model() const { return *m_; }

private:
    struct BoundLayer {
        Value attn_gain, ffn_gain;
        std::vector<Value> w_q, w_k, w_v, w_o;
        Value w_gate, w_up, w_down;
        Value router;
        std::vector<std::array<Value, 3>> experts;  // gate, up, down
    };
    Graph* g_;
    Model* m_;
    Value embed_, pos_, final_gain_, unembed_t_;  // unembedding pre-transposed to [d x V]
    std::vector<BoundLayer> layers_;
};

// Top-k routed mixture of SwiGLU experts. Per token the k largest router
// logits are kept and renormalized with a softmax; every other expert
// contributes exactly zero (weights and gradients). Optionally reports the
// mean routing-weight entropy.
Value moe_ffn(Graph& g, Value x, std::span<const std::array<Value, 3>> experts, Value router, int64_t k,
              double* entropy_out = nullptr);

}  // namespace nitp
