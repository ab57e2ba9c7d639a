#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nitp/tensor.hpp"

namespace nitp {

class Graph;

// Lightweight handle to a node inside one Graph.
class Value {
public:
    Value() = default;
    const Tensor& tensor() const;
    const Shape& shape() const;
    double scalar() const;  // requires numel == 1
    int32_t id() const { return id_; }
    Graph* graph() const { return graph_; }
    explicit operator bool() const { return graph_ != nullptr; }

private:
    friend class Graph;
    Value(Graph* g, int32_t id) : graph_(g), id_(id) {}
    Graph* graph_ = nullptr;
    int32_t id_ = -1;
};

// Reverse-mode autodiff tape. Forward values are computed eagerly as nodes
// are appended, so creation order is already a topological order; backward
// walks it once in reverse. One backward per graph.
class Graph {
public:
    Graph();
    ~Graph();
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // ---- leaves ----
    Value constant(Tensor t);
    Value constant(Shape s, std::vector<double> v) { return constant(Tensor(std::move(s), std::move(v))); }
    // Binds an external tensor; backward accumulates its total gradient into
    // t.grad. The tensor stays bound until this graph is destroyed.
    Value param(Tensor& t);

    // ---- elementwise / structural ----
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value x, double c);
    Value add_scalar(Value x, double c);
    Value silu(Value x);
    Value huber(Value x, double beta);  // elementwise smooth-l1 of the entries
    Value reshape(Value x, Shape s);
    Value transpose(Value x);  // 2-D
    Value stop_gradient(Value x);

    // ---- reductions ----
    Value sum_all(Value x);   // -> scalar
    Value mean_all(Value x);  // -> scalar

    // ---- linear algebra ----
    Value matmul(Value a, Value b);  // [m x k] * [k x n]

    // ---- rows / gathers ----
    Value slice_rows(Value x, int64_t start, int64_t count);
    Value gather_rows(Value x, std::span<const int64_t> idx);
    Value embedding(Value table, std::span<const int32_t> ids);
    Value column(Value x, int64_t j);            // [T x E] -> [T]
    Value scale_rows(Value x, Value s);          // row i of x scaled by s[i]

    // ---- normalizations / losses ----
    Value softmax(Value x);                      // over last axis
    Value causal_softmax(Value scores);          // [T x T], row t over columns 0..t
    Value rmsnorm(Value x, Value gain);          // [... x d], gain [d]
    Value cross_entropy(Value logits, std::span<const int32_t> targets, std::span<const uint8_t> mask);
    Value rows_cosine(Value a, Value b);         // [N x d] pairs -> [N]
    Value cosine_similarity(Value a, Value b);   // [d],[d] -> scalar
    Value rows_kl(Value pred, Value target, double tau);  // KL(sm(target/tau) || sm(pred/tau)) per row
    Value topk_renorm_softmax(Value logits, int64_t k);   // [T x E]: softmax over per-row top-k, zeros elsewhere

    // ---- backward ----
    void backward(Value loss);

    size_t size() const;
    const Tensor& node_tensor(int32_t id) const;

private:
    friend class Value;
    struct Node;
    Value emit(Node n);
    Node& node(int32_t id);
    std::vector<double>& grad_buf(int32_t id);
    void check_same_graph(Value v) const;

    std::vector<Node> nodes_;
    std::vector<Tensor*> bound_;
    bool backward_done_ = false;
};

// SwiGLU feed-forward: w_down * (silu(x*w_gate) .* (x*w_up)).
Value swiglu(Graph& g, Value x, Value w_gate, Value w_up, Value w_down);

}  // namespace nitp
