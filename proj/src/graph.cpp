#include "nitp/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace nitp {

namespace {

enum class Op : uint8_t {
    constant,
    param,
    add,
    sub,
    mul,
    scale,
    add_scalar,
    silu,
    huber,
    reshape,
    transpose,
    stop_gradient,
    sum_all,
    mean_all,
    matmul,
    slice_rows,
    gather_rows,
    embedding,
    column,
    scale_rows,
    softmax,
    causal_softmax,
    rmsnorm,
    cross_entropy,
    rows_cosine,
    rows_kl,
    topk_renorm_softmax,
};

constexpr double kRmsEps = 1e-6;

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

struct Graph::Node {
    Op op{};
    bool needs_grad = false;
    std::vector<int32_t> in;
    Tensor out;
    Tensor* bound = nullptr;       // param leaves only
    double c0 = 0.0, c1 = 0.0;     // op scalars (scale factor, beta, tau, column, start)
    std::vector<int64_t> ints;     // ids / row indices / per-row top-k selections
    std::vector<uint8_t> flags;    // cross-entropy mask
    std::vector<double> cache;     // per-row quantities kept for backward
};

const Tensor& Value::tensor() const {
    if (!graph_) throw std::logic_error("value handle is empty");
    return graph_->node_tensor(id_);
}

const Shape& Value::shape() const { return tensor().shape; }

double Value::scalar() const {
    const Tensor& t = tensor();
    if (t.numel() != 1) throw std::logic_error("scalar() on tensor of shape " + shape_str(t.shape));
    return t.values[0];
}

Graph::Graph() = default;

Graph::~Graph() {
    for (Tensor* t : bound_) t->node_id = -1;
}

size_t Graph::size() const { return nodes_.size(); }

Graph::Node& Graph::node(int32_t id) { return nodes_[static_cast<size_t>(id)]; }

const Tensor& Graph::node_tensor(int32_t id) const { return nodes_[static_cast<size_t>(id)].out; }

void Graph::check_same_graph(Value v) const {
    if (v.graph() != this) throw std::logic_error("value belongs to a different (or dead) graph");
}

Value Graph::emit(Node n) {
    int32_t id = static_cast<int32_t>(nodes_.size());
    nodes_.push_back(std::move(n));
    return Value(this, id);
}

std::vector<double>& Graph::grad_buf(int32_t id) {
    Node& n = node(id);
    if (n.out.grad.empty()) n.out.grad.assign(n.out.values.size(), 0.0);
    return n.out.grad;
}

// ---------------------------------------------------------------------------
// leaves

Value Graph::constant(Tensor t) {
    Node n;
    n.op = Op::constant;
    n.needs_grad = false;
    t.grad.clear();
    n.out = std::move(t);
    return emit(n);
}

Value Graph::param(Tensor& t) {
    if (t.node_id != -1) {
        throw std::logic_error("tensor already participates in a live autodiff graph (node " +
                               std::to_string(t.node_id) + ")");
    }
    Node n;
    n.op = Op::param;
    n.needs_grad = true;
    n.out = Tensor(t.shape, t.values);
    n.bound = &t;
    Value v = emit(std::move(n));
    t.node_id = v.id();
    bound_.push_back(&t);
    return v;
}

// ---------------------------------------------------------------------------
// elementwise

Value Graph::add(Value a, Value b) {
    check_same_graph(a);
    check_same_graph(b);
    const Tensor& ta = a.tensor();
    const Tensor& tb = b.tensor();
    if (ta.shape != tb.shape) {
        throw std::invalid_argument("add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    }
    Node n;
    n.op = Op::add;
    n.in = {a.id(), b.id()};
    n.needs_grad = node(a.id()).needs_grad || node(b.id()).needs_grad;
    n.out = Tensor(ta.shape, ta.values);
    for (size_t i = 0; i < n.out.values.size(); ++i) n.out.values[i] += tb.values[i];
    return emit(std::move(n));
}

Value Graph::sub(Value a, Value b) {
    check_same_graph(a);
    check_same_graph(b);
    const Tensor& ta = a.tensor();
    const Tensor& tb = b.tensor();
    if (ta.shape != tb.shape) {
        throw std::invalid_argument("sub: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    }
    Node n;
    n.op = Op::sub;
    n.in = {a.id(), b.id()};
    n.needs_grad = node(a.id()).needs_grad || node(b.id()).needs_grad;
    n.out = Tensor(ta.shape, ta.values);
    for (size_t i = 0; i < n.out.values.size(); ++i) n.out.values[i] -= tb.values[i];
    return emit(std::move(n));
}

Value Graph::mul(Value a, Value b) {
    check_same_graph(a);
    check_same_graph(b);
    const Tensor& ta = a.tensor();
    const Tensor& tb = b.tensor();
    if (ta.shape != tb.shape) {
        throw std::invalid_argument("mul: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    }
    Node n;
    n.op = Op::mul;
    n.in = {a.id(), b.id()};
    n.needs_grad = node(a.id()).needs_grad || node(b.id()).needs_grad;
    n.out = Tensor(ta.shape, ta.values);
    for (size_t i = 0; i < n.out.values.size(); ++i) n.out.values[i] *= tb.values[i];
    return emit(std::move(n));
}

Value Graph::scale(Value x, double c) {
    check_same_graph(x);
    Node n;
    n.op = Op::scale;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    n.c0 = c;
    n.out = x.tensor();
    n.out.grad.clear();
    for (double& v : n.out.values) v *= c;
    return emit(std::move(n));
}

Value Graph::add_scalar(Value x, double c) {
    check_same_graph(x);
    Node n;
    n.op = Op::add_scalar;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    n.c0 = c;
    n.out = x.tensor();
    n.out.grad.clear();
    for (double& v : n.out.values) v += c;
    return emit(std::move(n));
}

Value Graph::silu(Value x) {
    check_same_graph(x);
    Node n;
    n.op = Op::silu;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    n.out = x.tensor();
    n.out.grad.clear();
    for (double& v : n.out.values) v = v * sigmoid(v);
    return emit(std::move(n));
}

Value Graph::huber(Value x, double beta) {
    check_same_graph(x);
    if (beta <= 0) throw std::invalid_argument("huber: beta must be positive");
    Node n;
    n.op = Op::huber;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    n.c0 = beta;
    n.out = x.tensor();
    n.out.grad.clear();
    for (double& v : n.out.values) {
        double a = std::abs(v);
        v = a <= beta ? 0.5 * v * v / beta : a - 0.5 * beta;
    }
    return emit(std::move(n));
}

Value Graph::reshape(Value x, Shape s) {
    check_same_graph(x);
    const Tensor& t = x.tensor();
    if (shape_numel(s) != t.numel()) {
        throw std::invalid_argument("reshape: " + shape_str(t.shape) + " has " + std::to_string(t.numel()) +
                                    " elements, target " + shape_str(s));
    }
    Node n;
    n.op = Op::reshape;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    n.out = t;
    n.out.grad.clear();
    n.out.shape = std::move(s);
    return emit(std::move(n));
}

Value Graph::transpose(Value x) {
    check_same_graph(x);
    const Tensor& t = x.tensor();
    if (t.shape.size() != 2) throw std::invalid_argument("transpose: expected 2-D, got " + shape_str(t.shape));
    int64_t m = t.shape[0], k = t.shape[1];
    Node n;
    n.op = Op::transpose;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    n.out = Tensor::zeros({k, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < k; ++j) n.out.values[j * m + i] = t.values[i * k + j];
    return emit(std::move(n));
}

Value Graph::stop_gradient(Value x) {
    check_same_graph(x);
    Node n;
    n.op = Op::stop_gradient;
    n.in = {x.id()};
    n.needs_grad = false;  // blocks every upstream path
    n.out = x.tensor();
    n.out.grad.clear();
    return emit(std::move(n));
}

// ---------------------------------------------------------------------------
// reductions

Value Graph::sum_all(Value x) {
    check_same_graph(x);
    const Tensor& t = x.tensor();
    Node n;
    n.op = Op::sum_all;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    double s = 0.0;
    for (double v : t.values) s += v;
    n.out = Tensor::scalar(s);
    return emit(std::move(n));
}

Value Graph::mean_all(Value x) {
    check_same_graph(x);
    const Tensor& t = x.tensor();
    Node n;
    n.op = Op::mean_all;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    double s = 0.0;
    for (double v : t.values) s += v;
    n.out = Tensor::scalar(s / static_cast<double>(t.numel()));
    return emit(std::move(n));
}

// ---------------------------------------------------------------------------
// matmul

Value Graph::matmul(Value a, Value b) {
    check_same_graph(a);
    check_same_graph(b);
    const Tensor& ta = a.tensor();
    const Tensor& tb = b.tensor();
    if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.shape[1] != tb.shape[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(ta.shape) + " and " +
                                    shape_str(tb.shape));
    }
    int64_t m = ta.shape[0], k = ta.shape[1], nn = tb.shape[1];
    Node n;
    n.op = Op::matmul;
    n.in = {a.id(), b.id()};
    n.needs_grad = node(a.id()).needs_grad || node(b.id()).needs_grad;
    n.out = Tensor::zeros({m, nn});
    const double* A = ta.values.data();
    const double* B = tb.values.data();
    double* C = n.out.values.data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            double av = A[i * k + p];
            const double* brow = B + p * nn;
            double* crow = C + i * nn;
            for (int64_t j = 0; j < nn; ++j) crow[j] += av * brow[j];
        }
    }
    return emit(std::move(n));
}

// ---------------------------------------------------------------------------
// rows / gathers

Value Graph::slice_rows(Value x, int64_t start, int64_t count) {
    check_same_graph(x);
    const Tensor& t = x.tensor();
    if (t.shape.size() != 2) throw std::invalid_argument("slice_rows: expected 2-D, got " + shape_str(t.shape));
    int64_t rows = t.shape[0], cols = t.shape[1];
    if (start < 0 || count <= 0 || start + count > rows) {
        throw std::out_of_range("slice_rows: range [" + std::to_string(start) + "," +
                                std::to_string(start + count) + ") outside " + shape_str(t.shape));
    }
    Node n;
    n.op = Op::slice_rows;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    n.c0 = static_cast<double>(start);
    n.out = Tensor::zeros({count, cols});
    std::copy(t.values.begin() + start * cols, t.values.begin() + (start + count) * cols, n.out.values.begin());
    return emit(std::move(n));
}

Value Graph::gather_rows(Value x, std::span<const int64_t> idx) {
    check_same_graph(x);
    const Tensor& t = x.tensor();
    if (t.shape.size() != 2) throw std::invalid_argument("gather_rows: expected 2-D, got " + shape_str(t.shape));
    int64_t rows = t.shape[0], cols = t.shape[1];
    Node n;
    n.op = Op::gather_rows;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    n.ints.assign(idx.begin(), idx.end());
    n.out = Tensor::zeros({static_cast<int64_t>(idx.size()), cols});
    for (size_t i = 0; i < idx.size(); ++i) {
        int64_t r = idx[i];
        if (r < 0 || r >= rows) throw std::out_of_range("gather_rows: index " + std::to_string(r));
        std::copy(t.values.begin() + r * cols, t.values.begin() + (r + 1) * cols,
                  n.out.values.begin() + static_cast<int64_t>(i) * cols);
    }
    return emit(std::move(n));
}

Value Graph::embedding(Value table, std::span<const int32_t> ids) {
    check_same_graph(table);
    const Tensor& t = table.tensor();
    if (t.shape.size() != 2) throw std::invalid_argument("embedding: table must be 2-D");
    int64_t vocab = t.shape[0], d = t.shape[1];
    Node n;
    n.op = Op::embedding;
    n.in = {table.id()};
    n.needs_grad = node(table.id()).needs_grad;
    n.ints.reserve(ids.size());
    n.out = Tensor::zeros({static_cast<int64_t>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        int64_t id = ids[i];
        if (id < 0 || id >= vocab) {
            throw std::out_of_range("embedding: token id " + std::to_string(id) + " outside vocab " +
                                    std::to_string(vocab));
        }
        n.ints.push_back(id);
        std::copy(t.values.begin() + id * d, t.values.begin() + (id + 1) * d,
                  n.out.values.begin() + static_cast<int64_t>(i) * d);
    }
    return emit(std::move(n));
}

Value Graph::column(Value x, int64_t j) {
    check_same_graph(x);
    const Tensor& t = x.tensor();
    if (t.shape.size() != 2) throw std::invalid_argument("column: expected 2-D, got " + shape_str(t.shape));
    int64_t rows = t.shape[0], cols = t.shape[1];
    if (j < 0 || j >= cols) throw std::out_of_range("column: index " + std::to_string(j));
    Node n;
    n.op = Op::column;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    n.c0 = static_cast<double>(j);
    n.out = Tensor::zeros({rows});
    for (int64_t i = 0; i < rows; ++i) n.out.values[i] = t.values[i * cols + j];
    return emit(std::move(n));
}

Value Graph::scale_rows(Value x, Value s) {
    check_same_graph(x);
    check_same_graph(s);
    const Tensor& tx = x.tensor();
    const Tensor& ts = s.tensor();
    if (tx.shape.size() != 2 || ts.shape.size() != 1 || ts.shape[0] != tx.shape[0]) {
        throw std::invalid_argument("scale_rows: shapes " + shape_str(tx.shape) + " and " + shape_str(ts.shape));
    }
    int64_t rows = tx.shape[0], cols = tx.shape[1];
    Node n;
    n.op = Op::scale_rows;
    n.in = {x.id(), s.id()};
    n.needs_grad = node(x.id()).needs_grad || node(s.id()).needs_grad;
    n.out = Tensor(tx.shape, tx.values);
    for (int64_t i = 0; i < rows; ++i) {
        double w = ts.values[i];
        for (int64_t j = 0; j < cols; ++j) n.out.values[i * cols + j] *= w;
    }
    return emit(std::move(n));
}

// ---------------------------------------------------------------------------
// normalizations / losses

Value Graph::softmax(Value x) {
    check_same_graph(x);
    const Tensor& t = x.tensor();
    if (t.shape.empty()) throw std::invalid_argument("softmax: scalar input");
    int64_t cols = t.last_dim();
    int64_t rows = t.lead_rows();
    Node n;
    n.op = Op::softmax;
    n.in = {x.id()};
    n.needs_grad = node(x.id()).needs_grad;
    n.out = Tensor(t.shape, t.values);
    for (int64_t i = 0; i < rows; ++i) {
        double* row = n.out.values.data() + i * cols;
        double mx = row[0];
        for (int64_t j = 0; j < cols; ++j) {
            if (std::isnan(row[j])) throw std::domain_error("softmax: NaN input");
            mx = std::max(mx, row[j]);
        }
        double sum = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int64_t j = 0; j < cols; ++j) row[j] /= sum;
    }
    return emit(std::move(n));
}

Value Graph::causal_softmax(Value scores) {
    check_same_graph(scores);
    const Tensor& t = scores.tensor();
    if (t.shape.size() != 2 || t.shape[0] != t.shape[1]) {
        throw std::invalid_argument("causal_softmax: expected square matrix, got " + shape_str(t.shape));
    }
    int64_t T = t.shape[0];
    Node n;
    n.op = Op::causal_softmax;
    n.in = {scores.id()};
    n.needs_grad = node(scores.id()).needs_grad;
    n.out = Tensor::zeros(t.shape);
    for (int64_t i = 0; i < T; ++i) {
        const double* src = t.values.data() + i * T;
        double* row = n.out.values.data() + i * T;
        double mx = src[0];
        for (int64_t j = 0; j <= i; ++j) {
            if (std::isnan(src[j])) throw std::domain_error("causal_softmax: NaN input");
            mx = std::max(mx, src[j]);
        }
        double sum = 0.0;
        for (int64_t j = 0; j <= i; ++j) {
            row[j] = std::exp(src[j] - mx);
            sum += row[j];
        }
        for (int64_t j = 0; j <= i; ++j) row[j] /= sum;
    }
    return emit(std::move(n));
}

Value Graph::rmsnorm(Value x, Value gain) {
    check_same_graph(x);
    check_same_graph(gain);
    const Tensor& t = x.tensor();
    const Tensor& tg = gain.tensor();
    int64_t d = t.last_dim();
    if (tg.shape.size() != 1 || tg.shape[0] != d) {
        throw std::invalid_argument("rmsnorm: gain " + shape_str(tg.shape) + " does not match feature dim " +
                                    std::to_string(d));
    }
    int64_t rows = t.lead_rows();
    Node n;
    n.op = Op::rmsnorm;
    n.in = {x.id(), gain.id()};
    n.needs_grad = node(x.id()).needs_grad || node(gain.id()).needs_grad;
    n.out = Tensor(t.shape, t.values);
    n.cache.resize(rows);  // 1/rms per row
    for (int64_t i = 0; i < rows; ++i) {
        double* row = n.out.values.data() + i * d;
        double ms = 0.0;
        for (int64_t j = 0; j < d; ++j) ms += row[j] * row[j];
        double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + kRmsEps);
        n.cache[i] = inv;
        for (int64_t j = 0; j < d; ++j) row[j] *= tg.values[j] * inv;
    }
    return emit(std::move(n));
}

Value Graph::cross_entropy(Value logits, std::span<const int32_t> targets, std::span<const uint8_t> mask) {
    check_same_graph(logits);
    const Tensor& t = logits.tensor();
    if (t.shape.size() != 2) throw std::invalid_argument("cross_entropy: logits must be [T x V]");
    int64_t T = t.shape[0], V = t.shape[1];
    if (static_cast<int64_t>(targets.size()) != T || static_cast<int64_t>(mask.size()) != T) {
        throw std::invalid_argument("cross_entropy: targets/mask length must equal rows");
    }
    Node n;
    n.op = Op::cross_entropy;
    n.in = {logits.id()};
    n.needs_grad = node(logits.id()).needs_grad;
    n.ints.assign(targets.begin(), targets.end());
    n.flags.assign(mask.begin(), mask.end());
    n.cache.resize(T);  // per-row log-sum-exp
    double loss = 0.0;
    int64_t used = 0;
    for (int64_t i = 0; i < T; ++i) {
        if (!mask[i]) continue;
        int64_t y = targets[i];
        if (y < 0 || y >= V) {
            throw std::out_of_range("cross_entropy: target id " + std::to_string(y) + " outside vocab " +
                                    std::to_string(V));
        }
        const double* row = t.values.data() + i * V;
        double mx = row[0];
        for (int64_t j = 0; j < V; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < V; ++j) sum += std::exp(row[j] - mx);
        double lse = mx + std::log(sum);
        n.cache[i] = lse;
        loss += lse - row[y];
        ++used;
    }
    if (used == 0) throw std::invalid_argument("cross_entropy: every position is masked out");
    n.c0 = static_cast<double>(used);
    n.out = Tensor::scalar(loss / static_cast<double>(used));
    return emit(std::move(n));
}

Value Graph::rows_cosine(Value a, Value b) {
    check_same_graph(a);
    check_same_graph(b);
    const Tensor& ta = a.tensor();
    const Tensor& tb = b.tensor();
    if (ta.shape.size() != 2 || ta.shape != tb.shape) {
        throw std::invalid_argument("rows_cosine: shapes " + shape_str(ta.shape) + " and " + shape_str(tb.shape));
    }
    int64_t rows = ta.shape[0], d = ta.shape[1];
    Node n;
    n.op = Op::rows_cosine;
    n.in = {a.id(), b.id()};
    n.needs_grad = node(a.id()).needs_grad || node(b.id()).needs_grad;
    n.out = Tensor::zeros({rows});
    n.cache.resize(3 * rows);  // |a|, |b|, cos per row
    for (int64_t i = 0; i < rows; ++i) {
        const double* ra = ta.values.data() + i * d;
        const double* rb = tb.values.data() + i * d;
        double na = 0.0, nb = 0.0, dot = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            na += ra[j] * ra[j];
            nb += rb[j] * rb[j];
            dot += ra[j] * rb[j];
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        if (na == 0.0 || nb == 0.0) {
            throw std::domain_error("rows_cosine: zero-norm vector at row " + std::to_string(i));
        }
        double s = dot / (na * nb);
        n.cache[3 * i] = na;
        n.cache[3 * i + 1] = nb;
        n.cache[3 * i + 2] = s;
        n.out.values[i] = s;
    }
    return emit(std::move(n));
}

Value Graph::cosine_similarity(Value a, Value b) {
    const Tensor& ta = a.tensor();
    const Tensor& tb = b.tensor();
    if (ta.shape.size() != 1 || ta.shape != tb.shape) {
        throw std::invalid_argument("cosine_similarity: expected two vectors of equal length, got " +
                                    shape_str(ta.shape) + " and " + shape_str(tb.shape));
    }
    int64_t d = ta.shape[0];
    Value r = rows_cosine(reshape(a, {1, d}), reshape(b, {1, d}));
    return reshape(r, {});
}

Value Graph::rows_kl(Value pred, Value target, double tau) {
    check_same_graph(pred);
    check_same_graph(target);
    if (tau <= 0) throw std::invalid_argument("rows_kl: temperature must be positive");
    const Tensor& tp = pred.tensor();
    const Tensor& tt = target.tensor();
    if (tp.shape.size() != 2 || tp.shape != tt.shape) {
        throw std::invalid_argument("rows_kl: shapes " + shape_str(tp.shape) + " and " + shape_str(tt.shape));
    }
    int64_t rows = tp.shape[0], d = tp.shape[1];
    Node n;
    n.op = Op::rows_kl;
    n.in = {pred.id(), target.id()};
    n.needs_grad = node(pred.id()).needs_grad || node(target.id()).needs_grad;
    n.c0 = tau;
    n.out = Tensor::zeros({rows});
    n.cache.resize(2 * rows * d);  // q rows then p rows
    double* q = n.cache.data();
    double* p = n.cache.data() + rows * d;
    auto fill_softmax = [&](const double* src, double* dst) {
        double mx = src[0] / tau;
        for (int64_t j = 0; j < d; ++j) mx = std::max(mx, src[j] / tau);
        double sum = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            dst[j] = std::exp(src[j] / tau - mx);
            sum += dst[j];
        }
        for (int64_t j = 0; j < d; ++j) dst[j] /= sum;
    };
    for (int64_t i = 0; i < rows; ++i) {
        fill_softmax(tp.values.data() + i * d, q + i * d);
        fill_softmax(tt.values.data() + i * d, p + i * d);
        double kl = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            double pj = p[i * d + j];
            if (pj > 0) kl += pj * (std::log(pj) - std::log(q[i * d + j]));
        }
        n.out.values[i] = kl;
    }
    return emit(std::move(n));
}

Value Graph::topk_renorm_softmax(Value logits, int64_t k) {
    check_same_graph(logits);
    const Tensor& t = logits.tensor();
    if (t.shape.size() != 2) throw std::invalid_argument("topk_renorm_softmax: expected [T x E]");
    int64_t rows = t.shape[0], e = t.shape[1];
    if (k < 1 || k > e) {
        throw std::invalid_argument("topk_renorm_softmax: k=" + std::to_string(k) + " outside [1," +
                                    std::to_string(e) + "]");
    }
    Node n;
    n.op = Op::topk_renorm_softmax;
    n.in = {logits.id()};
    n.needs_grad = node(logits.id()).needs_grad;
    n.ints.resize(rows * k);
    n.out = Tensor::zeros(t.shape);
    std::vector<int64_t> order(e);
    for (int64_t i = 0; i < rows; ++i) {
        const double* row = t.values.data() + i * e;
        std::iota(order.begin(), order.end(), 0);
        // ties broken toward the lower expert index to keep routing deterministic
        std::stable_sort(order.begin(), order.end(),
                         [&](int64_t x, int64_t y) { return row[x] > row[y]; });
        double mx = row[order[0]];
        double sum = 0.0;
        for (int64_t j = 0; j < k; ++j) sum += std::exp(row[order[j]] - mx);
        for (int64_t j = 0; j < k; ++j) {
            int64_t sel = order[j];
            n.ints[i * k + j] = sel;
            n.out.values[i * e + sel] = std::exp(row[sel] - mx) / sum;
        }
    }
    n.c0 = static_cast<double>(k);
    return emit(std::move(n));
}

// ---------------------------------------------------------------------------
// backward

void Graph::backward(Value loss) {
    check_same_graph(loss);
    if (backward_done_) throw std::logic_error("backward() already ran on this graph; build a fresh graph");
    if (nodes_.empty()) throw std::logic_error("backward() on empty graph");
    const Tensor& lt = loss.tensor();
    if (lt.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(lt.shape));
    }
    backward_done_ = true;
    grad_buf(loss.id())[0] = 1.0;

    for (int32_t id = static_cast<int32_t>(nodes_.size()) - 1; id >= 0; --id) {
        Node& n = node(id);
        if (!n.needs_grad || n.out.grad.empty()) continue;
        const std::vector<double>& g = n.out.grad;
        switch (n.op) {
            case Op::constant:
            case Op::stop_gradient:
                break;
            case Op::param: {
                Tensor& t = *n.bound;
                if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
                for (size_t i = 0; i < g.size(); ++i) t.grad[i] += g[i];
                break;
            }
            case Op::add: {
                for (int idx = 0; idx < 2; ++idx) {
                    if (!node(n.in[idx]).needs_grad) continue;
                    std::vector<double>& gi = grad_buf(n.in[idx]);
                    for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                }
                break;
            }
            case Op::sub: {
                if (node(n.in[0]).needs_grad) {
                    std::vector<double>& ga = grad_buf(n.in[0]);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (node(n.in[1]).needs_grad) {
                    std::vector<double>& gb = grad_buf(n.in[1]);
                    for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                }
                break;
            }
            case Op::mul: {
                const Tensor& a = node(n.in[0]).out;
                const Tensor& b = node(n.in[1]).out;
                if (node(n.in[0]).needs_grad) {
                    std::vector<double>& ga = grad_buf(n.in[0]);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.values[i];
                }
                if (node(n.in[1]).needs_grad) {
                    std::vector<double>& gb = grad_buf(n.in[1]);
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.values[i];
                }
                break;
            }
            case Op::scale: {
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.c0;
                break;
            }
            case Op::add_scalar:
            case Op::reshape: {
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                break;
            }
            case Op::silu: {
                const Tensor& x = node(n.in[0]).out;
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) {
                    double s = sigmoid(x.values[i]);
                    gx[i] += g[i] * s * (1.0 + x.values[i] * (1.0 - s));
                }
                break;
            }
            case Op::huber: {
                const Tensor& x = node(n.in[0]).out;
                std::vector<double>& gx = grad_buf(n.in[0]);
                double beta = n.c0;
                for (size_t i = 0; i < g.size(); ++i) {
                    double v = x.values[i];
                    double dv = std::abs(v) <= beta ? v / beta : (v > 0 ? 1.0 : -1.0);
                    gx[i] += g[i] * dv;
                }
                break;
            }
            case Op::transpose: {
                const Tensor& x = node(n.in[0]).out;
                int64_t m = x.shape[0], k = x.shape[1];
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < k; ++j) gx[i * k + j] += g[j * m + i];
                break;
            }
            case Op::sum_all: {
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (double& v : gx) v += g[0];
                break;
            }
            case Op::mean_all: {
                std::vector<double>& gx = grad_buf(n.in[0]);
                double c = g[0] / static_cast<double>(gx.size());
                for (double& v : gx) v += c;
                break;
            }
            case Op::matmul: {
                const Tensor& a = node(n.in[0]).out;
                const Tensor& b = node(n.in[1]).out;
                int64_t m = a.shape[0], k = a.shape[1], nn = b.shape[1];
                if (node(n.in[0]).needs_grad) {
                    std::vector<double>& ga = grad_buf(n.in[0]);
                    for (int64_t i = 0; i < m; ++i) {
                        const double* grow = g.data() + i * nn;
                        for (int64_t p = 0; p < k; ++p) {
                            const double* brow = b.values.data() + p * nn;
                            double acc = 0.0;
                            for (int64_t j = 0; j < nn; ++j) acc += grow[j] * brow[j];
                            ga[i * k + p] += acc;
                        }
                    }
                }
                if (node(n.in[1]).needs_grad) {
                    std::vector<double>& gb = grad_buf(n.in[1]);
                    for (int64_t p = 0; p < k; ++p) {
                        for (int64_t i = 0; i < m; ++i) {
                            double av = a.values[i * k + p];
                            const double* grow = g.data() + i * nn;
                            double* gbrow = gb.data() + p * nn;
                            for (int64_t j = 0; j < nn; ++j) gbrow[j] += av * grow[j];
                        }
                    }
                }
                break;
            }
            case Op::slice_rows: {
                int64_t start = static_cast<int64_t>(n.c0);
                int64_t cols = n.out.shape[1];
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) gx[start * cols + static_cast<int64_t>(i)] += g[i];
                break;
            }
            case Op::gather_rows: {
                int64_t cols = n.out.shape[1];
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (size_t i = 0; i < n.ints.size(); ++i) {
                    int64_t r = n.ints[i];
                    for (int64_t j = 0; j < cols; ++j) gx[r * cols + j] += g[i * cols + j];
                }
                break;
            }
            case Op::embedding: {
                int64_t d = n.out.shape[1];
                std::vector<double>& gt = grad_buf(n.in[0]);
                for (size_t i = 0; i < n.ints.size(); ++i) {
                    int64_t id2 = n.ints[i];
                    for (int64_t j = 0; j < d; ++j) gt[id2 * d + j] += g[i * d + j];
                }
                break;
            }
            case Op::column: {
                const Tensor& x = node(n.in[0]).out;
                int64_t cols = x.shape[1];
                int64_t j = static_cast<int64_t>(n.c0);
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (size_t i = 0; i < g.size(); ++i) gx[static_cast<int64_t>(i) * cols + j] += g[i];
                break;
            }
            case Op::scale_rows: {
                const Tensor& x = node(n.in[0]).out;
                const Tensor& s = node(n.in[1]).out;
                int64_t rows = x.shape[0], cols = x.shape[1];
                if (node(n.in[0]).needs_grad) {
                    std::vector<double>& gx = grad_buf(n.in[0]);
                    for (int64_t i = 0; i < rows; ++i) {
                        double w = s.values[i];
                        for (int64_t j = 0; j < cols; ++j) gx[i * cols + j] += g[i * cols + j] * w;
                    }
                }
                if (node(n.in[1]).needs_grad) {
                    std::vector<double>& gs = grad_buf(n.in[1]);
                    for (int64_t i = 0; i < rows; ++i) {
                        double acc = 0.0;
                        for (int64_t j = 0; j < cols; ++j) acc += g[i * cols + j] * x.values[i * cols + j];
                        gs[i] += acc;
                    }
                }
                break;
            }
            case Op::softmax: {
                int64_t cols = n.out.last_dim();
                int64_t rows = n.out.lead_rows();
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (int64_t i = 0; i < rows; ++i) {
                    const double* y = n.out.values.data() + i * cols;
                    const double* gr = g.data() + i * cols;
                    double dot = 0.0;
                    for (int64_t j = 0; j < cols; ++j) dot += gr[j] * y[j];
                    for (int64_t j = 0; j < cols; ++j) gx[i * cols + j] += y[j] * (gr[j] - dot);
                }
                break;
            }
            case Op::causal_softmax: {
                int64_t T = n.out.shape[0];
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (int64_t i = 0; i < T; ++i) {
                    const double* y = n.out.values.data() + i * T;
                    const double* gr = g.data() + i * T;
                    double dot = 0.0;
                    for (int64_t j = 0; j <= i; ++j) dot += gr[j] * y[j];
                    for (int64_t j = 0; j <= i; ++j) gx[i * T + j] += y[j] * (gr[j] - dot);
                }
                break;
            }
            case Op::rmsnorm: {
                const Tensor& x = node(n.in[0]).out;
                const Tensor& gain = node(n.in[1]).out;
                int64_t d = x.last_dim();
                int64_t rows = x.lead_rows();
                bool wx = node(n.in[0]).needs_grad;
                bool wg = node(n.in[1]).needs_grad;
                for (int64_t i = 0; i < rows; ++i) {
                    const double* xr = x.values.data() + i * d;
                    const double* gr = g.data() + i * d;
                    double inv = n.cache[i];
                    if (wx) {
                        std::vector<double>& gx = grad_buf(n.in[0]);
                        double dot = 0.0;
                        for (int64_t j = 0; j < d; ++j) dot += gr[j] * gain.values[j] * xr[j];
                        double c = dot * inv * inv * inv / static_cast<double>(d);
                        for (int64_t j = 0; j < d; ++j) {
                            gx[i * d + j] += gr[j] * gain.values[j] * inv - xr[j] * c;
                        }
                    }
                    if (wg) {
                        std::vector<double>& gg = grad_buf(n.in[1]);
                        for (int64_t j = 0; j < d; ++j) gg[j] += gr[j] * xr[j] * inv;
                    }
                }
                break;
            }
            case Op::cross_entropy: {
                const Tensor& logits = node(n.in[0]).out;
                int64_t T = logits.shape[0], V = logits.shape[1];
                double c = g[0] / n.c0;
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (int64_t i = 0; i < T; ++i) {
                    if (!n.flags[i]) continue;
                    const double* row = logits.values.data() + i * V;
                    double lse = n.cache[i];
                    for (int64_t j = 0; j < V; ++j) gx[i * V + j] += c * std::exp(row[j] - lse);
                    gx[i * V + n.ints[i]] -= c;
                }
                break;
            }
            case Op::rows_cosine: {
                const Tensor& a = node(n.in[0]).out;
                const Tensor& b = node(n.in[1]).out;
                int64_t rows = a.shape[0], d = a.shape[1];
                bool wa = node(n.in[0]).needs_grad;
                bool wb = node(n.in[1]).needs_grad;
                for (int64_t i = 0; i < rows; ++i) {
                    double na = n.cache[3 * i], nb = n.cache[3 * i + 1], s = n.cache[3 * i + 2];
                    const double* ra = a.values.data() + i * d;
                    const double* rb = b.values.data() + i * d;
                    double gi = g[i];
                    if (gi == 0.0) continue;
                    if (wa) {
                        std::vector<double>& ga = grad_buf(n.in[0]);
                        for (int64_t j = 0; j < d; ++j) {
                            ga[i * d + j] += gi * (rb[j] / (na * nb) - s * ra[j] / (na * na));
                        }
                    }
                    if (wb) {
                        std::vector<double>& gb = grad_buf(n.in[1]);
                        for (int64_t j = 0; j < d; ++j) {
                            gb[i * d + j] += gi * (ra[j] / (na * nb) - s * rb[j] / (nb * nb));
                        }
                    }
                }
                break;
            }
            case Op::rows_kl: {
                const Tensor& a = node(n.in[0]).out;
                int64_t rows = a.shape[0], d = a.shape[1];
                double tau = n.c0;
                const double* q = n.cache.data();
                const double* p = n.cache.data() + rows * d;
                bool wp = node(n.in[0]).needs_grad;
                bool wt = node(n.in[1]).needs_grad;
                for (int64_t i = 0; i < rows; ++i) {
                    double gi = g[i];
                    if (gi == 0.0) continue;
                    double kl = n.out.values[i];
                    for (int64_t j = 0; j < d; ++j) {
                        double pj = p[i * d + j], qj = q[i * d + j];
                        if (wp) grad_buf(n.in[0])[i * d + j] += gi * (qj - pj) / tau;
                        if (wt && pj > 0) {
                            grad_buf(n.in[1])[i * d + j] += gi * pj * (std::log(pj) - std::log(qj) - kl) / tau;
                        }
                    }
                }
                break;
            }
            case Op::topk_renorm_softmax: {
                int64_t e = n.out.shape[1];
                int64_t rows = n.out.shape[0];
                int64_t k = static_cast<int64_t>(n.c0);
                std::vector<double>& gx = grad_buf(n.in[0]);
                for (int64_t i = 0; i < rows; ++i) {
                    const double* w = n.out.values.data() + i * e;
                    const double* gr = g.data() + i * e;
                    double dot = 0.0;
                    for (int64_t j = 0; j < k; ++j) {
                        int64_t sel = n.ints[i * k + j];
                        dot += gr[sel] * w[sel];
                    }
                    for (int64_t j = 0; j < k; ++j) {
                        int64_t sel = n.ints[i * k + j];
                        gx[i * e + sel] += w[sel] * (gr[sel] - dot);
                    }
                }
                break;
            }
        }
    }
}

Value swiglu(Graph& g, Value x, Value w_gate, Value w_up, Value w_down) {
    Value gate = g.silu(g.matmul(x, w_gate));
    Value up = g.matmul(x, w_up);
    return g.matmul(g.mul(gate, up), w_down);
}

}  // namespace nitp
