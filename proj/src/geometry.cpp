#include "nitp/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "nitp/linalg.hpp"
#include "nitp/objectives.hpp"
#include "nitp/rng.hpp"

namespace nitp {

double effective_rank(const Tensor& states) {
    if (states.shape.size() != 2) throw std::invalid_argument("effective_rank: expected [N x d]");
    int64_t n = states.shape[0], d = states.shape[1];
    if (n < 2) throw std::invalid_argument("effective_rank: need at least 2 rows");

    std::vector<double> mean(d, 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) mean[j] += states.values[i * d + j];
    for (double& m : mean) m /= static_cast<double>(n);

    std::vector<double> xc(n * d);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) xc[i * d + j] = states.values[i * d + j] - mean[j];

    std::vector<double> cov(d * d, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        const double* row = xc.data() + i * d;
        for (int64_t a = 0; a < d; ++a) {
            double ra = row[a];
            if (ra == 0.0) continue;
            for (int64_t b = a; b < d; ++b) cov[a * d + b] += ra * row[b];
        }
    }
    double inv = 1.0 / static_cast<double>(n - 1);
    for (int64_t a = 0; a < d; ++a)
        for (int64_t b = a; b < d; ++b) {
            cov[a * d + b] *= inv;
            cov[b * d + a] = cov[a * d + b];
        }

    std::vector<double> eig = jacobi_eigenvalues(std::move(cov), d);
    double lmax = 0.0;
    for (double& l : eig) {
        l = std::max(0.0, l);
        lmax = std::max(lmax, l);
    }
    if (lmax <= 0.0) throw std::domain_error("effective_rank: centered states are identically zero");

    // numerical noise floor on the spectrum
    double floor = 1e-12 * lmax;
    double sum = 0.0;
    for (double l : eig)
        if (l >= floor) sum += l;
    double entropy = 0.0;
    for (double l : eig) {
        if (l < floor) continue;
        double p = l / sum;
        if (p > 0) entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

PairwiseCosine avg_pairwise_cosine(const Tensor& states, int64_t num_pairs, std::mt19937_64& rng) {
    if (states.shape.size() != 2) throw std::invalid_argument("avg_pairwise_cosine: expected [N x d]");
    int64_t n = states.shape[0], d = states.shape[1];
    if (n < 2) throw std::invalid_argument("avg_pairwise_cosine: need at least 2 rows");
    if (num_pairs < 1) throw std::invalid_argument("avg_pairwise_cosine: num_pairs must be >= 1");

    PairwiseCosine out;
    std::vector<int64_t> live;
    std::vector<double> norms(n);
    live.reserve(n);
    for (int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < d; ++j) s += states.values[i * d + j] * states.values[i * d + j];
        norms[i] = std::sqrt(s);
        if (norms[i] > 0)
            live.push_back(i);
        else
            ++out.skipped_rows;
    }
    if (live.size() < 2) throw std::domain_error("avg_pairwise_cosine: fewer than 2 nonzero rows");

    auto pairs = sample_distinct_pairs(static_cast<int64_t>(live.size()), num_pairs, rng);
    double acc = 0.0;
    for (auto [a, b] : pairs) {
        int64_t i = live[a], j = live[b];
        const double* ri = states.values.data() + i * d;
        const double* rj = states.values.data() + j * d;
        double dot = 0.0;
        for (int64_t c = 0; c < d; ++c) dot += ri[c] * rj[c];
        acc += dot / (norms[i] * norms[j]);
    }
    out.num_pairs = static_cast<int64_t>(pairs.size());
    out.value = acc / static_cast<double>(pairs.size());
    return out;
}

GeometrySnapshot snapshot_states(const Tensor& states, int64_t step, const ProbeConfig& cfg, uint64_t seed) {
    GeometrySnapshot snap;
    snap.step = step;
    snap.num_tokens = states.shape.empty() ? 0 : states.shape[0];
    snap.effective_rank = effective_rank(states);
    std::mt19937_64 rng(seed);
    PairwiseCosine pc = avg_pairwise_cosine(states, cfg.num_pairs, rng);
    snap.avg_cosine = pc.value;
    snap.num_pairs = pc.num_pairs;
    return snap;
}

}  // namespace nitp
