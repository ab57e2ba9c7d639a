#pragma once

#include <cstdint>
#include <random>

#include "nitp/tensor.hpp"

namespace nitp {

// One measurement of last-hidden-state geometry.
struct GeometrySnapshot {
    int64_t step = 0;
    double effective_rank = 0.0;
    double avg_cosine = 0.0;
    int64_t num_tokens = 0;
    int64_t num_pairs = 0;
};

struct ProbeConfig {
    int64_t num_pairs = 1024;
};

// exp of the entropy of the normalized covariance eigenvalue spectrum.
// Rows are mean-centered first; covariance uses the N-1 normalization (the
// entropy normalization cancels the scalar anyway).
double effective_rank(const Tensor& states);

struct PairwiseCosine {
    double value = 0.0;
    int64_t skipped_rows = 0;  // zero-norm rows excluded from sampling
    int64_t num_pairs = 0;
};

// Mean cosine over sampled unordered distinct-index row pairs after l2
// normalization. All pairs when num_pairs covers them.
PairwiseCosine avg_pairwise_cosine(const Tensor& states, int64_t num_pairs, std::mt19937_64& rng);

// Both metrics over a detached [N x d] matrix of hidden states.
GeometrySnapshot snapshot_states(const Tensor& states, int64_t step, const ProbeConfig& cfg, uint64_t seed);

}  // namespace nitp
