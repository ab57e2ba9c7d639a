#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "nitp/geometry.hpp"
#include "nitp/linalg.hpp"
#include "testutil.hpp"

using namespace nitp;

namespace {

// independent spectrum oracle: power iteration with deflation
std::vector<double> power_iteration_eigenvalues(std::vector<double> a, int64_t n, std::mt19937_64& rng) {
    std::vector<double> eig;
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int64_t k = 0; k < n; ++k) {
        std::vector<double> v(n);
        for (double& x : v) x = dist(rng);
        double lambda = 0.0;
        for (int it = 0; it < 20000; ++it) {
            std::vector<double> w(n, 0.0);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < n; ++j) w[i] += a[i * n + j] * v[j];
            double norm = 0.0;
            for (double x : w) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-300) {
                lambda = 0.0;
                break;
            }
            for (int64_t i = 0; i < n; ++i) v[i] = w[i] / norm;
            double next = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int64_t j = 0; j < n; ++j) acc += a[i * n + j] * v[j];
                next += v[i] * acc;
            }
            if (it > 100 && std::abs(next - lambda) <= 1e-14 * std::max(1.0, std::abs(next))) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        eig.push_back(lambda);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) a[i * n + j] -= lambda * v[i] * v[j];
    }
    std::sort(eig.begin(), eig.end(), std::greater<double>());
    return eig;
}

// rows of a random orthogonal matrix via Gram-Schmidt
Tensor random_orthogonal(int64_t n, std::mt19937_64& rng) {
    Tensor q = testutil::random_tensor({n, n}, rng);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < i; ++j) {
            double dot = 0.0;
            for (int64_t c = 0; c < n; ++c) dot += q.at(i, c) * q.at(j, c);
            for (int64_t c = 0; c < n; ++c) q.at(i, c) -= dot * q.at(j, c);
        }
        double norm = 0.0;
        for (int64_t c = 0; c < n; ++c) norm += q.at(i, c) * q.at(i, c);
        norm = std::sqrt(norm);
        for (int64_t c = 0; c < n; ++c) q.at(i, c) /= norm;
    }
    return q;
}

}  // namespace

TEST_CASE("effective rank of rank-1 data is 1") {
    std::mt19937_64 rng(51);
    int64_t n = 12, d = 6;
    Tensor base = testutil::random_tensor({d}, rng);
    Tensor mean = testutil::random_tensor({d}, rng);
    Tensor x = Tensor::zeros({n, d});
    std::uniform_real_distribution<double> coef(-2.0, 2.0);
    for (int64_t i = 0; i < n; ++i) {
        double c = coef(rng);
        for (int64_t j = 0; j < d; ++j) x.at(i, j) = mean.values[j] + c * base.values[j];
    }
    CHECK(std::abs(effective_rank(x) - 1.0) <= 1e-9);
}

TEST_CASE("effective rank of a uniform spectrum is d") {
    std::mt19937_64 rng(52);
    int64_t d = 7;
    Tensor q = random_orthogonal(d, rng);
    // stacking Q over -Q gives exact zero mean and covariance proportional to I
    Tensor x = Tensor::zeros({2 * d, d});
    for (int64_t i = 0; i < d; ++i) {
        for (int64_t j = 0; j < d; ++j) {
            x.at(i, j) = 3.0 * q.at(i, j);
            x.at(d + i, j) = -3.0 * q.at(i, j);
        }
    }
    CHECK(std::abs(effective_rank(x) - static_cast<double>(d)) <= 1e-6);
}

TEST_CASE("jacobi spectrum matches the power-iteration oracle on random data") {
    std::mt19937_64 rng(53);
    int64_t n = 64, d = 8;
    Tensor x = testutil::random_tensor({n, d}, rng);

    // covariance of the centered rows, as the probe computes it
    std::vector<double> mean(d, 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) mean[j] += x.at(i, j) / n;
    std::vector<double> cov(d * d, 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t a = 0; a < d; ++a)
            for (int64_t b = 0; b < d; ++b)
                cov[a * d + b] += (x.at(i, a) - mean[a]) * (x.at(i, b) - mean[b]) / (n - 1);

    std::vector<double> jac = jacobi_eigenvalues(cov, d);
    std::vector<double> pow = power_iteration_eigenvalues(cov, d, rng);
    for (int64_t i = 0; i < d; ++i) CHECK(std::abs(jac[i] - pow[i]) <= 1e-8);

    // and the effective rank recomputed from the oracle spectrum agrees
    double sum = 0.0;
    for (double l : pow) sum += std::max(0.0, l);
    double entropy = 0.0;
    for (double l : pow) {
        if (l <= 0) continue;
        double p = l / sum;
        entropy -= p * std::log(p);
    }
    CHECK(std::abs(effective_rank(x) - std::exp(entropy)) <= 1e-8);
}

TEST_CASE("effective rank invariances") {
    std::mt19937_64 rng(54);
    int64_t n = 20, d = 6;
    Tensor x = testutil::random_tensor({n, d}, rng);
    double base = effective_rank(x);

    Tensor scaled = x;
    for (double& v : scaled.values) v *= 37.5;
    CHECK(std::abs(effective_rank(scaled) - base) <= 1e-9);

    Tensor rot = random_orthogonal(d, rng);
    Tensor rotated = Tensor::zeros({n, d});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j)
            for (int64_t c = 0; c < d; ++c) rotated.at(i, j) += x.at(i, c) * rot.at(c, j);
    CHECK(std::abs(effective_rank(rotated) - base) <= 1e-9);
}

TEST_CASE("effective rank error paths") {
    Tensor one = Tensor::zeros({1, 4});
    CHECK_THROWS_AS(effective_rank(one), std::invalid_argument);
    Tensor flat = Tensor::full({5, 4}, 3.0);  // centered rows identically zero
    CHECK_THROWS_AS(effective_rank(flat), std::domain_error);
}

TEST_CASE("average pairwise cosine basics") {
    std::mt19937_64 rng(55);
    Tensor same = Tensor::zeros({5, 3});
    for (int64_t i = 0; i < 5; ++i) {
        same.at(i, 0) = 1.0 + i;
        same.at(i, 1) = 2.0 * (1.0 + i);
    }
    CHECK(avg_pairwise_cosine(same, 100, rng).value == doctest::Approx(1.0).epsilon(1e-12));

    Tensor basis = Tensor::zeros({4, 4});
    for (int64_t i = 0; i < 4; ++i) basis.at(i, i) = 2.0;
    CHECK(avg_pairwise_cosine(basis, 100, rng).value == doctest::Approx(0.0));
}

TEST_CASE("pairwise cosine with the full budget equals the all-pairs mean") {
    std::mt19937_64 rng(56);
    Tensor x = testutil::random_tensor({6, 5}, rng);
    double exact = 0.0;
    int count = 0;
    for (int64_t i = 0; i < 6; ++i) {
        for (int64_t j = i + 1; j < 6; ++j) {
            double dot = 0, ni = 0, nj = 0;
            for (int64_t c = 0; c < 5; ++c) {
                dot += x.at(i, c) * x.at(j, c);
                ni += x.at(i, c) * x.at(i, c);
                nj += x.at(j, c) * x.at(j, c);
            }
            exact += dot / std::sqrt(ni * nj);
            ++count;
        }
    }
    exact /= count;
    CHECK(std::abs(avg_pairwise_cosine(x, 15, rng).value - exact) <= 1e-12);
    CHECK(std::abs(avg_pairwise_cosine(x, 500, rng).value - exact) <= 1e-12);
}

TEST_CASE("pairwise cosine rescaling rows does not change it") {
    std::mt19937_64 rng(57);
    Tensor x = testutil::random_tensor({10, 4}, rng);
    std::mt19937_64 r1(7), r2(7);
    double base = avg_pairwise_cosine(x, 20, r1).value;
    Tensor scaled = x;
    for (int64_t i = 0; i < 10; ++i) {
        double c = 0.5 + 0.25 * i;
        for (int64_t j = 0; j < 4; ++j) scaled.at(i, j) *= c;
    }
    CHECK(std::abs(avg_pairwise_cosine(scaled, 20, r2).value - base) <= 1e-12);
}

TEST_CASE("zero-norm rows are excluded with a counter") {
    std::mt19937_64 rng(58);
    Tensor x = testutil::random_tensor({5, 3}, rng);
    for (int64_t j = 0; j < 3; ++j) x.at(2, j) = 0.0;
    PairwiseCosine pc = avg_pairwise_cosine(x, 100, rng);
    CHECK(pc.skipped_rows == 1);
    CHECK(pc.num_pairs == 6);  // C(4,2)

    Tensor zeros = Tensor::zeros({3, 3});
    CHECK_THROWS_AS(avg_pairwise_cosine(zeros, 4, rng), std::domain_error);
}

TEST_CASE("sampling estimator is unbiased over reseeded draws") {
    std::mt19937_64 rng(59);
    int64_t n = 32, d = 6;
    Tensor x = testutil::random_tensor({n, d}, rng);
    std::mt19937_64 oracle_rng(1);
    double exact = avg_pairwise_cosine(x, n * (n - 1) / 2, oracle_rng).value;

    int trials = 1000;
    std::vector<double> estimates(trials);
    for (int t = 0; t < trials; ++t) {
        std::mt19937_64 r(1000 + t);
        estimates[t] = avg_pairwise_cosine(x, 40, r).value;
    }
    double mean = 0.0;
    for (double e : estimates) mean += e;
    mean /= trials;
    double var = 0.0;
    for (double e : estimates) var += (e - mean) * (e - mean);
    var /= (trials - 1);
    double se = std::sqrt(var / trials);
    CHECK(std::abs(mean - exact) <= 3.0 * se);
}

TEST_CASE("snapshot is deterministic and records the step") {
    std::mt19937_64 rng(60);
    Tensor x = testutil::random_tensor({30, 8}, rng);
    ProbeConfig pc;
    pc.num_pairs = 64;
    GeometrySnapshot a = snapshot_states(x, 1234, pc, 77);
    GeometrySnapshot b = snapshot_states(x, 1234, pc, 77);
    CHECK(a.step == 1234);
    CHECK(a.effective_rank == b.effective_rank);
    CHECK(a.avg_cosine == b.avg_cosine);
    CHECK(a.num_tokens == 30);

    // a rank-1 trace has effective rank 1 and cosine +-1 depending on row signs
    Tensor r1 = Tensor::zeros({6, 4});
    std::uniform_real_distribution<double> coef(0.5, 2.0);
    Tensor dir = testutil::random_tensor({4}, rng);
    for (int64_t i = 0; i < 6; ++i) {
        double c = coef(rng);
        for (int64_t j = 0; j < 4; ++j) r1.at(i, j) = c * dir.values[j];
    }
    GeometrySnapshot s = snapshot_states(r1, 5, pc, 7);
    CHECK(std::abs(s.effective_rank - 1.0) <= 1e-9);
    CHECK(s.avg_cosine == doctest::Approx(1.0).epsilon(1e-12));

    Tensor opposed = Tensor::zeros({2, 4});
    for (int64_t j = 0; j < 4; ++j) {
        opposed.at(0, j) = dir.values[j];
        opposed.at(1, j) = -2.0 * dir.values[j];
    }
    GeometrySnapshot s2 = snapshot_states(opposed, 6, pc, 7);
    CHECK(std::abs(s2.effective_rank - 1.0) <= 1e-9);
    CHECK(s2.avg_cosine == doctest::Approx(-1.0).epsilon(1e-12));
}
