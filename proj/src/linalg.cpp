#include "nitp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nitp {

std::vector<double> jacobi_eigenvalues(std::vector<double> a, int64_t n) {
    if (n < 1 || static_cast<int64_t>(a.size()) != n * n) {
        throw std::invalid_argument("jacobi_eigenvalues: bad dimensions");
    }
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = i + 1; j < n; ++j) {
            if (std::abs(a[i * n + j] - a[j * n + i]) > 1e-10 * (1.0 + std::abs(a[i * n + j]))) {
                throw std::invalid_argument("jacobi_eigenvalues: matrix is not symmetric");
            }
        }
    }
    constexpr int kMaxSweeps = 100;
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double off = 0.0;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
        double diag = 0.0;
        for (int64_t i = 0; i < n; ++i) diag += a[i * n + i] * a[i * n + i];
        if (off <= 1e-30 * (diag + 1e-300)) break;

        for (int64_t p = 0; p < n - 1; ++p) {
            for (int64_t q = p + 1; q < n; ++q) {
                double apq = a[p * n + q];
                if (apq == 0.0) continue;
                double app = a[p * n + p], aqq = a[q * n + q];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int64_t i = 0; i < n; ++i) {
                    double aip = a[i * n + p], aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for (int64_t i = 0; i < n; ++i) {
                    double api = a[p * n + i], aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (int64_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
    std::sort(eig.begin(), eig.end(), std::greater<double>());
    return eig;
}

}  // namespace nitp
