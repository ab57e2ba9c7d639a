#pragma once

#include <cstdint>
#include <vector>

namespace nitp {

// Eigenvalues of a symmetric n x n matrix (row-major), descending.
// Cyclic Jacobi rotations; intended for the small covariance matrices the
// geometry probes produce (n up to a few hundred).
std::vector<double> jacobi_eigenvalues(std::vector<double> a, int64_t n);

}  // namespace nitp
