#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nitp/model.hpp"
#include "nitp/objectives.hpp"

namespace nitp {

// Geometry of one (hidden state, latent target) pair for the cosine loss
// 1 - cos(h, z): r = |h|, u = h/r, v = z/|z|, s = u'v, A = v - s*u (tangential
// difference, orthogonal to u).
struct CosineGeometry {
    std::vector<double> h, z, u, v, tangential;  // tangential = A
    double r = 0.0;
    double z_norm = 0.0;
    double s = 0.0;

    static CosineGeometry from(std::span<const double> h, std::span<const double> z);
    int64_t dim() const { return static_cast<int64_t>(h.size()); }
};

// Plain evaluation of the cosine loss, usable as an FD oracle target.
double cosine_loss_value(std::span<const double> h, std::span<const double> z);

// Closed-form gradient -A/r of the cosine loss with respect to h.
std::vector<double> nitp_grad_closed(const CosineGeometry& geom);

// Closed-form Hessian (1/r^2)[ s(I - uu') + uA' + Au' ], row-major d x d.
std::vector<double> nitp_hessian_closed(const CosineGeometry& geom);

// Quadratic form w'Hw through the closed-form Hessian for a tangent direction
// w (|u'w| <= 1e-10 |w| required); analytically equal to s |w|^2 / r^2.
double tangent_curvature(const CosineGeometry& geom, std::span<const double> w);

struct TangentSample {
    double quadratic_form = 0.0;
    double predicted = 0.0;  // s |w|^2 / r^2
};

struct HessianReport {
    std::vector<double> analytic;  // d x d
    std::vector<double> fd;        // d x d (empty when the check skipped FD)
    double max_abs_err = 0.0;
    double radial_curvature = 0.0;  // u'Hu
    std::vector<TangentSample> tangent;
    double min_lifted = 0.0;  // min over the null basis of w'H_total w
};

// Verifies that adding lambda * H_nitp lifts every direction of `null_basis`
// (tangent directions flat under H_ntp) to lambda * s |w|^2 / r^2.
HessianReport spectral_lifting_check(const std::vector<double>& h_ntp, const CosineGeometry& geom, double lambda,
                                     const std::vector<std::vector<double>>& null_basis);

using ScalarFn = std::function<double(std::span<const double>)>;
using GradFn = std::function<std::vector<double>(std::span<const double>)>;

// Central differences.
std::vector<double> fd_gradient(const ScalarFn& f, std::span<const double> x, double step);
// Four-point central second differences on f, symmetrized as (H + H')/2.
std::vector<double> fd_hessian(const ScalarFn& f, std::span<const double> x, double step);
// Central differences of a gradient function, symmetrized.
std::vector<double> fd_jacobian_of_gradient(const GradFn& g, std::span<const double> x, double step);

// Empirical second directional derivative of the latent cosine loss with
// respect to the hidden state, evaluated through the actual projector (or
// directly on h when projector == nullptr) via a central second difference
// with step 1e-3. `position` picks the prediction row t; the target row comes
// from the trace per the objective config.
double projected_loss_curvature(Model& model, Projector* projector, std::span<const int32_t> tokens,
                                int64_t position, std::span<const double> direction, const ObjectiveConfig& cfg);

}  // namespace nitp
