#include "nitp/theory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nitp {

namespace {

double norm2(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

CosineGeometry CosineGeometry::from(std::span<const double> h, std::span<const double> z) {
    if (h.size() != z.size() || h.empty()) {
        throw std::invalid_argument("CosineGeometry: h and z must be nonempty vectors of equal length");
    }
    CosineGeometry g;
    g.h.assign(h.begin(), h.end());
    g.z.assign(z.begin(), z.end());
    g.r = norm2(h);
    g.z_norm = norm2(z);
    if (g.r == 0.0 || g.z_norm == 0.0) throw std::domain_error("CosineGeometry: zero-norm input");
    int64_t d = g.dim();
    g.u.resize(d);
    g.v.resize(d);
    for (int64_t i = 0; i < d; ++i) {
        g.u[i] = g.h[i] / g.r;
        g.v[i] = g.z[i] / g.z_norm;
    }
    g.s = dot(g.u, g.v);
    g.tangential.resize(d);
    for (int64_t i = 0; i < d; ++i) g.tangential[i] = g.v[i] - g.s * g.u[i];
    return g;
}

double cosine_loss_value(std::span<const double> h, std::span<const double> z) {
    double nh = norm2(h), nz = norm2(z);
    if (nh == 0.0 || nz == 0.0) throw std::domain_error("cosine_loss_value: zero-norm input");
    return 1.0 - dot(h, z) / (nh * nz);
}

std::vector<double> nitp_grad_closed(const CosineGeometry& geom) {
    std::vector<double> g(geom.dim());
    for (int64_t i = 0; i < geom.dim(); ++i) g[i] = -geom.tangential[i] / geom.r;
    return g;
}

std::vector<double> nitp_hessian_closed(const CosineGeometry& geom) {
    int64_t d = geom.dim();
    std::vector<double> h(d * d);
    double inv_r2 = 1.0 / (geom.r * geom.r);
    for (int64_t i = 0; i < d; ++i) {
        for (int64_t j = 0; j < d; ++j) {
            double proj = (i == j ? 1.0 : 0.0) - geom.u[i] * geom.u[j];
            double corr = geom.u[i] * geom.tangential[j] + geom.tangential[i] * geom.u[j];
            h[i * d + j] = inv_r2 * (geom.s * proj + corr);
        }
    }
    return h;
}

double tangent_curvature(const CosineGeometry& geom, std::span<const double> w) {
    double nw = norm2(w);
    if (nw == 0.0) throw std::invalid_argument("tangent_curvature: zero direction");
    if (std::abs(dot(geom.u, w)) > 1e-10 * nw) {
        throw std::invalid_argument("tangent_curvature: direction is not tangent to u");
    }
    std::vector<double> h = nitp_hessian_closed(geom);
    int64_t d = geom.dim();
    double q = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < d; ++j) acc += h[i * d + j] * w[j];
        q += w[i] * acc;
    }
    return q;
}

HessianReport spectral_lifting_check(const std::vector<double>& h_ntp, const CosineGeometry& geom, double lambda,
                                     const std::vector<std::vector<double>>& null_basis) {
    int64_t d = geom.dim();
    if (static_cast<int64_t>(h_ntp.size()) != d * d) {
        throw std::invalid_argument("spectral_lifting_check: H_ntp must be d x d");
    }
    for (int64_t i = 0; i < d; ++i) {
        for (int64_t j = i + 1; j < d; ++j) {
            if (std::abs(h_ntp[i * d + j] - h_ntp[j * d + i]) > 1e-10) {
                throw std::invalid_argument("spectral_lifting_check: H_ntp is not symmetric");
            }
        }
    }
    HessianReport rep;
    rep.analytic = nitp_hessian_closed(geom);

    std::vector<double> total(d * d);
    for (int64_t i = 0; i < d * d; ++i) total[i] = h_ntp[i] + lambda * rep.analytic[i];

    // radial direction stays flat under the latent loss
    double radial = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < d; ++j) acc += rep.analytic[i * d + j] * geom.u[j];
        radial += geom.u[i] * acc;
    }
    rep.radial_curvature = radial;

    double min_lifted = 0.0;
    double max_err = 0.0;
    bool first = true;
    for (const auto& w : null_basis) {
        if (static_cast<int64_t>(w.size()) != d) {
            throw std::invalid_argument("spectral_lifting_check: basis vector of wrong dimension");
        }
        double q = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < d; ++j) acc += total[i * d + j] * w[j];
            q += w[i] * acc;
        }
        double w2 = dot(w, w);
        double predicted = lambda * geom.s * w2 / (geom.r * geom.r);
        rep.tangent.push_back({q, predicted});
        max_err = std::max(max_err, std::abs(q - predicted));
        if (first || q < min_lifted) {
            min_lifted = q;
            first = false;
        }
    }
    rep.min_lifted = min_lifted;
    rep.max_abs_err = max_err;
    return rep;
}

std::vector<double> fd_gradient(const ScalarFn& f, std::span<const double> x, double step) {
    std::vector<double> xp(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double x0 = xp[i];
        xp[i] = x0 + step;
        double fp = f(xp);
        xp[i] = x0 - step;
        double fm = f(xp);
        xp[i] = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::domain_error("fd_gradient: non-finite evaluation");
        }
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

std::vector<double> fd_hessian(const ScalarFn& f, std::span<const double> x, double step) {
    size_t d = x.size();
    std::vector<double> xp(x.begin(), x.end());
    std::vector<double> h(d * d, 0.0);
    auto eval = [&](size_t i, double di, size_t j, double dj) {
        double xi = xp[i], xj = xp[j];
        xp[i] += di;
        xp[j] += dj;
        double v = f(xp);
        xp[i] = xi;
        xp[j] = xj;
        if (!std::isfinite(v)) throw std::domain_error("fd_hessian: non-finite evaluation");
        return v;
    };
    double f0 = f(xp);
    for (size_t i = 0; i < d; ++i) {
        // diagonal: (f(x+h) - 2 f(x) + f(x-h)) / h^2
        double fp = eval(i, step, i, 0.0);
        double fm = eval(i, -step, i, 0.0);
        h[i * d + i] = (fp - 2.0 * f0 + fm) / (step * step);
        for (size_t j = i + 1; j < d; ++j) {
            double fpp = eval(i, step, j, step);
            double fpm = eval(i, step, j, -step);
            double fmp = eval(i, -step, j, step);
            double fmm = eval(i, -step, j, -step);
            double v = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
            h[i * d + j] = v;
            h[j * d + i] = v;
        }
    }
    return h;
}

std::vector<double> fd_jacobian_of_gradient(const GradFn& g, std::span<const double> x, double step) {
    size_t d = x.size();
    std::vector<double> xp(x.begin(), x.end());
    std::vector<double> h(d * d);
    for (size_t j = 0; j < d; ++j) {
        double x0 = xp[j];
        xp[j] = x0 + step;
        std::vector<double> gp = g(xp);
        xp[j] = x0 - step;
        std::vector<double> gm = g(xp);
        xp[j] = x0;
        for (size_t i = 0; i < d; ++i) h[i * d + j] = (gp[i] - gm[i]) / (2.0 * step);
    }
    for (size_t i = 0; i < d; ++i) {
        for (size_t j = i + 1; j < d; ++j) {
            double v = 0.5 * (h[i * d + j] + h[j * d + i]);
            h[i * d + j] = v;
            h[j * d + i] = v;
        }
    }
    return h;
}

double projected_loss_curvature(Model& model, Projector* projector, std::span<const int32_t> tokens,
                                int64_t position, std::span<const double> direction, const ObjectiveConfig& cfg) {
    double nd = norm2(direction);
    if (std::abs(nd - 1.0) > 1e-9) {
        throw std::invalid_argument("projected_loss_curvature: direction must have unit norm");
    }
    int64_t d = model.config().hidden_dim;
    if (static_cast<int64_t>(direction.size()) != d) {
        throw std::invalid_argument("projected_loss_curvature: direction dimension mismatch");
    }

    // one forward pass to fetch h at `position` and its latent target row
    std::vector<double> h(d), z(d);
    {
        Graph g;
        BoundModel bm(g, model);
        ForwardOut fo = bm.forward(tokens);
        Value targets = extract_implicit_tokens(g, fo.trace, cfg, model.config().num_layers);
        int64_t rows = targets.shape()[0];
        if (position < 0 || position >= rows) {
            throw std::out_of_range("projected_loss_curvature: position outside valid rows");
        }
        const Tensor& hf = fo.trace.h_final.tensor();
        const Tensor& tz = targets.tensor();
        for (int64_t i = 0; i < d; ++i) {
            h[i] = hf.values[position * d + i];
            z[i] = tz.values[position * d + i];
        }
    }

    auto project = [&](std::span<const double> x) {
        if (!projector) return std::vector<double>(x.begin(), x.end());
        int64_t m = projector->w_gate.shape[1];
        std::vector<double> gate(m, 0.0), up(m, 0.0), out(d, 0.0);
        for (int64_t i = 0; i < d; ++i) {
            double xv = x[i];
            for (int64_t j = 0; j < m; ++j) {
                gate[j] += xv * projector->w_gate.values[i * m + j];
                up[j] += xv * projector->w_up.values[i * m + j];
            }
        }
        for (int64_t j = 0; j < m; ++j) {
            double sg = gate[j] / (1.0 + std::exp(-gate[j]));
            double prod = sg * up[j];
            for (int64_t i = 0; i < d; ++i) out[i] += prod * projector->w_down.values[j * d + i];
        }
        return out;
    };

    auto loss_at = [&](double eps) {
        std::vector<double> hp(d);
        for (int64_t i = 0; i < d; ++i) hp[i] = h[i] + eps * direction[i];
        double v = cosine_loss_value(project(hp), z);
        if (!std::isfinite(v)) throw std::domain_error("projected_loss_curvature: non-finite loss");
        return v;
    };

    constexpr double kStep = 1e-3;
    double fp = loss_at(kStep), f0 = loss_at(0.0), fm = loss_at(-kStep);
    return (fp - 2.0 * f0 + fm) / (kStep * kStep);
}

}  // namespace nitp
