#pragma once

// Adam with bias correction over displacement-field parameters. One moment
// pair per field component; the update is elementwise.

#include "regttr/core.hpp"
#include "regttr/parallel.hpp"

#include <cmath>

namespace regttr {

struct AdamState {
    GradField m;  // first moments
    GradField v;  // second moments, componentwise >= 0
    long t = 0;   // completed steps
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(Dims3 dims, Vec3 spacing, double b1 = 0.9, double b2 = 0.999, double e = 1e-8)
        : m(dims, spacing), v(dims, spacing), beta1(b1), beta2(b2), eps(e) {}
};

// In-place update: m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g^2,
// field <- field - lr * mhat / (sqrt(vhat) + eps). lr = 0 is allowed and
// leaves the field unchanged (used by stopping-rule checks).
inline void adam_step(AdamState& state, DisplacementField& field, const GradField& grad,
                      double lr) {
    require(state.m.dims == field.dims && grad.dims == field.dims,
            "adam_step: state/field/gradient shapes must match");
    require(std::isfinite(lr) && lr >= 0.0, "adam_step: learning rate must be non-negative");
    for (double g : grad.data)
        if (!std::isfinite(g)) throw numeric_error("adam_step: non-finite gradient");

    state.t += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    const double inv_bc1 = 1.0 / bc1, inv_bc2 = 1.0 / bc2;
    const double eps = state.eps;

    double* m = state.m.data.data();
    double* v = state.v.data.data();
    double* u = field.data.data();
    const double* g = grad.data.data();
    parallel_for_chunks(field.data.size(), default_chunk,
                        [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] * inv_bc1;
            const double vhat = v[i] * inv_bc2;
            u[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    });
}

}  // namespace regttr
