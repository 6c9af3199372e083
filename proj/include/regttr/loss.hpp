#pragma once

// Hybrid registration loss: local squared NCC, windowed SSIM and a diffusion
// (forward-difference) smoothness penalty, each returning the scalar value
// and the exact analytic gradient with respect to the displacement field.
//
// Windowed statistics use truncated sliding box sums (self-adjoint, so the
// backward pass reuses the same filter). Similarity gradients chain through
// the trilinear sampler via the per-voxel coordinate gradient: the warped
// value at x depends on u only through the sampling point x + u(x).
//
// All reductions accumulate per-slice partials in fixed order, so results
// are bit-identical across thread counts. A central finite-difference
// oracle over the full hybrid objective is provided for verification.

#include "regttr/core.hpp"
#include "regttr/parallel.hpp"
#include "regttr/warp.hpp"

#include <utility>

namespace regttr {

struct LossWeights {
    double ncc = 1.0;     // lambda_1
    double ssim = 2.0;    // lambda_2
    double smooth = 1.0;  // lambda_3

    void validate() const {
        require(std::isfinite(ncc) && ncc >= 0.0 && std::isfinite(ssim) && ssim >= 0.0 &&
                    std::isfinite(smooth) && smooth >= 0.0,
                "LossWeights: weights must be finite and non-negative");
    }
};

struct LossBreakdown {
    double total = 0.0;
    double ncc = 0.0;    // unweighted component values
    double ssim = 0.0;
    double smooth = 0.0;
};

// Stability constants of the SSIM formula, (K1*L)^2 and (K2*L)^2 with
// K1=0.01, K2=0.03 and dynamic range L=1 (inputs are normalized to [0,1]).
struct SsimConstants {
    double c1 = 1e-4;
    double c2 = 9e-4;

    static SsimConstants from_k(double k1, double k2, double dynamic_range) {
        return {(k1 * dynamic_range) * (k1 * dynamic_range),
                (k2 * dynamic_range) * (k2 * dynamic_range)};
    }
};

struct LossOptions {
    int ncc_window = 9;
    int ssim_window = 7;
    SsimConstants ssim_constants{};
    double ncc_eps = 1e-5;  // denominator stabilizer of the squared-NCC term
};

namespace detail {

// Sliding truncated box sum along one axis: out[i] = sum of in over the
// in-bounds part of [i-r, i+r]. Symmetric window, so the operator is its
// own adjoint; the gradient passes below rely on that.
inline void box_sum_axis(const double* in, double* out, Dims3 dims, int axis, int r) {
    const int nx = dims.x, ny = dims.y, nz = dims.z;
    int n = 0;
    std::size_t stride = 0, nlines = 0;
    if (axis == 0) {
        n = nx;
        stride = 1;
        nlines = static_cast<std::size_t>(ny) * nz;
    } else if (axis == 1) {
        n = ny;
        stride = static_cast<std::size_t>(nx);
        nlines = static_cast<std::size_t>(nx) * nz;
    } else {
        n = nz;
        stride = static_cast<std::size_t>(nx) * ny;
        nlines = static_cast<std::size_t>(nx) * ny;
    }
    auto line_base = [&](std::size_t line) -> std::size_t {
        if (axis == 0) return line * static_cast<std::size_t>(nx);
        if (axis == 1) {
            const std::size_t x = line % static_cast<std::size_t>(nx);
            const std::size_t z = line / static_cast<std::size_t>(nx);
            return x + static_cast<std::size_t>(nx) * ny * z;
        }
        return line;  // x + nx*y
    };
    parallel_for_chunks(nlines, 64, [&](std::size_t, std::size_t lb, std::size_t le) {
        for (std::size_t line = lb; line < le; ++line) {
            const std::size_t base = line_base(line);
            double s = 0.0;
            const int hi0 = std::min(r, n - 1);
            for (int j = 0; j <= hi0; ++j) s += in[base + j * stride];
            out[base] = s;
            for (int i = 1; i < n; ++i) {
                const int add = i + r, sub = i - r - 1;
                if (add < n) s += in[base + add * stride];
                if (sub >= 0) s -= in[base + sub * stride];
                out[base + static_cast<std::size_t>(i) * stride] = s;
            }
        }
    });
}

// Separable 3D truncated box sum: src -> dst (tmp is scratch, same size).
inline void box_sum3(const double* src, double* dst, double* tmp, Dims3 dims, int r) {
    box_sum_axis(src, dst, dims, 0, r);
    box_sum_axis(dst, tmp, dims, 1, r);
    box_sum_axis(tmp, dst, dims, 2, r);
}

inline int window_count_1d(int i, int n, int r) {
    return std::min(i + r, n - 1) - std::max(i - r, 0) + 1;
}

inline void check_window(int window, Dims3 dims, const char* what) {
    require(window >= 3 && window % 2 == 1, std::string(what) + ": window must be odd and >= 3");
    require(window <= dims.min_extent(),
            std::string(what) + ": window must not exceed the smallest grid axis");
}

// Local squared NCC between fixed and an already-warped image.
// loss = 1 - mean over voxels of cross^2 / (varf*varw + eps), windowed
// statistics over the in-bounds part of each window^3 neighbourhood.
// When dloss_dwarped is non-null it receives dloss/dwarped.
inline double ncc_on_warped(const Volume& fixed, const Volume& warped, int window, double eps,
                            Volume* dloss_dwarped) {
    require(fixed.dims == warped.dims, "ncc: image dims must match");
    check_window(window, fixed.dims, "ncc");
    const Dims3 dims = fixed.dims;
    const int nx = dims.x, ny = dims.y, nz = dims.z, r = window / 2;
    const std::size_t n = dims.voxel_count();
    const double* f = fixed.data.data();
    const double* w = warped.data.data();

    std::vector<double> bsf(n), bsw(n), bsff(n), bsww(n), bsfw(n), tmp(n), prod(n);
    box_sum3(f, bsf.data(), tmp.data(), dims, r);
    box_sum3(w, bsw.data(), tmp.data(), dims, r);
    for (std::size_t i = 0; i < n; ++i) prod[i] = f[i] * f[i];
    box_sum3(prod.data(), bsff.data(), tmp.data(), dims, r);
    for (std::size_t i = 0; i < n; ++i) prod[i] = w[i] * w[i];
    box_sum3(prod.data(), bsww.data(), tmp.data(), dims, r);
    for (std::size_t i = 0; i < n; ++i) prod[i] = f[i] * w[i];
    box_sum3(prod.data(), bsfw.data(), tmp.data(), dims, r);

    std::vector<int> cx(nx), cy(ny), cz(nz);
    for (int i = 0; i < nx; ++i) cx[i] = window_count_1d(i, nx, r);
    for (int i = 0; i < ny; ++i) cy[i] = window_count_1d(i, ny, r);
    for (int i = 0; i < nz; ++i) cz[i] = window_count_1d(i, nz, r);

    const bool grad = dloss_dwarped != nullptr;
    std::vector<double> cc_partial(nz, 0.0);
    // Per-voxel stats; gradient coefficient maps overwrite the moment
    // buffers in place (each voxel only reads its own index).
    parallel_for_chunks(static_cast<std::size_t>(nz), 1,
                        [&](std::size_t, std::size_t zb, std::size_t ze) {
        for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z) {
            double acc = 0.0;
            for (int y = 0; y < ny; ++y) {
                const double cyz = static_cast<double>(cy[y]) * cz[z];
                std::size_t i = static_cast<std::size_t>(nx) *
                                (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z);
                for (int x = 0; x < nx; ++x, ++i) {
                    const double ninv = 1.0 / (cx[x] * cyz);
                    const double cross = bsfw[i] - bsf[i] * bsw[i] * ninv;
                    const double varf = bsff[i] - bsf[i] * bsf[i] * ninv;
                    const double varw = bsww[i] - bsw[i] * bsw[i] * ninv;
                    const double den = varf * varw + eps;
                    acc += cross * cross / den;
                    if (grad) {
                        const double a = 2.0 * cross / den;
                        const double c = -2.0 * cross * cross * varf / (den * den);
                        const double mu_f = bsf[i] * ninv;
                        const double mu_w = bsw[i] * ninv;
                        bsff[i] = a;
                        bsww[i] = a * mu_f;
                        bsfw[i] = c;
                        prod[i] = c * mu_w;
                    }
                }
            }
            cc_partial[z] = acc;
        }
    });
    double cc_sum = 0.0;
    for (double p : cc_partial) cc_sum += p;
    const double inv_n = 1.0 / static_cast<double>(n);
    const double loss = 1.0 - cc_sum * inv_n;

    if (grad) {
        // Adjoint pass: scatter per-window coefficients back to voxels.
        box_sum3(bsff.data(), bsf.data(), tmp.data(), dims, r);   // B[a]
        box_sum3(bsww.data(), bsw.data(), tmp.data(), dims, r);   // B[a*mu_f]
        box_sum3(bsfw.data(), bsff.data(), tmp.data(), dims, r);  // B[c]
        box_sum3(prod.data(), bsfw.data(), tmp.data(), dims, r);  // B[c*mu_w]
        *dloss_dwarped = Volume(dims, fixed.spacing);
        double* g = dloss_dwarped->data.data();
        parallel_for_chunks(n, default_chunk, [&](std::size_t, std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i)
                g[i] = -(f[i] * bsf[i] - bsw[i] + w[i] * bsff[i] - bsfw[i]) * inv_n;
        });
    }
    return loss;
}

// SSIM between fixed and an already-warped image, averaged over windows
// that lie fully inside the grid. Plain window averages (no unbiased
// correction). loss = 1 - mean SSIM. Formulated as the product of the
// luminance and structure ratios so that identical inputs give loss 0 and
// gradient 0 exactly.
inline double ssim_on_warped(const Volume& fixed, const Volume& warped, int window,
                             SsimConstants c, Volume* dloss_dwarped) {
    require(fixed.dims == warped.dims, "ssim: image dims must match");
    check_window(window, fixed.dims, "ssim");
    const Dims3 dims = fixed.dims;
    const int nx = dims.x, ny = dims.y, nz = dims.z, r = window / 2;
    const std::size_t n = dims.voxel_count();
    const double* fx = fixed.data.data();
    const double* wy = warped.data.data();
    const double m_inv = 1.0 / (static_cast<double>(window) * window * window);

    std::vector<double> bsx(n), bsy(n), bsxx(n), bsyy(n), bsxy(n), tmp(n), prod(n);
    box_sum3(fx, bsx.data(), tmp.data(), dims, r);
    box_sum3(wy, bsy.data(), tmp.data(), dims, r);
    for (std::size_t i = 0; i < n; ++i) prod[i] = fx[i] * fx[i];
    box_sum3(prod.data(), bsxx.data(), tmp.data(), dims, r);
    for (std::size_t i = 0; i < n; ++i) prod[i] = wy[i] * wy[i];
    box_sum3(prod.data(), bsyy.data(), tmp.data(), dims, r);
    for (std::size_t i = 0; i < n; ++i) prod[i] = fx[i] * wy[i];
    box_sum3(prod.data(), bsxy.data(), tmp.data(), dims, r);

    const std::size_t n_valid = static_cast<std::size_t>(nx - window + 1) *
                                static_cast<std::size_t>(ny - window + 1) *
                                static_cast<std::size_t>(nz - window + 1);
    const bool grad = dloss_dwarped != nullptr;
    std::vector<double> ssim_partial(nz, 0.0);
    // Coefficient maps reuse the moment buffers; non-valid centers get 0 so
    // the adjoint box sum only scatters from valid windows.
    parallel_for_chunks(static_cast<std::size_t>(nz), 1,
                        [&](std::size_t, std::size_t zb, std::size_t ze) {
        for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z) {
            double acc = 0.0;
            const bool zvalid = (z >= r && z < nz - r);
            for (int y = 0; y < ny; ++y) {
                const bool yzvalid = zvalid && y >= r && y < ny - r;
                std::size_t i = static_cast<std::size_t>(nx) *
                                (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z);
                for (int x = 0; x < nx; ++x, ++i) {
                    if (!yzvalid || x < r || x >= nx - r) {
                        if (grad) {
                            bsxx[i] = 0.0;
                            bsyy[i] = 0.0;
                            bsxy[i] = 0.0;
                        }
                        continue;
                    }
                    const double mu_x = bsx[i] * m_inv;
                    const double mu_y = bsy[i] * m_inv;
                    const double sxx = bsxx[i] * m_inv - mu_x * mu_x;
                    const double syy = bsyy[i] * m_inv - mu_y * mu_y;
                    const double sxy = bsxy[i] * m_inv - mu_x * mu_y;
                    const double n1 = 2.0 * mu_x * mu_y + c.c1;
                    const double d1 = mu_x * mu_x + mu_y * mu_y + c.c1;
                    const double n2 = 2.0 * sxy + c.c2;
                    const double d2 = sxx + syy + c.c2;
                    const double r1 = n1 / d1;
                    const double r2 = n2 / d2;
                    acc += r1 * r2;
                    if (grad) {
                        const double e1 = 2.0 * m_inv * r2 / (d1 * d1);
                        const double e2 = 2.0 * m_inv * r1 / (d2 * d2);
                        bsxx[i] = e1 * (mu_x * d1 - n1 * mu_y) + e2 * (n2 * mu_y - mu_x * d2);
                        bsyy[i] = e2 * d2;    // coefficient of fixed[v]
                        bsxy[i] = -(e2 * n2);  // coefficient of warped[v]
                    }
                }
            }
            ssim_partial[z] = acc;
        }
    });
    double ssim_sum = 0.0;
    for (double p : ssim_partial) ssim_sum += p;
    const double inv_valid = 1.0 / static_cast<double>(n_valid);
    const double loss = 1.0 - ssim_sum * inv_valid;

    if (grad) {
        box_sum3(bsxx.data(), bsx.data(), tmp.data(), dims, r);  // B[const]
        box_sum3(bsyy.data(), bsy.data(), tmp.data(), dims, r);  // B[x coeff]
        box_sum3(bsxy.data(), prod.data(), tmp.data(), dims, r); // B[y coeff]
        *dloss_dwarped = Volume(dims, fixed.spacing);
        double* g = dloss_dwarped->data.data();
        parallel_for_chunks(n, default_chunk, [&](std::size_t, std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i)
                g[i] = -(bsx[i] + fx[i] * bsy[i] + wy[i] * prod[i]) * inv_valid;
        });
    }
    return loss;
}

// Diffusion smoothness: mean over all voxels, axes and components of the
// squared forward difference, boundary terms omitted; the denominator stays
// 9 * voxel_count. When grad is non-null its exact derivative (a discrete
// negative-Laplacian form) is accumulated scaled by `weight`.
inline double smooth_value_grad(const DisplacementField& field, GradField* grad, double weight) {
    const Dims3 dims = field.dims;
    require(dims.x >= 2 && dims.y >= 2 && dims.z >= 2,
            "smooth: every axis must have length >= 2");
    const int nx = dims.x, ny = dims.y, nz = dims.z;
    const double norm = 1.0 / (9.0 * static_cast<double>(dims.voxel_count()));

    std::vector<double> partial(nz, 0.0);
    parallel_for_chunks(static_cast<std::size_t>(nz), 1,
                        [&](std::size_t, std::size_t zb, std::size_t ze) {
        for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z) {
            double acc = 0.0;
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    const Vec3 u = field.get(x, y, z);
                    if (x + 1 < nx) {
                        const Vec3 d = field.get(x + 1, y, z) - u;
                        acc += d.x * d.x + d.y * d.y + d.z * d.z;
                    }
                    if (y + 1 < ny) {
                        const Vec3 d = field.get(x, y + 1, z) - u;
                        acc += d.x * d.x + d.y * d.y + d.z * d.z;
                    }
                    if (z + 1 < nz) {
                        const Vec3 d = field.get(x, y, z + 1) - u;
                        acc += d.x * d.x + d.y * d.y + d.z * d.z;
                    }
                }
            partial[z] = acc;
        }
    });
    double sum = 0.0;
    for (double p : partial) sum += p;
    const double loss = sum * norm;

    if (grad != nullptr) {
        const double scale = 2.0 * norm * weight;
        parallel_for_chunks(static_cast<std::size_t>(nz), 1,
                            [&](std::size_t, std::size_t zb, std::size_t ze) {
            for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z)
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x) {
                        const Vec3 u = field.get(x, y, z);
                        Vec3 g{0.0, 0.0, 0.0};
                        if (x > 0) g = g + (u - field.get(x - 1, y, z));
                        if (x + 1 < nx) g = g - (field.get(x + 1, y, z) - u);
                        if (y > 0) g = g + (u - field.get(x, y - 1, z));
                        if (y + 1 < ny) g = g - (field.get(x, y + 1, z) - u);
                        if (z > 0) g = g + (u - field.get(x, y, z - 1));
                        if (z + 1 < nz) g = g - (field.get(x, y, z + 1) - u);
                        const std::size_t b = grad->base(x, y, z);
                        grad->data[b] += scale * g.x;
                        grad->data[b + 1] += scale * g.y;
                        grad->data[b + 2] += scale * g.z;
                    }
        });
    }
    return loss;
}

}  // namespace detail

// 1 - mean squared local NCC of (fixed, moving o phi_u) and its gradient
// with respect to the field.
inline std::pair<double, GradField> ncc_loss_grad(const Volume& fixed, const Volume& moving,
                                                  const DisplacementField& field, int window,
                                                  double eps = 1e-5) {
    require(fixed.dims == moving.dims && fixed.dims == field.dims,
            "ncc_loss_grad: dims must match");
    Volume warped;
    GradField sgrad;
    warp_with_grad(moving, field, warped, sgrad);
    Volume dldw;
    const double loss = detail::ncc_on_warped(fixed, warped, window, eps, &dldw);
    GradField grad(field.dims, field.spacing);
    const std::size_t n = field.dims.voxel_count();
    parallel_for_chunks(n, default_chunk, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            for (int c = 0; c < 3; ++c)
                grad.data[3 * i + c] = dldw.data[i] * sgrad.data[3 * i + c];
    });
    return {loss, std::move(grad)};
}

// 1 - mean SSIM over valid windows of (fixed, moving o phi_u) and its
// gradient with respect to the field. Inputs are expected in [0,1].
inline std::pair<double, GradField> ssim_loss_grad(const Volume& fixed, const Volume& moving,
                                                   const DisplacementField& field, int window,
                                                   SsimConstants c = {}) {
    require(fixed.dims == moving.dims && fixed.dims == field.dims,
            "ssim_loss_grad: dims must match");
    Volume warped;
    GradField sgrad;
    warp_with_grad(moving, field, warped, sgrad);
    Volume dldw;
    const double loss = detail::ssim_on_warped(fixed, warped, window, c, &dldw);
    GradField grad(field.dims, field.spacing);
    const std::size_t n = field.dims.voxel_count();
    parallel_for_chunks(n, default_chunk, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            for (int c2 = 0; c2 < 3; ++c2)
                grad.data[3 * i + c2] = dldw.data[i] * sgrad.data[3 * i + c2];
    });
    return {loss, std::move(grad)};
}

inline std::pair<double, GradField> smooth_loss_grad(const DisplacementField& field) {
    GradField grad(field.dims, field.spacing);
    const double loss = detail::smooth_value_grad(field, &grad, 1.0);
    return {loss, std::move(grad)};
}

// Weighted hybrid objective and its gradient. Terms with zero weight are
// skipped entirely and reported as 0, so the lambda_ssim = 0 configuration
// is the SSIM-ablated loss with bit-identical remaining components.
inline std::pair<LossBreakdown, GradField> hybrid_loss_grad(const Volume& fixed,
                                                            const Volume& moving,
                                                            const DisplacementField& field,
                                                            const LossWeights& w,
                                                            const LossOptions& opts = {}) {
    require(fixed.dims == moving.dims && fixed.dims == field.dims,
            "hybrid_loss_grad: dims must match");
    w.validate();
    LossBreakdown bd;
    GradField grad(field.dims, field.spacing);
    const std::size_t n = field.dims.voxel_count();

    if (w.ncc > 0.0 || w.ssim > 0.0) {
        Volume warped;
        GradField sgrad;
        warp_with_grad(moving, field, warped, sgrad);
        Volume dncc, dssim;
        if (w.ncc > 0.0)
            bd.ncc = detail::ncc_on_warped(fixed, warped, opts.ncc_window, opts.ncc_eps, &dncc);
        if (w.ssim > 0.0)
            bd.ssim = detail::ssim_on_warped(fixed, warped, opts.ssim_window,
                                             opts.ssim_constants, &dssim);
        const bool has_ncc = w.ncc > 0.0, has_ssim = w.ssim > 0.0;
        parallel_for_chunks(n, default_chunk, [&](std::size_t, std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                double dldw = 0.0;
                if (has_ncc) dldw += w.ncc * dncc.data[i];
                if (has_ssim) dldw += w.ssim * dssim.data[i];
                for (int c = 0; c < 3; ++c)
                    grad.data[3 * i + c] = dldw * sgrad.data[3 * i + c];
            }
        });
    }
    if (w.smooth > 0.0)
        bd.smooth = detail::smooth_value_grad(field, &grad, w.smooth);

    bd.total = w.ncc * bd.ncc + w.ssim * bd.ssim + w.smooth * bd.smooth;
    return {bd, std::move(grad)};
}

// Value-only evaluation of the hybrid objective.
inline LossBreakdown hybrid_loss_value(const Volume& fixed, const Volume& moving,
                                       const DisplacementField& field, const LossWeights& w,
                                       const LossOptions& opts = {}) {
    require(fixed.dims == moving.dims && fixed.dims == field.dims,
            "hybrid_loss_value: dims must match");
    w.validate();
    LossBreakdown bd;
    if (w.ncc > 0.0 || w.ssim > 0.0) {
        const Volume warped = warp(moving, field);
        if (w.ncc > 0.0)
            bd.ncc = detail::ncc_on_warped(fixed, warped, opts.ncc_window, opts.ncc_eps, nullptr);
        if (w.ssim > 0.0)
            bd.ssim = detail::ssim_on_warped(fixed, warped, opts.ssim_window,
                                             opts.ssim_constants, nullptr);
    }
    if (w.smooth > 0.0)
        bd.smooth = detail::smooth_value_grad(field, nullptr, 0.0);
    bd.total = w.ncc * bd.ncc + w.ssim * bd.ssim + w.smooth * bd.smooth;
    return bd;
}

// Central finite differences of the hybrid total with respect to every
// field component. Verification oracle; cost is 6*voxel_count full loss
// evaluations, intended for small grids.
inline GradField finite_diff_grad(const Volume& fixed, const Volume& moving,
                                  const DisplacementField& field, const LossWeights& w,
                                  const LossOptions& opts = {}, double step = 1e-3) {
    require(step > 0.0, "finite_diff_grad: step must be positive");
    DisplacementField probe = field;
    GradField grad(field.dims, field.spacing);
    const double inv_2h = 1.0 / (2.0 * step);
    for (std::size_t i = 0; i < probe.data.size(); ++i) {
        const double saved = probe.data[i];
        probe.data[i] = saved + step;
        const double lp = hybrid_loss_value(fixed, moving, probe, w, opts).total;
        probe.data[i] = saved - step;
        const double lm = hybrid_loss_value(fixed, moving, probe, w, opts).total;
        probe.data[i] = saved;
        grad.data[i] = (lp - lm) * inv_2h;
    }
    return grad;
}

}  // namespace regttr
