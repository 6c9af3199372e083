#pragma once

// Spatial transformation under phi(x) = x + u(x): trilinear pull-warping of
// images with the analytic derivative of the sampled value with respect to
// the sampling coordinate, nearest-neighbour warping of label maps, and
// per-voxel Jacobian determinants of phi.
//
// Boundary handling is clamp-to-edge. All coordinates are in voxel units.

#include "regttr/core.hpp"
#include "regttr/parallel.hpp"

#include <cmath>

namespace regttr {

struct SampleResult {
    double value = 0.0;
    // d(value)/d(p); exact derivative of the trilinear interpolant, which is
    // piecewise constant per cell along each axis. Zero along axes where the
    // sampling point is clamped outside the grid.
    Vec3 coord_grad;
};

namespace detail {

struct AxisSample {
    int i0 = 0;
    double f = 0.0;   // fractional offset within the cell [i0, i0+1]
    double dq = 0.0;  // d(clamped coord)/d(coord): 1 inside, 0 outside
};

inline AxisSample axis_sample(double p, int n) {
    if (n == 1) return {0, 0.0, 0.0};
    double q = p, dq = 1.0;
    if (p < 0.0) {
        q = 0.0;
        dq = 0.0;
    } else if (p > static_cast<double>(n - 1)) {
        q = static_cast<double>(n - 1);
        dq = 0.0;
    }
    int i0 = static_cast<int>(q);
    if (i0 > n - 2) i0 = n - 2;
    return {i0, q - static_cast<double>(i0), dq};
}

}  // namespace detail

inline SampleResult sample_trilinear(const Volume& v, Vec3 p) {
    const auto ax = detail::axis_sample(p.x, v.dims.x);
    const auto ay = detail::axis_sample(p.y, v.dims.y);
    const auto az = detail::axis_sample(p.z, v.dims.z);

    const int x0 = ax.i0, x1 = std::min(ax.i0 + 1, v.dims.x - 1);
    const int y0 = ay.i0, y1 = std::min(ay.i0 + 1, v.dims.y - 1);
    const int z0 = az.i0, z1 = std::min(az.i0 + 1, v.dims.z - 1);

    const double c000 = v.at(x0, y0, z0), c100 = v.at(x1, y0, z0);
    const double c010 = v.at(x0, y1, z0), c110 = v.at(x1, y1, z0);
    const double c001 = v.at(x0, y0, z1), c101 = v.at(x1, y0, z1);
    const double c011 = v.at(x0, y1, z1), c111 = v.at(x1, y1, z1);

    const double fx = ax.f, fy = ay.f, fz = az.f;
    const double gx = 1.0 - fx, gy = 1.0 - fy, gz = 1.0 - fz;

    // Value: interpolate x, then y, then z.
    const double v00 = gx * c000 + fx * c100;
    const double v10 = gx * c010 + fx * c110;
    const double v01 = gx * c001 + fx * c101;
    const double v11 = gx * c011 + fx * c111;
    const double v0 = gy * v00 + fy * v10;
    const double v1 = gy * v01 + fy * v11;
    const double value = gz * v0 + fz * v1;

    // d/dfx: differences along x, interpolated over y and z.
    const double dx00 = c100 - c000, dx10 = c110 - c010;
    const double dx01 = c101 - c001, dx11 = c111 - c011;
    const double ddx = gz * (gy * dx00 + fy * dx10) + fz * (gy * dx01 + fy * dx11);
    // d/dfy.
    const double dy0 = v10 - v00, dy1 = v11 - v01;
    const double ddy = gz * dy0 + fz * dy1;
    // d/dfz.
    const double ddz = v1 - v0;

    return {value, Vec3{ddx * ax.dq, ddy * ay.dq, ddz * az.dq}};
}

// Pull-warp: out[x] = moving(x + u(x)).
inline Volume warp(const Volume& moving, const DisplacementField& field) {
    require(moving.dims == field.dims, "warp: image and field dims must match");
    Volume out(moving.dims, moving.spacing);
    const int nx = moving.dims.x, ny = moving.dims.y, nz = moving.dims.z;
    parallel_for_chunks(static_cast<std::size_t>(nz), 1,
                        [&](std::size_t, std::size_t zb, std::size_t ze) {
        for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    const Vec3 u = field.get(x, y, z);
                    const Vec3 p{x + u.x, y + u.y, z + u.z};
                    out.at(x, y, z) = sample_trilinear(moving, p).value;
                }
    });
    return out;
}

// Pull-warp plus the sampler's coordinate gradient at every voxel; the
// chain-rule ingredient d(moving o phi)/du since out[x] depends on u only
// through the sampling point x + u(x).
inline void warp_with_grad(const Volume& moving, const DisplacementField& field,
                           Volume& warped, GradField& sampler_grad) {
    require(moving.dims == field.dims, "warp_with_grad: image and field dims must match");
    warped = Volume(moving.dims, moving.spacing);
    sampler_grad = GradField(moving.dims, moving.spacing);
    const int nx = moving.dims.x, ny = moving.dims.y, nz = moving.dims.z;
    parallel_for_chunks(static_cast<std::size_t>(nz), 1,
                        [&](std::size_t, std::size_t zb, std::size_t ze) {
        for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    const Vec3 u = field.get(x, y, z);
                    const SampleResult s =
                        sample_trilinear(moving, Vec3{x + u.x, y + u.y, z + u.z});
                    warped.at(x, y, z) = s.value;
                    sampler_grad.set(x, y, z, s.coord_grad);
                }
    });
}

// Nearest-neighbour label warp; ties round half away from zero, clamped to
// the grid.
inline LabelMap warp_labels(const LabelMap& labels, const DisplacementField& field) {
    require(labels.dims == field.dims, "warp_labels: labels and field dims must match");
    LabelMap out(labels.dims, labels.spacing);
    const int nx = labels.dims.x, ny = labels.dims.y, nz = labels.dims.z;
    auto nearest = [](double p, int n) {
        int i = static_cast<int>(std::llround(p));  // llround: half away from zero
        return std::clamp(i, 0, n - 1);
    };
    parallel_for_chunks(static_cast<std::size_t>(nz), 1,
                        [&](std::size_t, std::size_t zb, std::size_t ze) {
        for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    const Vec3 u = field.get(x, y, z);
                    out.at(x, y, z) = labels.at(nearest(x + u.x, nx),
                                                nearest(y + u.y, ny),
                                                nearest(z + u.z, nz));
                }
    });
    return out;
}

// Per-voxel det(I + grad u), central differences in the interior, one-sided
// on boundary faces, all in voxel units.
inline Volume jacobian_determinant(const DisplacementField& field) {
    require(field.dims.x >= 2 && field.dims.y >= 2 && field.dims.z >= 2,
            "jacobian_determinant: every axis must have length >= 2");
    Volume out(field.dims, field.spacing);
    const int nx = field.dims.x, ny = field.dims.y, nz = field.dims.z;

    // d(u)/d(axis) at index i along an axis of length n.
    auto diff = [](const Vec3& lo, const Vec3& hi, double scale) {
        return Vec3{(hi.x - lo.x) * scale, (hi.y - lo.y) * scale, (hi.z - lo.z) * scale};
    };

    parallel_for_chunks(static_cast<std::size_t>(nz), 1,
                        [&](std::size_t, std::size_t zb, std::size_t ze) {
        for (int z = static_cast<int>(zb); z < static_cast<int>(ze); ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    const int xm = std::max(x - 1, 0), xp = std::min(x + 1, nx - 1);
                    const int ym = std::max(y - 1, 0), yp = std::min(y + 1, ny - 1);
                    const int zm = std::max(z - 1, 0), zp = std::min(z + 1, nz - 1);
                    const Vec3 dux = diff(field.get(xm, y, z), field.get(xp, y, z),
                                          1.0 / (xp - xm));
                    const Vec3 duy = diff(field.get(x, ym, z), field.get(x, yp, z),
                                          1.0 / (yp - ym));
                    const Vec3 duz = diff(field.get(x, y, zm), field.get(x, y, zp),
                                          1.0 / (zp - zm));
                    const double a = 1.0 + dux.x, b = duy.x, c = duz.x;
                    const double d = dux.y, e = 1.0 + duy.y, f = duz.y;
                    const double g = dux.z, h = duy.z, i = 1.0 + duz.z;
                    out.at(x, y, z) =
                        a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
                }
    });
    return out;
}

}  // namespace regttr
