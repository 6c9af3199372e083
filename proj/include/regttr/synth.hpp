#pragma once

// Deterministic synthetic phantoms, label maps and ground-truth deformation
// fields for desk-scale experiments. Everything is a pure function of its
// spec including the seed.
//
// Randomness comes from splitmix64 (Steele/Vigna public-domain generator).
// The reference sequence is frozen in the test suite: state 1234567 yields
// 0x599ed017fb08fc85, 0x2c73f08458540fa5, 0x883ebce5a3f27c77, ... so
// fixtures are reproducible across implementations.

#include "regttr/core.hpp"
#include "regttr/warp.hpp"

#include <cstdint>
#include <numbers>

namespace regttr {

struct SplitMix64 {
    std::uint64_t state = 0;

    explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }
};

enum class PhantomKind { spheres, checker_smooth, gradient_blobs };

struct PhantomSpec {
    Dims3 dims;
    PhantomKind kind = PhantomKind::spheres;
    int num_objects = 3;
    std::uint64_t seed = 0;
    Vec3 spacing{1.0, 1.0, 1.0};
};

namespace detail {

// Separable Gaussian smoothing with replicate boundary, radius ceil(3
// sigma). sigma <= 0 is a no-op.
inline void gaussian_smooth_inplace(std::vector<double>& data, Dims3 dims, double sigma) {
    if (sigma <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
        ksum += kernel[k + radius];
    }
    for (double& w : kernel) w /= ksum;

    const int n[3] = {dims.x, dims.y, dims.z};
    const std::ptrdiff_t stride[3] = {1, dims.x, static_cast<std::ptrdiff_t>(dims.x) * dims.y};
    std::vector<double> tmp(data.size());
    for (int axis = 0; axis < 3; ++axis) {
        const int na = n[axis];
        const std::ptrdiff_t sa = stride[axis];
        for (int z = 0; z < dims.z; ++z)
            for (int y = 0; y < dims.y; ++y)
                for (int x = 0; x < dims.x; ++x) {
                    const int coord[3] = {x, y, z};
                    const std::ptrdiff_t idx = x + stride[1] * y + stride[2] * z;
                    double acc = 0.0;
                    for (int k = -radius; k <= radius; ++k) {
                        const int j = std::clamp(coord[axis] + k, 0, na - 1);
                        acc += kernel[k + radius] * data[idx + (j - coord[axis]) * sa];
                    }
                    tmp[idx] = acc;
                }
        data.swap(tmp);
    }
}

inline void minmax_rescale(std::vector<double>& data) {
    const auto [lo_it, hi_it] = std::minmax_element(data.begin(), data.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
        for (double& v : data) v = 0.0;
        return;
    }
    const double inv = 1.0 / (hi - lo);
    for (double& v : data) v = (v - lo) * inv;
}

}  // namespace detail

inline DisplacementField make_translation_field(Dims3 dims, Vec3 t, Vec3 spacing = {1, 1, 1}) {
    require(dims.valid(), "make_translation_field: dims must be positive");
    DisplacementField f(dims, spacing);
    for (std::size_t i = 0; i < dims.voxel_count(); ++i) {
        f.data[3 * i] = t.x;
        f.data[3 * i + 1] = t.y;
        f.data[3 * i + 2] = t.z;
    }
    return f;
}

// Gaussian-smoothed seeded random field rescaled so the maximum displacement
// magnitude equals `amplitude`, regenerated (bounded retries) until the
// minimum Jacobian determinant exceeds 0.1, so the result is fold-free.
// The noise is smoothed on a kernel-radius padded grid and cropped, keeping
// the field statistics homogeneous up to the volume boundary.
inline DisplacementField make_smooth_field(Dims3 dims, double amplitude, double smoothness_sigma,
                                           std::uint64_t seed, Vec3 spacing = {1, 1, 1}) {
    require(dims.valid() && dims.min_extent() >= 2, "make_smooth_field: dims must be >= 2");
    require(std::isfinite(amplitude) && amplitude >= 0.0,
            "make_smooth_field: amplitude must be >= 0");
    DisplacementField f(dims, spacing);
    if (amplitude == 0.0) return f;

    const int pad =
        smoothness_sigma > 0.0 ? std::max(1, static_cast<int>(std::ceil(3.0 * smoothness_sigma))) : 0;
    const Dims3 padded{dims.x + 2 * pad, dims.y + 2 * pad, dims.z + 2 * pad};
    const std::size_t n = dims.voxel_count();

    SplitMix64 master(seed);
    constexpr int max_attempts = 20;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        SplitMix64 rng(master.next());
        std::vector<double> comp[3];
        for (auto& c : comp) c.resize(padded.voxel_count());
        for (std::size_t i = 0; i < padded.voxel_count(); ++i)
            for (auto& c : comp) c[i] = rng.uniform(-1.0, 1.0);
        for (auto& c : comp) detail::gaussian_smooth_inplace(c, padded, smoothness_sigma);

        // Crop the interior and find the peak magnitude.
        double max_mag2 = 0.0;
        for (int z = 0; z < dims.z; ++z)
            for (int y = 0; y < dims.y; ++y)
                for (int x = 0; x < dims.x; ++x) {
                    const std::size_t src =
                        static_cast<std::size_t>(x + pad) +
                        static_cast<std::size_t>(padded.x) *
                            (static_cast<std::size_t>(y + pad) +
                             static_cast<std::size_t>(padded.y) * static_cast<std::size_t>(z + pad));
                    const std::size_t dst = f.base(x, y, z);
                    f.data[dst] = comp[0][src];
                    f.data[dst + 1] = comp[1][src];
                    f.data[dst + 2] = comp[2][src];
                }
        for (std::size_t i = 0; i < n; ++i) {
            const double m2 = f.data[3 * i] * f.data[3 * i] +
                              f.data[3 * i + 1] * f.data[3 * i + 1] +
                              f.data[3 * i + 2] * f.data[3 * i + 2];
            max_mag2 = std::max(max_mag2, m2);
        }
        if (max_mag2 == 0.0) continue;
        const double scale = amplitude / std::sqrt(max_mag2);
        for (double& v : f.data) v *= scale;

        const Volume det = jacobian_determinant(f);
        const double min_det = *std::min_element(det.data.begin(), det.data.end());
        if (min_det > 0.1) return f;
    }
    throw std::runtime_error(
        "make_smooth_field: could not generate a fold-free field within the retry budget "
        "(amplitude too large for the requested smoothness)");
}

// Seeded uniform noise volume, optionally Gaussian-smoothed, min-max
// rescaled to [0, 1]. Handy as a textured test image.
inline Volume make_noise_volume(Dims3 dims, std::uint64_t seed, double smooth_sigma = 0.0,
                                Vec3 spacing = {1, 1, 1}) {
    require(dims.valid(), "make_noise_volume: dims must be positive");
    Volume v(dims, spacing);
    SplitMix64 rng(seed);
    for (double& s : v.data) s = rng.next_double();
    detail::gaussian_smooth_inplace(v.data, dims, smooth_sigma);
    detail::minmax_rescale(v.data);
    return v;
}

// Smooth image in [0, 1] plus a label map with at least one non-background
// object; fully determined by the spec.
inline std::pair<Volume, LabelMap> make_phantom(const PhantomSpec& spec) {
    require(spec.dims.valid() && spec.dims.min_extent() >= 8,
            "make_phantom: dims must be >= 8 per axis");
    require(spec.num_objects >= 1, "make_phantom: num_objects must be >= 1");
    const Dims3 dims = spec.dims;
    const int nx = dims.x, ny = dims.y, nz = dims.z;
    const std::size_t n = dims.voxel_count();
    Volume img(dims, spec.spacing);
    LabelMap labels(dims, spec.spacing);
    SplitMix64 rng(spec.seed ^ 0x5bd1e995u);

    // Low-amplitude smooth texture so window statistics carry signal
    // everywhere, not only at object borders.
    std::vector<double> texture(n);
    for (double& t : texture) t = rng.uniform(-1.0, 1.0);
    detail::gaussian_smooth_inplace(texture, dims, 1.5);

    auto for_each_voxel = [&](auto&& fn) {
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) fn(x, y, z);
    };

    switch (spec.kind) {
        case PhantomKind::spheres: {
            struct Sphere {
                Vec3 c;
                double r, a;
            };
            std::vector<Sphere> spheres;
            for (int i = 0; i < spec.num_objects; ++i) {
                Sphere s;
                // A few placement attempts to keep objects apart; overlap is
                // tolerated (the later label wins).
                for (int tries = 0; tries < 16; ++tries) {
                    s.c = {rng.uniform(0.25, 0.75) * (nx - 1), rng.uniform(0.25, 0.75) * (ny - 1),
                           rng.uniform(0.25, 0.75) * (nz - 1)};
                    s.r = rng.uniform(0.12, 0.18) * dims.min_extent();
                    bool ok = true;
                    for (const auto& o : spheres)
                        if ((s.c - o.c).norm() < s.r + o.r + 1.0) ok = false;
                    if (ok) break;
                }
                s.a = rng.uniform(0.35, 0.6);
                spheres.push_back(s);
            }
            for_each_voxel([&](int x, int y, int z) {
                double v = 0.15 +
                           0.2 * (static_cast<double>(x) / (nx - 1) +
                                  static_cast<double>(y) / (ny - 1) +
                                  static_cast<double>(z) / (nz - 1)) / 3.0 +
                           0.1 * texture[img.index(x, y, z)];
                for (std::size_t i = 0; i < spheres.size(); ++i) {
                    const double d = (Vec3{static_cast<double>(x), static_cast<double>(y),
                                           static_cast<double>(z)} -
                                      spheres[i].c)
                                         .norm();
                    const double t = d / spheres[i].r;
                    if (t < 1.0) v += spheres[i].a * (1.0 - t * t) * (1.0 - t * t);
                    if (d <= 0.75 * spheres[i].r)
                        labels.at(x, y, z) = static_cast<std::int32_t>(i + 1);
                }
                img.at(x, y, z) = v;
            });
            break;
        }
        case PhantomKind::checker_smooth: {
            const double freq = static_cast<double>(std::max(1, std::min(spec.num_objects, 4)));
            const double tau = 2.0 * std::numbers::pi * freq;
            for_each_voxel([&](int x, int y, int z) {
                const double s = std::sin(tau * x / nx) * std::sin(tau * y / ny) *
                                 std::sin(tau * z / nz);
                img.at(x, y, z) = 0.5 + 0.5 * s + 0.05 * texture[img.index(x, y, z)];
                if (s > 0.45) labels.at(x, y, z) = 1;
                else if (s < -0.45) labels.at(x, y, z) = 2;
            });
            break;
        }
        case PhantomKind::gradient_blobs: {
            struct Blob {
                Vec3 c;
                double sigma, a;
            };
            std::vector<Blob> blobs;
            for (int i = 0; i < spec.num_objects; ++i) {
                Blob b;
                b.c = {rng.uniform(0.2, 0.8) * (nx - 1), rng.uniform(0.2, 0.8) * (ny - 1),
                       rng.uniform(0.2, 0.8) * (nz - 1)};
                b.sigma = rng.uniform(0.08, 0.15) * dims.min_extent();
                b.a = rng.uniform(0.3, 0.5) * (rng.next_double() < 0.5 ? -1.0 : 1.0);
                blobs.push_back(b);
            }
            for_each_voxel([&](int x, int y, int z) {
                double v = 0.2 + 0.5 * static_cast<double>(x) / (nx - 1) +
                           0.05 * texture[img.index(x, y, z)];
                for (std::size_t i = 0; i < blobs.size(); ++i) {
                    const double d = (Vec3{static_cast<double>(x), static_cast<double>(y),
                                           static_cast<double>(z)} -
                                      blobs[i].c)
                                         .norm();
                    const double g = std::exp(-0.5 * d * d / (blobs[i].sigma * blobs[i].sigma));
                    v += blobs[i].a * g;
                    if (g > 0.5) labels.at(x, y, z) = static_cast<std::int32_t>(i + 1);
                }
                img.at(x, y, z) = v;
            });
            break;
        }
    }
    detail::minmax_rescale(img.data);
    return {std::move(img), std::move(labels)};
}

}  // namespace regttr
