#pragma once

// Dense 3D containers used throughout the engine: scalar volumes, per-voxel
// 3-vector displacement fields, and integer label maps.
//
// Memory order is fixed and documented: samples are stored x-fastest,
//   index(x, y, z) = x + nx * (y + ny * z).
// Field components are interleaved per voxel in the order (ux, uy, uz).
// Displacements are expressed in voxel units; spacing (mm per voxel) only
// enters physical-space metrics such as HD95.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace regttr {

// Numerical failure (e.g. non-finite loss) as opposed to bad input.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Dims3 {
    int x = 0, y = 0, z = 0;

    friend bool operator==(const Dims3&, const Dims3&) = default;

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) *
               static_cast<std::size_t>(z);
    }
    int min_extent() const { return std::min(x, std::min(y, z)); }
    bool valid() const { return x > 0 && y > 0 && z > 0; }
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    friend bool operator==(const Vec3&, const Vec3&) = default;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    bool finite() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
    }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Scalar image or per-voxel scalar map. Data stored as double; reductions
// elsewhere accumulate in double as well.
struct Volume {
    Dims3 dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    std::vector<double> data;

    Volume() = default;
    Volume(Dims3 d, Vec3 s, double fill = 0.0)
        : dims(d), spacing(s), data(d.voxel_count(), fill) {}

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims.x) *
                   (static_cast<std::size_t>(y) +
                    static_cast<std::size_t>(dims.y) * static_cast<std::size_t>(z));
    }
    double at(int x, int y, int z) const { return data[index(x, y, z)]; }
    double& at(int x, int y, int z) { return data[index(x, y, z)]; }

    void validate(const std::string& what = "Volume") const {
        require(dims.valid(), what + ": dims must be positive");
        require(data.size() == dims.voxel_count(), what + ": data length must equal nx*ny*nz");
        require(spacing.finite() && spacing.x > 0 && spacing.y > 0 && spacing.z > 0,
                what + ": spacing components must be positive and finite");
        for (double v : data)
            require(std::isfinite(v), what + ": non-finite samples");
    }
};

// Dense displacement field u(x), voxel units, interleaved (ux, uy, uz).
// The spatial transform is phi(x) = x + u(x).
struct DisplacementField {
    Dims3 dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    std::vector<double> data;  // 3 * voxel_count, interleaved

    DisplacementField() = default;
    DisplacementField(Dims3 d, Vec3 s) : dims(d), spacing(s), data(3 * d.voxel_count(), 0.0) {}

    std::size_t base(int x, int y, int z) const {
        return 3 * (static_cast<std::size_t>(x) +
                    static_cast<std::size_t>(dims.x) *
                        (static_cast<std::size_t>(y) +
                         static_cast<std::size_t>(dims.y) * static_cast<std::size_t>(z)));
    }
    Vec3 get(int x, int y, int z) const {
        const std::size_t b = base(x, y, z);
        return {data[b], data[b + 1], data[b + 2]};
    }
    void set(int x, int y, int z, Vec3 u) {
        const std::size_t b = base(x, y, z);
        data[b] = u.x;
        data[b + 1] = u.y;
        data[b + 2] = u.z;
    }
    double comp(int x, int y, int z, int c) const { return data[base(x, y, z) + c]; }
    double& comp(int x, int y, int z, int c) { return data[base(x, y, z) + c]; }

    void validate(const std::string& what = "DisplacementField") const {
        require(dims.valid(), what + ": dims must be positive");
        require(data.size() == 3 * dims.voxel_count(), what + ": data length must equal 3*nx*ny*nz");
        require(spacing.finite() && spacing.x > 0 && spacing.y > 0 && spacing.z > 0,
                what + ": spacing components must be positive and finite");
        for (double v : data)
            require(std::isfinite(v), what + ": non-finite components");
    }
};

// Per-voxel dL/du, same layout as the field it differentiates.
using GradField = DisplacementField;

// Segmentation labels; 0 is background.
struct LabelMap {
    Dims3 dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    std::vector<std::int32_t> data;

    LabelMap() = default;
    LabelMap(Dims3 d, Vec3 s, std::int32_t fill = 0)
        : dims(d), spacing(s), data(d.voxel_count(), fill) {}

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims.x) *
                   (static_cast<std::size_t>(y) +
                    static_cast<std::size_t>(dims.y) * static_cast<std::size_t>(z));
    }
    std::int32_t at(int x, int y, int z) const { return data[index(x, y, z)]; }
    std::int32_t& at(int x, int y, int z) { return data[index(x, y, z)]; }

    // Sorted unique labels present in the map.
    std::vector<std::int32_t> label_set() const {
        std::vector<std::int32_t> out(data.begin(), data.end());
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    void validate(const std::string& what = "LabelMap") const {
        require(dims.valid(), what + ": dims must be positive");
        require(data.size() == dims.voxel_count(), what + ": data length must equal nx*ny*nz");
        for (std::int32_t v : data)
            require(v >= 0, what + ": labels must be non-negative");
    }
};

// Affine min-max rescale to [0, 1]. Constant inputs map to all-zeros.
// Inputs already spanning [0, 1] are returned unchanged (the map is the
// identity), so the operation is idempotent on such volumes.
inline Volume normalize_intensity(const Volume& v) {
    v.validate("normalize_intensity");
    const auto [lo_it, hi_it] = std::minmax_element(v.data.begin(), v.data.end());
    const double lo = *lo_it, hi = *hi_it;
    Volume out(v.dims, v.spacing);
    if (hi == lo) return out;  // all zeros
    const double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        out.data[i] = (v.data[i] - lo) * inv;
    return out;
}

}  // namespace regttr
