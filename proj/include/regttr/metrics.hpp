#pragma once

// Registration quality metrics: per-label Dice, HD95 in millimetres via an
// exact anisotropic squared Euclidean distance transform, and the standard
// deviation of the log Jacobian determinant (SDlogJ) with folded-voxel
// accounting.
//
// HD95 uses the pooled symmetric formulation: one 95th percentile
// (linear-interpolated, inclusive) over the union of both directed
// boundary-distance sets. Boundaries are 6-connectivity; voxels on the grid
// edge count as boundary.

#include "regttr/core.hpp"
#include "regttr/warp.hpp"

#include <array>
#include <map>
#include <set>

namespace regttr {

struct MetricsReport {
    std::map<std::int32_t, double> dice_per_label;
    std::map<std::int32_t, double> hd95_per_label;  // mm
    double dice_mean = 0.0;
    double sdlogj = 0.0;
    double folded_fraction = 0.0;  // det <= 1e-9 (non-positive or collapsed)
};

inline double dice(const LabelMap& a, const LabelMap& b, std::int32_t label) {
    require(a.dims == b.dims, "dice: dims must match");
    std::size_t na = 0, nb = 0, inter = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool ia = a.data[i] == label, ib = b.data[i] == label;
        na += ia;
        nb += ib;
        inter += ia && ib;
    }
    if (na == 0 && nb == 0) return 1.0;  // vacuous agreement
    if (na == 0 || nb == 0) return 0.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

namespace detail {

constexpr double kEdtBig = 1e30;

// Felzenszwalb-Huttenlocher 1D squared distance transform with sample
// positions i*step (anisotropic spacing enters through step).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n, double step) {
    std::vector<int> v(n);
    std::vector<double> zb(n + 1);
    int k = 0;
    v[0] = 0;
    zb[0] = -kEdtBig;
    zb[1] = kEdtBig;
    auto pos = [step](int i) { return step * static_cast<double>(i); };
    for (int q = 1; q < n; ++q) {
        double s = 0.0;
        for (;;) {
            const int p = v[k];
            s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if (s > zb[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        zb[k] = s;
        zb[k + 1] = kEdtBig;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (zb[k + 1] < pos(q)) ++k;
        const double dp = pos(q) - pos(v[k]);
        d[q] = dp * dp + f[v[k]];
    }
}

// Exact squared EDT (mm^2) to the nearest seed voxel.
inline std::vector<double> edt_sq(const std::vector<bool>& seed, Dims3 dims, Vec3 spacing) {
    const int nx = dims.x, ny = dims.y, nz = dims.z;
    std::vector<double> dist(dims.voxel_count());
    for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = seed[i] ? 0.0 : kEdtBig;

    auto idx = [&](int x, int y, int z) {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(nx) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z);
    };
    std::vector<double> line(std::max({nx, ny, nz}));
    std::vector<double> out(line.size());
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) line[x] = dist[idx(x, y, z)];
            edt_1d(line, out, nx, spacing.x);
            for (int x = 0; x < nx; ++x) dist[idx(x, y, z)] = out[x];
        }
    for (int z = 0; z < nz; ++z)
        for (int x = 0; x < nx; ++x) {
            for (int y = 0; y < ny; ++y) line[y] = dist[idx(x, y, z)];
            edt_1d(line, out, ny, spacing.y);
            for (int y = 0; y < ny; ++y) dist[idx(x, y, z)] = out[y];
        }
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            for (int z = 0; z < nz; ++z) line[z] = dist[idx(x, y, z)];
            edt_1d(line, out, nz, spacing.z);
            for (int z = 0; z < nz; ++z) dist[idx(x, y, z)] = out[z];
        }
    return dist;
}

// 6-connectivity boundary of the region carrying `label`; out-of-grid
// neighbours count as background.
inline std::vector<bool> boundary_mask(const LabelMap& m, std::int32_t label, std::size_t* count) {
    const int nx = m.dims.x, ny = m.dims.y, nz = m.dims.z;
    std::vector<bool> out(m.dims.voxel_count(), false);
    std::size_t c = 0;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                if (m.at(x, y, z) != label) continue;
                const bool edge = x == 0 || x == nx - 1 || y == 0 || y == ny - 1 || z == 0 ||
                                  z == nz - 1;
                bool b = edge;
                if (!b)
                    b = m.at(x - 1, y, z) != label || m.at(x + 1, y, z) != label ||
                        m.at(x, y - 1, z) != label || m.at(x, y + 1, z) != label ||
                        m.at(x, y, z - 1) != label || m.at(x, y, z + 1) != label;
                if (b) {
                    out[m.index(x, y, z)] = true;
                    ++c;
                }
            }
    if (count) *count = c;
    return out;
}

// Linear-interpolated inclusive percentile of a sorted sample.
inline double percentile_sorted(const std::vector<double>& sorted, double p) {
    const std::size_t m = sorted.size();
    if (m == 1) return sorted[0];
    const double rank = (p / 100.0) * static_cast<double>(m - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const std::size_t hi = std::min(lo + 1, m - 1);
    const double frac = rank - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

inline double hd95(const LabelMap& a, const LabelMap& b, std::int32_t label, Vec3 spacing) {
    require(a.dims == b.dims, "hd95: dims must match");
    std::size_t ca = 0, cb = 0;
    const std::vector<bool> ba = detail::boundary_mask(a, label, &ca);
    const std::vector<bool> bb = detail::boundary_mask(b, label, &cb);
    if (ca == 0 || cb == 0) throw std::invalid_argument("hd95: undefined HD95 (empty label set)");

    const std::vector<double> dta = detail::edt_sq(ba, a.dims, spacing);
    const std::vector<double> dtb = detail::edt_sq(bb, a.dims, spacing);
    std::vector<double> pooled;
    pooled.reserve(ca + cb);
    for (std::size_t i = 0; i < ba.size(); ++i) {
        if (ba[i]) pooled.push_back(std::sqrt(dtb[i]));
        if (bb[i]) pooled.push_back(std::sqrt(dta[i]));
    }
    std::sort(pooled.begin(), pooled.end());
    return detail::percentile_sorted(pooled, 95.0);
}

struct SdLogJResult {
    double sdlogj = 0.0;
    double folded_fraction = 0.0;
};

// Population standard deviation of log(det J_phi) over voxels with
// det > 1e-9; smaller determinants are excluded and counted as folded.
// interior_only drops the one-sided boundary rows from the statistic.
inline SdLogJResult sdlogj(const DisplacementField& field, bool interior_only = false) {
    const Volume det = jacobian_determinant(field);
    const int nx = field.dims.x, ny = field.dims.y, nz = field.dims.z;
    const int lo = interior_only ? 1 : 0;
    const int hx = interior_only ? nx - 1 : nx;
    const int hy = interior_only ? ny - 1 : ny;
    const int hz = interior_only ? nz - 1 : nz;
    require(lo < hx && lo < hy && lo < hz, "sdlogj: empty interior");

    std::vector<double> logs;
    logs.reserve(static_cast<std::size_t>(hx - lo) * (hy - lo) * (hz - lo));
    std::size_t folded = 0, total = 0;
    for (int z = lo; z < hz; ++z)
        for (int y = lo; y < hy; ++y)
            for (int x = lo; x < hx; ++x) {
                ++total;
                const double d = det.at(x, y, z);
                if (d <= 1e-9) {
                    ++folded;
                    continue;
                }
                logs.push_back(std::log(d));
            }
    if (logs.empty()) throw numeric_error("sdlogj: all voxels folded");
    double mean = 0.0;
    for (double v : logs) mean += v;
    mean /= static_cast<double>(logs.size());
    double var = 0.0;
    for (double v : logs) var += (v - mean) * (v - mean);
    var /= static_cast<double>(logs.size());
    return {std::sqrt(var), static_cast<double>(folded) / static_cast<double>(total)};
}

// Warps the moving labels through the field and scores every label shared
// by the two inputs (background 0 excluded).
inline MetricsReport evaluate(const LabelMap& fixed_labels, const LabelMap& moving_labels,
                              const DisplacementField& field, Vec3 spacing) {
    require(fixed_labels.dims == moving_labels.dims && fixed_labels.dims == field.dims,
            "evaluate: dims must match");
    const LabelMap warped = warp_labels(moving_labels, field);

    const auto la = fixed_labels.label_set();
    const auto lb = moving_labels.label_set();
    std::vector<std::int32_t> shared;
    std::set_intersection(la.begin(), la.end(), lb.begin(), lb.end(), std::back_inserter(shared));
    shared.erase(std::remove(shared.begin(), shared.end(), 0), shared.end());
    require(!shared.empty(), "evaluate: no common labels");

    MetricsReport rep;
    double dsum = 0.0;
    for (std::int32_t l : shared) {
        const double d = dice(fixed_labels, warped, l);
        rep.dice_per_label[l] = d;
        dsum += d;
        rep.hd95_per_label[l] = hd95(fixed_labels, warped, l, spacing);
    }
    rep.dice_mean = dsum / static_cast<double>(shared.size());
    const SdLogJResult s = sdlogj(field);
    rep.sdlogj = s.sdlogj;
    rep.folded_fraction = s.folded_fraction;
    return rep;
}

}  // namespace regttr
