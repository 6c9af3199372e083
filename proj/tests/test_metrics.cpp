#include "oracles.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace regttr;
using namespace testsup;

namespace {

LabelMap cube_mask(Dims3 dims, int x0, int y0, int z0, int side, std::int32_t label = 1) {
    LabelMap m(dims, {1, 1, 1});
    for (int z = z0; z < z0 + side; ++z)
        for (int y = y0; y < y0 + side; ++y)
            for (int x = x0; x < x0 + side; ++x) m.at(x, y, z) = label;
    return m;
}

LabelMap random_labels(Dims3 dims, std::uint64_t seed, int num_labels = 2) {
    // Blocky random regions: threshold smoothed noise so boundaries are
    // non-trivial but not single-voxel speckle.
    LabelMap m(dims, {1, 1, 1});
    Volume n = make_noise_volume(dims, seed, 1.2);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        const double v = n.data[i];
        for (int l = 1; l <= num_labels; ++l) {
            const double lo = 0.5 + 0.18 * (l - 1);
            const double hi = 0.5 + 0.18 * l;
            if (v >= lo && v < hi) m.data[i] = l;
        }
    }
    return m;
}

}  // namespace

TEST_CASE("dice identities", "[metrics]") {
    const LabelMap a = cube_mask({8, 8, 8}, 2, 2, 2, 3);
    CHECK(dice(a, a, 1) == 1.0);

    const LabelMap b = cube_mask({8, 8, 8}, 6, 6, 6, 2);
    const LabelMap c = cube_mask({8, 8, 8}, 0, 0, 0, 2);
    CHECK(dice(b, c, 1) == 0.0);

    // Both empty for an absent label: vacuous agreement.
    CHECK(dice(b, c, 9) == 1.0);
    // Exactly one empty.
    CHECK(dice(a, c, 1) == 0.0);
}

TEST_CASE("dice of a unit-shifted cube is exactly one half", "[metrics]") {
    const LabelMap a = cube_mask({8, 8, 8}, 2, 2, 2, 2);
    const LabelMap b = cube_mask({8, 8, 8}, 3, 2, 2, 2);
    CHECK(dice(a, b, 1) == 0.5);  // overlap 4 of 8 voxels each
    CHECK(dice(b, a, 1) == 0.5);
}

TEST_CASE("dice is symmetric and matches the brute-force oracle", "[metrics]") {
    for (std::uint64_t seed : {7ULL, 8ULL, 9ULL}) {
        const LabelMap a = random_labels({10, 9, 8}, seed * 2);
        const LabelMap b = random_labels({10, 9, 8}, seed * 2 + 1);
        for (std::int32_t l : {1, 2}) {
            CHECK(dice(a, b, l) == dice(b, a, l));
            CHECK(dice(a, b, l) == oracles::brute_dice(a, b, l));
        }
    }
}

TEST_CASE("hd95 identities and the hand-computed two-voxel case", "[metrics]") {
    const LabelMap a = cube_mask({8, 8, 8}, 2, 2, 2, 3);
    CHECK(hd95(a, a, 1, {1, 1, 1}) == 0.0);

    LabelMap p({8, 4, 4}, {2, 1, 1});
    LabelMap q({8, 4, 4}, {2, 1, 1});
    p.at(1, 2, 2) = 1;
    q.at(4, 2, 2) = 1;  // 3 voxels apart along x, 2 mm spacing -> 6 mm
    CHECK(hd95(p, q, 1, {2, 1, 1}) == 6.0);
    CHECK(hd95(q, p, 1, {2, 1, 1}) == 6.0);
}

TEST_CASE("hd95 matches the brute-force oracle on random masks", "[metrics][oracle]") {
    for (std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
        const LabelMap a = random_labels({12, 12, 12}, seed * 5);
        const LabelMap b = random_labels({12, 12, 12}, seed * 5 + 1);
        const Vec3 spacing{1.5, 1.0, 2.0};
        for (std::int32_t l : {1, 2}) {
            const double got = hd95(a, b, l, spacing);
            const double expect = oracles::brute_hd95(a, b, l, spacing);
            CHECK(std::abs(got - expect) <= 1e-9);
            CHECK(hd95(b, a, l, spacing) == got);
        }
    }
}

TEST_CASE("hd95 equals the maximum when distances are uniform", "[metrics]") {
    // Two parallel full-grid planes: every pooled distance is 3 mm.
    LabelMap a({8, 6, 6}, {1, 1, 1});
    LabelMap b({8, 6, 6}, {1, 1, 1});
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 6; ++y) {
            a.at(2, y, z) = 1;
            b.at(5, y, z) = 1;
        }
    CHECK(hd95(a, b, 1, {1, 1, 1}) == 3.0);
}

TEST_CASE("hd95 rejects empty label sets", "[metrics]") {
    const LabelMap a = cube_mask({8, 8, 8}, 2, 2, 2, 3);
    LabelMap empty({8, 8, 8}, {1, 1, 1});
    CHECK_THROWS_WITH(hd95(a, empty, 1, {1, 1, 1}),
                      Catch::Matchers::ContainsSubstring("undefined HD95"));
}

TEST_CASE("sdlogj identities", "[metrics]") {
    const DisplacementField zero({8, 8, 8}, {1, 1, 1});
    const SdLogJResult z = sdlogj(zero);
    CHECK(z.sdlogj == 0.0);
    CHECK(z.folded_fraction == 0.0);

    // Uniform expansion u = 0.1 x: constant log-determinant.
    DisplacementField scale({8, 8, 8}, {1, 1, 1});
    for (int z2 = 0; z2 < 8; ++z2)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) scale.set(x, y, z2, {0.1 * x, 0.1 * y, 0.1 * z2});
    const SdLogJResult s = sdlogj(scale, /*interior_only=*/true);
    CHECK(s.sdlogj <= 1e-6);
    CHECK(s.folded_fraction == 0.0);
}

TEST_CASE("sdlogj matches an independent reimplementation", "[metrics][oracle]") {
    const DisplacementField f = make_smooth_field({16, 16, 16}, 2.0, 4.0, 303);
    const SdLogJResult got = sdlogj(f);
    const auto [sd, folded] = oracles::naive_sdlogj(f);
    CHECK(std::abs(got.sdlogj - sd) <= 1e-10);
    CHECK(got.folded_fraction == folded);
}

TEST_CASE("sdlogj is invariant under constant translations", "[metrics]") {
    const DisplacementField f = make_smooth_field({10, 10, 10}, 1.5, 3.0, 305);
    DisplacementField shifted = f;
    for (std::size_t i = 0; i < shifted.data.size(); i += 3) {
        shifted.data[i] += 4.5;
        shifted.data[i + 1] -= 2.0;
        shifted.data[i + 2] += 0.75;
    }
    const SdLogJResult a = sdlogj(f);
    const SdLogJResult b = sdlogj(shifted);
    // The shifted components re-round, so invariance holds to rounding only.
    CHECK(std::abs(a.sdlogj - b.sdlogj) <= 1e-12);
    CHECK(a.folded_fraction == b.folded_fraction);
}

TEST_CASE("sdlogj reports folding and rejects fully folded fields", "[metrics]") {
    // u = -2x collapses the x axis: det = -1 everywhere.
    DisplacementField f({6, 6, 6}, {1, 1, 1});
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) f.set(x, y, z, {-2.0 * x, 0.0, 0.0});
    CHECK_THROWS_AS(sdlogj(f), numeric_error);
}

TEST_CASE("evaluate composes warping and the metrics", "[metrics]") {
    const LabelMap labels = cube_mask({10, 10, 10}, 3, 3, 3, 3);
    const DisplacementField zero(labels.dims, labels.spacing);
    const MetricsReport identity = evaluate(labels, labels, zero, {1, 1, 1});
    CHECK(identity.dice_mean == 1.0);
    CHECK(identity.hd95_per_label.at(1) == 0.0);
    CHECK(identity.sdlogj == 0.0);
    CHECK(identity.folded_fraction == 0.0);

    // Pull-warp by -1 voxel moves the mask by +1: same overlap as the
    // hand-computed shifted-cube dice.
    const LabelMap a = cube_mask({10, 10, 10}, 3, 3, 3, 2);
    const LabelMap b = cube_mask({10, 10, 10}, 4, 3, 3, 2);
    const DisplacementField shift = make_translation_field(a.dims, {-1.0, 0.0, 0.0});
    const MetricsReport rep = evaluate(b, a, shift, {1, 1, 1});
    CHECK(rep.dice_per_label.at(1) == 1.0);

    const MetricsReport misaligned = evaluate(b, a, DisplacementField(a.dims, a.spacing), {1, 1, 1});
    CHECK(misaligned.dice_per_label.at(1) == 0.5);
}

TEST_CASE("evaluate requires a shared label set", "[metrics]") {
    const LabelMap a = cube_mask({8, 8, 8}, 2, 2, 2, 2, 1);
    const LabelMap b = cube_mask({8, 8, 8}, 2, 2, 2, 2, 2);
    const DisplacementField zero(a.dims, a.spacing);
    CHECK_THROWS_WITH(evaluate(a, b, zero, {1, 1, 1}),
                      Catch::Matchers::ContainsSubstring("no common labels"));
}

TEST_CASE("metric functions reject shape mismatches", "[metrics]") {
    const LabelMap a = cube_mask({8, 8, 8}, 2, 2, 2, 2);
    const LabelMap b = cube_mask({9, 8, 8}, 2, 2, 2, 2);
    CHECK_THROWS_AS(dice(a, b, 1), std::invalid_argument);
    CHECK_THROWS_AS(hd95(a, b, 1, {1, 1, 1}), std::invalid_argument);
}
