// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exit code is the number of
// failed criteria.

#include "oracles.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <vector>

using namespace regttr;
using namespace testsup;

namespace {

struct Criterion {
    std::string name;
    std::function<bool(std::string&)> run;
};

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// --- 1. Gradient oracle ----------------------------------------------------

bool crit_gradient_oracle(std::string& detail) {
    const double t0 = now_s();
    double worst_rel = 0.0, worst_abs = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Volume fixed = make_noise_volume({8, 8, 8}, seed * 3 + 1, 1.0);
        const Volume moving = make_noise_volume({8, 8, 8}, seed * 3 + 2, 1.0);
        const DisplacementField field = offcell_field({8, 8, 8}, seed * 3 + 3);
        LossOptions opts;
        opts.ncc_window = 5;
        opts.ssim_window = 5;
        const auto [bd, analytic] = hybrid_loss_grad(fixed, moving, field, {}, opts);
        const GradField fd = finite_diff_grad(fixed, moving, field, {}, opts, 1e-3);
        const GradCompare cmp = compare_grads(analytic, fd);
        worst_rel = std::max(worst_rel, cmp.max_rel);
        worst_abs = std::max(worst_abs, cmp.max_abs);
    }
    const double elapsed = now_s() - t0;
    std::ostringstream os;
    os << "max_rel=" << worst_rel << " max_abs=" << worst_abs << " elapsed=" << elapsed << "s";
    detail = os.str();
    return worst_rel <= 1e-3 && worst_abs <= 1e-6 && elapsed < 30.0;
}

// --- 2. Loss identities ----------------------------------------------------

bool crit_loss_identities(std::string& detail) {
    const Volume img = make_noise_volume({12, 12, 12}, 77);
    const DisplacementField zero(img.dims, img.spacing);
    LossOptions opts;
    opts.ncc_window = 9;
    opts.ssim_window = 7;
    const double ncc = detail::ncc_on_warped(img, img, opts.ncc_window, opts.ncc_eps, nullptr);
    const double ssim = detail::ssim_on_warped(img, img, opts.ssim_window, {}, nullptr);
    const auto [smooth, sgrad] = smooth_loss_grad(zero);

    const Volume fixed = make_noise_volume({12, 12, 12}, 78);
    const Volume moving = make_noise_volume({12, 12, 12}, 79);
    const DisplacementField field = offcell_field({12, 12, 12}, 80, 0.3);
    const auto [full, g1] = hybrid_loss_grad(fixed, moving, field, {1.0, 2.0, 1.0}, opts);
    const auto [ablated, g2] = hybrid_loss_grad(fixed, moving, field, {1.0, 0.0, 1.0}, opts);

    std::ostringstream os;
    os << "ncc=" << ncc << " ssim=" << ssim << " smooth=" << smooth
       << " ablation_bits_match=" << (full.ncc == ablated.ncc && full.smooth == ablated.smooth);
    detail = os.str();
    return ncc >= 0.0 && ncc <= 1e-4 && ssim == 0.0 && smooth == 0.0 &&
           full.ncc == ablated.ncc && full.smooth == ablated.smooth && ablated.ssim == 0.0;
}

// --- 3. Warp and Jacobian identities ----------------------------------------

bool crit_warp_jacobian(std::string& detail) {
    const Volume m = make_noise_volume({10, 10, 10}, 31);
    const DisplacementField zero(m.dims, m.spacing);
    const bool warp_identity = bits_equal(warp(m, zero).data, m.data);

    DisplacementField lin({8, 8, 8}, {1, 1, 1});
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) lin.set(x, y, z, {0.1 * x, 0.1 * y, 0.1 * z});
    const Volume det = jacobian_determinant(lin);
    double max_err = 0.0;
    for (int z = 1; z < 7; ++z)
        for (int y = 1; y < 7; ++y)
            for (int x = 1; x < 7; ++x)
                max_err = std::max(max_err, std::abs(det.at(x, y, z) - 1.331));

    const DisplacementField t = make_translation_field({8, 8, 8}, {1.5, -2.0, 0.25});
    bool translation_unit = true;
    for (double d : jacobian_determinant(t).data) translation_unit &= (d == 1.0);

    std::ostringstream os;
    os << "warp_identity=" << warp_identity << " interior_det_err=" << max_err
       << " translation_unit=" << translation_unit;
    detail = os.str();
    return warp_identity && max_err <= 1e-6 && translation_unit;
}

// --- 4. Metric oracles -------------------------------------------------------

LabelMap acceptance_labels(Dims3 dims, std::uint64_t seed) {
    LabelMap m(dims, {1, 1, 1});
    const Volume n = make_noise_volume(dims, seed, 1.2);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        if (n.data[i] >= 0.50 && n.data[i] < 0.68) m.data[i] = 1;
        else if (n.data[i] >= 0.68 && n.data[i] < 0.86) m.data[i] = 2;
    }
    return m;
}

bool crit_metric_oracles(std::string& detail) {
    double max_dice_err = 0.0, max_hd_err = 0.0, max_sd_err = 0.0;
    for (std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
        const LabelMap a = acceptance_labels({12, 12, 12}, seed * 5);
        const LabelMap b = acceptance_labels({12, 12, 12}, seed * 5 + 1);
        const Vec3 spacing{1.5, 1.0, 2.0};
        for (std::int32_t l : {1, 2}) {
            max_dice_err =
                std::max(max_dice_err, std::abs(dice(a, b, l) - oracles::brute_dice(a, b, l)));
            max_hd_err = std::max(
                max_hd_err, std::abs(hd95(a, b, l, spacing) - oracles::brute_hd95(a, b, l, spacing)));
        }
        const DisplacementField f = make_smooth_field({12, 12, 12}, 1.5, 3.0, seed);
        const auto [sd, folded] = oracles::naive_sdlogj(f);
        const SdLogJResult got = sdlogj(f);
        max_sd_err = std::max(max_sd_err, std::abs(got.sdlogj - sd));
    }

    // Hand examples: unit-shifted cube and the 6 mm two-voxel case.
    LabelMap ca({8, 8, 8}, {1, 1, 1}), cb({8, 8, 8}, {1, 1, 1});
    for (int z = 2; z < 4; ++z)
        for (int y = 2; y < 4; ++y)
            for (int x = 2; x < 4; ++x) {
                ca.at(x, y, z) = 1;
                cb.at(x + 1, y, z) = 1;
            }
    const double shifted_dice = dice(ca, cb, 1);

    LabelMap p({8, 4, 4}, {2, 1, 1}), q({8, 4, 4}, {2, 1, 1});
    p.at(1, 2, 2) = 1;
    q.at(4, 2, 2) = 1;
    const double two_voxel_hd = hd95(p, q, 1, {2, 1, 1});

    std::ostringstream os;
    os << "dice_err=" << max_dice_err << " hd95_err=" << max_hd_err << " sdlogj_err=" << max_sd_err
       << " shifted_dice=" << shifted_dice << " hd95_6mm=" << two_voxel_hd;
    detail = os.str();
    return max_dice_err <= 1e-9 && max_hd_err <= 1e-9 && max_sd_err <= 1e-9 &&
           shifted_dice == 0.5 && two_voxel_hd == 6.0;
}

// --- 5. Early stopping --------------------------------------------------------

bool crit_early_stopping(std::string& detail) {
    const Volume fixed = make_noise_volume({10, 10, 10}, 41);
    const Volume moving = make_noise_volume({10, 10, 10}, 42);
    const DisplacementField init = make_smooth_field({10, 10, 10}, 0.75, 3.0, 43);
    TtrConfig cfg;
    cfg.lr = 0.0;
    cfg.max_iters = 50;
    cfg.ncc_window = 7;
    cfg.ssim_window = 5;
    const RefineResult res = refine(fixed, moving, init, cfg);
    std::ostringstream os;
    os << "iters_run=" << res.iters_run << " stop=" << to_string(res.stop_reason)
       << " field_is_init=" << bits_equal(res.field.data, init.data);
    detail = os.str();
    return res.stop_reason == StopReason::early_stop && res.iters_run == 3 &&
           res.loss_trace.size() == 4 && bits_equal(res.field.data, init.data);
}

// --- 6/7/8. Synthetic fixtures -------------------------------------------------
//
// All fixtures are 16^3 sphere phantoms deformed by fold-free amplitude-2
// smooth fields. Seeds are frozen: 2032 gives a cold-start task with a
// substantial initial label misalignment; 2022 (warm-started from a
// perturbed ground truth) exhibits the improve-then-degrade sweep shape
// because the regularized optimum is offset from the generating field.

constexpr std::uint64_t kRecoverySeed = 2032;
constexpr std::uint64_t kSweepSeed = 2022;
constexpr std::uint64_t kWarmSeedBase = 2025;

TtrConfig recovery_config(int iters) {
    TtrConfig cfg;
    cfg.max_iters = iters;
    cfg.patience = iters;  // patience disabled for the full sweep
    cfg.lr = 0.1;
    cfg.ncc_window = 9;
    cfg.ssim_window = 7;
    return cfg;
}

bool crit_synthetic_recovery(std::string& detail) {
    const double t0 = now_s();
    const SynthTask task = make_task({16, 16, 16}, kRecoverySeed, 2.0, 4.0);
    const DisplacementField zero(task.fixed.dims, task.fixed.spacing);
    const RefineResult res = refine(task.fixed, task.moving, zero, recovery_config(200));

    const double mee = foreground_mee(res.field, task.gt, task.fixed_labels);
    double dice_init = 0.0, dice_final = 0.0;
    int labels = 0;
    for (std::int32_t l : task.moving_labels.label_set()) {
        if (l == 0) continue;
        ++labels;
        dice_init += dice(task.fixed_labels, task.moving_labels, l);
        dice_final += dice(task.fixed_labels, warp_labels(task.moving_labels, res.field), l);
    }
    dice_init /= labels;
    dice_final /= labels;
    const double elapsed = now_s() - t0;

    std::ostringstream os;
    os << "mee=" << mee << " dice_init=" << dice_init << " dice_final=" << dice_final
       << " elapsed=" << elapsed << "s";
    detail = os.str();
    return mee <= 0.5 && dice_final >= dice_init + 0.15 && elapsed < 60.0;
}

bool crit_iteration_sweep_shape(std::string& detail) {
    const SynthTask task = make_task({16, 16, 16}, kSweepSeed, 2.0, 4.0);
    DisplacementField init = task.gt;
    SplitMix64 rng(kSweepSeed * 1313 + 7);
    for (double& v : init.data) v += rng.uniform(-0.3, 0.3);

    std::vector<double> errors;
    refine(task.fixed, task.moving, init, recovery_config(100),
           [&](int, const LossBreakdown&, const DisplacementField& f) {
               errors.push_back(foreground_mee(f, task.gt, task.fixed_labels));
           });
    // First iteration attaining the minimum error.
    std::size_t best = 0;
    for (std::size_t i = 1; i < errors.size(); ++i)
        if (errors[i] < errors[best]) best = i;
    const double err_last = errors.back();
    std::ostringstream os;
    os << "best_iter=" << best << " init_err=" << errors[0] << " best_err=" << errors[best]
       << " err_at_100=" << err_last;
    detail = os.str();
    return best < errors.size() - 1 && err_last >= errors[best];
}

bool crit_warm_start(std::string& detail) {
    int ok = 0;
    std::ostringstream os;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const SynthTask task = make_task({16, 16, 16}, kWarmSeedBase + seed, 2.0, 4.0);
        DisplacementField init = task.gt;
        SplitMix64 rng(seed * 31 + 5);
        for (double& v : init.data) v += rng.uniform(-0.25, 0.25);
        TtrConfig cfg;
        cfg.max_iters = 50;
        cfg.patience = 3;
        cfg.ncc_window = 9;
        cfg.ssim_window = 7;
        const WarmColdReport rep = warm_vs_cold_report(task.fixed, task.moving, init, cfg);
        const bool pass =
            !rep.cold_reached || rep.warm_iters_to_final <= rep.cold_iters_to_warm_final;
        ok += pass;
        os << (seed > 1 ? " " : "") << "s" << seed << ":warm=" << rep.warm_iters_to_final
           << ",cold=" << (rep.cold_reached ? std::to_string(rep.cold_iters_to_warm_final) : "inf");
    }
    detail = os.str();
    return ok == 5;
}

// --- 9. Performance -------------------------------------------------------------

bool crit_performance(std::string& detail) {
    PhantomSpec spec;
    spec.dims = {64, 64, 64};
    spec.kind = PhantomKind::spheres;
    spec.num_objects = 4;
    spec.seed = 64;
    auto [moving, labels] = make_phantom(spec);
    const DisplacementField gt = make_smooth_field(spec.dims, 3.0, 8.0, 65);
    const Volume fixed = warp(moving, gt);

    set_max_threads(1);
    TtrConfig cfg;
    cfg.max_iters = 10;
    cfg.patience = 10;
    const RefineResult res =
        refine(fixed, moving, DisplacementField(spec.dims, {1, 1, 1}), cfg);
    std::ostringstream os;
    os << "wall_time_s=" << res.wall_time_s << " iters=" << res.iters_run;
    detail = os.str();
    return res.iters_run == 10 && res.wall_time_s < 10.0;
}

// --- 10. Determinism --------------------------------------------------------------

bool crit_determinism(std::string& detail) {
    const SynthTask task = make_task({12, 12, 12}, 555, 1.5, 3.0);
    TtrConfig cfg;
    cfg.max_iters = 8;
    cfg.patience = 8;
    cfg.ncc_window = 7;
    cfg.ssim_window = 5;
    const DisplacementField zero(task.fixed.dims, task.fixed.spacing);

    set_max_threads(1);
    const RefineResult a = refine(task.fixed, task.moving, zero, cfg);
    const RefineResult b = refine(task.fixed, task.moving, zero, cfg);
    set_max_threads(4);
    const RefineResult c = refine(task.fixed, task.moving, zero, cfg);
    set_max_threads(1);

    bool traces_equal = a.loss_trace.size() == b.loss_trace.size() &&
                        a.loss_trace.size() == c.loss_trace.size();
    if (traces_equal)
        for (std::size_t i = 0; i < a.loss_trace.size(); ++i)
            traces_equal &= a.loss_trace[i].total == b.loss_trace[i].total &&
                            a.loss_trace[i].total == c.loss_trace[i].total &&
                            a.loss_trace[i].ncc == c.loss_trace[i].ncc &&
                            a.loss_trace[i].ssim == c.loss_trace[i].ssim &&
                            a.loss_trace[i].smooth == c.loss_trace[i].smooth;
    const bool fields_equal =
        bits_equal(a.field.data, b.field.data) && bits_equal(a.field.data, c.field.data);

    // File-level determinism of the written artifacts.
    const auto dir = temp_dir("acceptance_det");
    write_field(a.field, dir / "a.mha");
    write_field(c.field, dir / "c.mha");
    write_volume(warp(task.moving, a.field), dir / "aw.mha");
    write_volume(warp(task.moving, c.field), dir / "cw.mha");
    const bool files_equal =
        slurp(dir / "a.mha") == slurp(dir / "c.mha") && slurp(dir / "aw.mha") == slurp(dir / "cw.mha");

    std::ostringstream os;
    os << "traces_equal=" << traces_equal << " fields_equal=" << fields_equal
       << " files_equal=" << files_equal;
    detail = os.str();
    return traces_equal && fields_equal && files_equal;
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"gradient oracle (10 seeded 8^3 instances, rel<=1e-3)", crit_gradient_oracle},
        {"loss identities (aligned NCC<=1e-4, SSIM==0, smooth==0, ablation bits)",
         crit_loss_identities},
        {"warp/Jacobian identities (identity warp, det 1.331, translation det 1)",
         crit_warp_jacobian},
        {"metric oracles (Dice/HD95/SDlogJ vs brute force <=1e-9, hand values)",
         crit_metric_oracles},
        {"early stopping exactness (lr=0 stops after patience=3, returns init)",
         crit_early_stopping},
        {"synthetic recovery (MEE<=0.5 voxels, Dice gain>=0.15)", crit_synthetic_recovery},
        {"iteration sweep shape (best error before iter 100, no late gain)",
         crit_iteration_sweep_shape},
        {"warm-start efficiency (warm iters <= cold iters on 5 fixtures)", crit_warm_start},
        {"performance (10 iterations on 64^3 in < 10 s, single thread)", crit_performance},
        {"determinism (identical traces/fields/files across runs and threads)",
         crit_determinism},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        std::string detail;
        bool ok = false;
        try {
            ok = criteria[i].run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] criterion %zu: %s (%s)\n", ok ? "PASS" : "FAIL", i + 1,
                    criteria[i].name.c_str(), detail.c_str());
        std::fflush(stdout);
        failures += !ok;
    }
    if (failures == 0) std::printf("all %zu acceptance criteria passed\n", criteria.size());
    else std::printf("%d acceptance criteria FAILED\n", failures);
    return failures;
}
