// regttr command-line tool: test-time refinement of displacement fields,
// warping, evaluation metrics, synthetic data generation and gradient
// checking. File I/O uses the MetaImage subset; reports are JSON.
//
// Exit codes: 0 success, 2 invalid input (I/O, shapes, flags),
// 3 numerical failure (non-finite loss at iteration 0).

#include "regttr/regttr.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

using nlohmann::json;
using namespace regttr;

json breakdown_to_json(const LossBreakdown& bd) {
    return json{{"total", bd.total}, {"ncc", bd.ncc}, {"ssim", bd.ssim}, {"smooth", bd.smooth}};
}

json metrics_to_json(const MetricsReport& rep) {
    json dice_j = json::object();
    for (const auto& [label, d] : rep.dice_per_label) dice_j[std::to_string(label)] = d;
    json hd_j = json::object();
    for (const auto& [label, h] : rep.hd95_per_label) hd_j[std::to_string(label)] = h;
    return json{{"dice_per_label", dice_j},
                {"dice_mean", rep.dice_mean},
                {"hd95_per_label", hd_j},
                {"sdlogj", rep.sdlogj},
                {"folded_fraction", rep.folded_fraction}};
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

struct RefineArgs {
    std::string fixed, moving, init_field, fixed_labels, moving_labels;
    std::string out_field, out_warped, report;
    std::string preset = "custom";
    double lr = 0.1;
    int max_iters = 10;
    int patience = 3;
    double improvement_eps = 0.0;
    double lambda_ncc = 1.0, lambda_ssim = 2.0, lambda_smooth = 1.0;
    int ncc_window = 9, ssim_window = 7;
    int threads = 1;
    bool lr_explicit = false;
};

int cmd_refine(const RefineArgs& a) {
    set_max_threads(a.threads);

    double lr = a.lr;
    if (!a.lr_explicit) {
        if (a.preset == "abdomen") lr = 0.1;
        else if (a.preset == "cardiac") lr = 0.025;
    }

    const Volume fixed = read_volume(a.fixed);
    const Volume moving = read_volume(a.moving);
    DisplacementField init;
    if (!a.init_field.empty()) init = read_field(a.init_field);
    else init = DisplacementField(fixed.dims, fixed.spacing);  // cold start

    TtrConfig cfg;
    cfg.max_iters = a.max_iters;
    cfg.lr = lr;
    cfg.patience = a.patience;
    cfg.improvement_eps = a.improvement_eps;
    cfg.weights = LossWeights{a.lambda_ncc, a.lambda_ssim, a.lambda_smooth};
    cfg.ncc_window = a.ncc_window;
    cfg.ssim_window = a.ssim_window;

    const Volume nfixed = normalize_intensity(fixed);
    const Volume nmoving = normalize_intensity(moving);
    const RefineResult res = refine(nfixed, nmoving, init, cfg);

    if (!a.out_field.empty()) write_field(res.field, a.out_field);
    if (!a.out_warped.empty()) write_volume(warp(moving, res.field), a.out_warped);

    json report = {
        {"config",
         {{"preset", a.preset},
          {"lr", lr},
          {"max_iters", cfg.max_iters},
          {"patience", cfg.patience},
          {"improvement_eps", cfg.improvement_eps},
          {"lambda_ncc", cfg.weights.ncc},
          {"lambda_ssim", cfg.weights.ssim},
          {"lambda_smooth", cfg.weights.smooth},
          {"ncc_window", cfg.ncc_window},
          {"ssim_window", cfg.ssim_window},
          {"threads", a.threads}}},
        {"loss_trace", json::array()},
        {"stop_reason", to_string(res.stop_reason)},
        {"iters_run", res.iters_run},
        {"wall_time_s", res.wall_time_s},
    };
    for (const auto& bd : res.loss_trace) report["loss_trace"].push_back(breakdown_to_json(bd));

    if (!a.fixed_labels.empty() && !a.moving_labels.empty()) {
        const LabelMap fl = read_labels(a.fixed_labels);
        const LabelMap ml = read_labels(a.moving_labels);
        report["metrics"] = metrics_to_json(evaluate(fl, ml, res.field, fl.spacing));
    }
    if (!a.report.empty()) write_json(report, a.report);

    std::cout << "refine: iters=" << res.iters_run << " stop=" << to_string(res.stop_reason)
              << " best_total=" << res.best_total << " wall_time_s=" << res.wall_time_s << "\n";
    return 0;
}

struct WarpArgs {
    std::string moving, field, out_warped;
    int threads = 1;
};

int cmd_warp(const WarpArgs& a) {
    set_max_threads(a.threads);
    const Volume moving = read_volume(a.moving);
    const DisplacementField field = read_field(a.field);
    write_volume(warp(moving, field), a.out_warped);
    std::cout << "warp: wrote " << a.out_warped << "\n";
    return 0;
}

struct MetricsArgs {
    std::string fixed_labels, moving_labels, field, report;
    int threads = 1;
};

int cmd_metrics(const MetricsArgs& a) {
    set_max_threads(a.threads);
    const LabelMap fl = read_labels(a.fixed_labels);
    const LabelMap ml = read_labels(a.moving_labels);
    DisplacementField field;
    if (!a.field.empty()) field = read_field(a.field);
    else field = DisplacementField(fl.dims, fl.spacing);

    const MetricsReport rep = evaluate(fl, ml, field, fl.spacing);
    const json j = metrics_to_json(rep);
    if (!a.report.empty()) write_json(j, a.report);
    std::cout << "metrics: dice_mean=" << rep.dice_mean << " sdlogj=" << rep.sdlogj
              << " folded_fraction=" << rep.folded_fraction << "\n";
    return 0;
}

struct SynthArgs {
    std::uint64_t seed = 0;
    std::vector<int> dims{16};
    std::string kind = "spheres";
    int num_objects = 3;
    double amplitude = 2.0;
    double sigma = 4.0;
    std::vector<double> spacing{1.0, 1.0, 1.0};
    std::string out_image, out_labels, out_field, out_fixed, out_fixed_labels;
};

int cmd_synth(const SynthArgs& a) {
    Dims3 dims;
    if (a.dims.size() == 1) dims = {a.dims[0], a.dims[0], a.dims[0]};
    else if (a.dims.size() == 3) dims = {a.dims[0], a.dims[1], a.dims[2]};
    else throw std::invalid_argument("--dims takes 1 or 3 integers");
    if (a.spacing.size() != 3) throw std::invalid_argument("--spacing takes 3 values");
    const Vec3 spacing{a.spacing[0], a.spacing[1], a.spacing[2]};

    PhantomSpec spec;
    spec.dims = dims;
    spec.seed = a.seed;
    spec.num_objects = a.num_objects;
    spec.spacing = spacing;
    if (a.kind == "spheres") spec.kind = PhantomKind::spheres;
    else if (a.kind == "checker") spec.kind = PhantomKind::checker_smooth;
    else if (a.kind == "blobs") spec.kind = PhantomKind::gradient_blobs;
    else throw std::invalid_argument("--kind must be spheres, checker or blobs");

    const auto [image, labels] = make_phantom(spec);
    const DisplacementField gt = make_smooth_field(dims, a.amplitude, a.sigma, a.seed + 1, spacing);

    if (!a.out_image.empty()) write_volume(image, a.out_image);
    if (!a.out_labels.empty()) write_labels(labels, a.out_labels);
    if (!a.out_field.empty()) write_field(gt, a.out_field);
    // Convenience outputs: the phantom warped through the ground-truth
    // field, usable directly as the fixed image of a registration task.
    if (!a.out_fixed.empty()) write_volume(warp(image, gt), a.out_fixed);
    if (!a.out_fixed_labels.empty()) write_labels(warp_labels(labels, gt), a.out_fixed_labels);

    std::cout << "synth: dims=" << dims.x << "x" << dims.y << "x" << dims.z
              << " kind=" << a.kind << " seed=" << a.seed << "\n";
    return 0;
}

struct GradcheckArgs {
    std::uint64_t seed = 1;
    int dims = 8;
    double step = 1e-3;
    double lambda_ncc = 1.0, lambda_ssim = 2.0, lambda_smooth = 1.0;
    int ncc_window = 5, ssim_window = 5;
    double tolerance = 1e-3;
    std::string report;
    int threads = 1;
};

// Seeded instance with sampling points kept away from interpolation cell
// boundaries, where the trilinear interpolant is not differentiable and
// central differences would disagree with the one-sided analytic value.
void make_gradcheck_instance(std::uint64_t seed, int n, Volume& fixed, Volume& moving,
                             DisplacementField& field) {
    const Dims3 dims{n, n, n};
    fixed = make_noise_volume(dims, seed * 3 + 1, 1.0);
    moving = make_noise_volume(dims, seed * 3 + 2, 1.0);
    field = make_smooth_field(dims, 0.35, 2.0, seed * 3 + 3);
    for (std::size_t i = 0; i < field.data.size(); ++i) field.data[i] += 0.5;
}

struct GradcheckOutcome {
    double max_rel = 0.0;  // components with magnitude > 1e-6
    double max_abs = 0.0;  // remaining components
};

GradcheckOutcome compare_gradients(const GradField& analytic, const GradField& fd) {
    GradcheckOutcome out;
    for (std::size_t i = 0; i < analytic.data.size(); ++i) {
        const double ga = analytic.data[i], gf = fd.data[i];
        const double mag = std::max(std::abs(ga), std::abs(gf));
        const double err = std::abs(ga - gf);
        if (mag > 1e-6) out.max_rel = std::max(out.max_rel, err / mag);
        else out.max_abs = std::max(out.max_abs, err);
    }
    return out;
}

int cmd_gradcheck(const GradcheckArgs& a) {
    set_max_threads(a.threads);
    Volume fixed, moving;
    DisplacementField field;
    make_gradcheck_instance(a.seed, a.dims, fixed, moving, field);

    LossWeights w{a.lambda_ncc, a.lambda_ssim, a.lambda_smooth};
    LossOptions opts;
    opts.ncc_window = a.ncc_window;
    opts.ssim_window = a.ssim_window;

    const auto [bd, analytic] = hybrid_loss_grad(fixed, moving, field, w, opts);
    const GradField fd = finite_diff_grad(fixed, moving, field, w, opts, a.step);
    const GradcheckOutcome oc = compare_gradients(analytic, fd);

    const bool ok = oc.max_rel <= a.tolerance && oc.max_abs <= 1e-6;
    if (!a.report.empty()) {
        write_json(json{{"seed", a.seed},
                        {"dims", a.dims},
                        {"step", a.step},
                        {"total", bd.total},
                        {"max_rel_err", oc.max_rel},
                        {"max_abs_err_small", oc.max_abs},
                        {"tolerance", a.tolerance},
                        {"pass", ok}},
                   a.report);
    }
    std::cout << "gradcheck: seed=" << a.seed << " max_rel_err=" << oc.max_rel
              << " max_abs_err_small=" << oc.max_abs << " tolerance=" << a.tolerance << " "
              << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? 0 : 1;
}

void add_threads_option(CLI::App* cmd, int& threads) {
    cmd->add_option("--threads", threads, "Worker thread cap (output is invariant to it)")
        ->envname("REG_TTR_THREADS")
        ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Test-time refinement engine for deformable image registration"};
    app.require_subcommand(1);

    RefineArgs ra;
    CLI::App* refine_cmd =
        app.add_subcommand("refine", "Refine a displacement field against a fixed image");
    refine_cmd->add_option("--fixed", ra.fixed, "Fixed image (.mha/.mhd)")->required();
    refine_cmd->add_option("--moving", ra.moving, "Moving image (.mha/.mhd)")->required();
    refine_cmd->add_option("--init-field", ra.init_field,
                           "Initial displacement field (default: zero field, cold start)");
    refine_cmd->add_option("--fixed-labels", ra.fixed_labels, "Fixed label map (enables metrics)");
    refine_cmd->add_option("--moving-labels", ra.moving_labels, "Moving label map");
    refine_cmd->add_option("--out-field", ra.out_field, "Write the refined field here");
    refine_cmd->add_option("--out-warped", ra.out_warped, "Write the warped moving image here");
    refine_cmd->add_option("--report", ra.report, "Write the JSON run report here");
    refine_cmd->add_option("--preset", ra.preset, "Hyperparameter preset")
        ->check(CLI::IsMember({"abdomen", "cardiac", "custom"}));
    CLI::Option* lr_opt = refine_cmd->add_option("--lr", ra.lr, "Learning rate (overrides preset)");
    refine_cmd->add_option("--max-iters", ra.max_iters, "Maximum refinement iterations");
    refine_cmd->add_option("--patience", ra.patience, "Non-improving iterations before early stop");
    refine_cmd->add_option("--improvement-eps", ra.improvement_eps,
                           "Minimum decrease that counts as improvement");
    refine_cmd->add_option("--lambda-ncc", ra.lambda_ncc, "NCC weight");
    refine_cmd->add_option("--lambda-ssim", ra.lambda_ssim, "SSIM weight (0 disables the term)");
    refine_cmd->add_option("--lambda-smooth", ra.lambda_smooth, "Smoothness weight");
    refine_cmd->add_option("--ncc-window", ra.ncc_window, "NCC window (odd)");
    refine_cmd->add_option("--ssim-window", ra.ssim_window, "SSIM window (odd)");
    add_threads_option(refine_cmd, ra.threads);

    WarpArgs wa;
    CLI::App* warp_cmd = app.add_subcommand("warp", "Warp an image through a field");
    warp_cmd->add_option("--moving", wa.moving, "Image to warp")->required();
    warp_cmd->add_option("--init-field", wa.field, "Displacement field")->required();
    warp_cmd->add_option("--out-warped", wa.out_warped, "Output image")->required();
    add_threads_option(warp_cmd, wa.threads);

    MetricsArgs ma;
    CLI::App* metrics_cmd =
        app.add_subcommand("metrics", "Evaluate Dice / HD95 / SDlogJ for a field");
    metrics_cmd->add_option("--fixed-labels", ma.fixed_labels, "Fixed label map")->required();
    metrics_cmd->add_option("--moving-labels", ma.moving_labels, "Moving label map")->required();
    metrics_cmd->add_option("--init-field", ma.field, "Field (default: zero field)");
    metrics_cmd->add_option("--report", ma.report, "Write the JSON metrics report here");
    add_threads_option(metrics_cmd, ma.threads);

    SynthArgs sa;
    CLI::App* synth_cmd =
        app.add_subcommand("synth", "Generate a phantom, labels and a ground-truth field");
    synth_cmd->add_option("--seed", sa.seed, "Generator seed");
    synth_cmd->add_option("--dims", sa.dims, "Grid size, one or three integers")
        ->expected(1, 3);
    synth_cmd->add_option("--kind", sa.kind, "Phantom kind")
        ->check(CLI::IsMember({"spheres", "checker", "blobs"}));
    synth_cmd->add_option("--num-objects", sa.num_objects, "Number of labelled objects");
    synth_cmd->add_option("--amplitude", sa.amplitude, "Max field displacement, voxels");
    synth_cmd->add_option("--sigma", sa.sigma, "Field smoothness, voxels");
    synth_cmd->add_option("--spacing", sa.spacing, "Voxel spacing in mm")->expected(3);
    synth_cmd->add_option("--out-image", sa.out_image, "Write the phantom image here");
    synth_cmd->add_option("--out-labels", sa.out_labels, "Write the label map here");
    synth_cmd->add_option("--out-field", sa.out_field, "Write the ground-truth field here");
    synth_cmd->add_option("--out-fixed", sa.out_fixed, "Write the warped phantom here");
    synth_cmd->add_option("--out-fixed-labels", sa.out_fixed_labels,
                          "Write the warped label map here");

    GradcheckArgs ga;
    CLI::App* grad_cmd = app.add_subcommand(
        "gradcheck", "Verify the analytic hybrid gradient against finite differences");
    grad_cmd->add_option("--seed", ga.seed, "Instance seed");
    grad_cmd->add_option("--dims", ga.dims, "Cubic grid size");
    grad_cmd->add_option("--step", ga.step, "Finite-difference step, voxels");
    grad_cmd->add_option("--lambda-ncc", ga.lambda_ncc, "NCC weight");
    grad_cmd->add_option("--lambda-ssim", ga.lambda_ssim, "SSIM weight");
    grad_cmd->add_option("--lambda-smooth", ga.lambda_smooth, "Smoothness weight");
    grad_cmd->add_option("--ncc-window", ga.ncc_window, "NCC window (odd)");
    grad_cmd->add_option("--ssim-window", ga.ssim_window, "SSIM window (odd)");
    grad_cmd->add_option("--report", ga.report, "Write the JSON gradcheck report here");
    add_threads_option(grad_cmd, ga.threads);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (refine_cmd->parsed()) {
            ra.lr_explicit = lr_opt->count() > 0;
            return cmd_refine(ra);
        }
        if (warp_cmd->parsed()) return cmd_warp(wa);
        if (metrics_cmd->parsed()) return cmd_metrics(ma);
        if (synth_cmd->parsed()) return cmd_synth(sa);
        if (grad_cmd->parsed()) return cmd_gradcheck(ga);
    } catch (const regttr::numeric_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
