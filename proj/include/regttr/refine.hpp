#pragma once

// Test-time refinement loop: the displacement field is the learnable
// parameter, updated by Adam under the hybrid loss. The trace records the
// pre-update evaluation as iteration 0; early stopping fires once the total
// fails to improve for `patience` consecutive iterations, and the best-loss
// snapshot (never worse than the initial field) is returned.

#include "regttr/adam.hpp"
#include "regttr/core.hpp"
#include "regttr/loss.hpp"

#include <chrono>
#include <functional>
#include <string>
#include <vector>

namespace regttr {

struct TtrConfig {
    int max_iters = 10;
    double lr = 0.1;
    int patience = 3;
    double improvement_eps = 0.0;  // "improved" means total < best - improvement_eps
    LossWeights weights{};
    int ncc_window = 9;
    int ssim_window = 7;
    SsimConstants ssim_constants{};
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        require(max_iters > 0, "TtrConfig: max_iters must be positive");
        require(std::isfinite(lr) && lr >= 0.0, "TtrConfig: lr must be non-negative");
        require(patience > 0, "TtrConfig: patience must be positive");
        require(std::isfinite(improvement_eps) && improvement_eps >= 0.0,
                "TtrConfig: improvement_eps must be non-negative");
        weights.validate();
    }
    LossOptions loss_options() const {
        return LossOptions{ncc_window, ssim_window, ssim_constants, 1e-5};
    }
};

enum class StopReason { max_iters, early_stop };

inline const char* to_string(StopReason r) {
    return r == StopReason::max_iters ? "max_iters" : "early_stop";
}

struct RefineResult {
    DisplacementField field;               // best-loss snapshot
    std::vector<LossBreakdown> loss_trace; // entry 0 is the pre-update loss
    StopReason stop_reason = StopReason::max_iters;
    int iters_run = 0;                     // update steps applied
    double wall_time_s = 0.0;
    int best_iter = 0;                     // trace index of the snapshot
    double best_total = 0.0;
};

// Called after every loss evaluation with the current iterate.
using RefineObserver = std::function<void(int iter, const LossBreakdown&, const DisplacementField&)>;

inline RefineResult refine(const Volume& fixed, const Volume& moving,
                           const DisplacementField& init, const TtrConfig& cfg = {},
                           const RefineObserver& observer = {}) {
    require(fixed.dims == moving.dims && fixed.dims == init.dims, "refine: dims must match");
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const LossOptions opts = cfg.loss_options();

    DisplacementField field = init;
    auto [bd, grad] = hybrid_loss_grad(fixed, moving, field, cfg.weights, opts);
    if (!std::isfinite(bd.total))
        throw numeric_error("refine: non-finite loss at iteration 0");

    RefineResult res;
    res.loss_trace.push_back(bd);
    res.field = field;
    res.best_total = bd.total;
    res.best_iter = 0;
    if (observer) observer(0, bd, field);

    AdamState state(field.dims, field.spacing, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    int non_improving = 0;
    res.stop_reason = StopReason::max_iters;
    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        adam_step(state, field, grad, cfg.lr);
        std::tie(bd, grad) = hybrid_loss_grad(fixed, moving, field, cfg.weights, opts);
        if (!std::isfinite(bd.total)) {
            // Diverged mid-run; keep the best snapshot found so far.
            res.stop_reason = StopReason::early_stop;
            break;
        }
        res.loss_trace.push_back(bd);
        res.iters_run = iter;
        if (observer) observer(iter, bd, field);
        if (bd.total < res.best_total - cfg.improvement_eps) {
            res.best_total = bd.total;
            res.best_iter = iter;
            res.field = field;
            non_improving = 0;
        } else {
            ++non_improving;
        }
        if (non_improving >= cfg.patience) {
            res.stop_reason = StopReason::early_stop;
            break;
        }
    }
    res.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

// Warm (given init) versus cold (zero init) comparison: how many iterations
// each run needs to reach the warm run's final (best) loss.
struct WarmColdReport {
    RefineResult warm;
    RefineResult cold;
    double warm_final_total = 0.0;
    int warm_iters_to_final = 0;       // == warm best iteration
    bool cold_reached = false;
    int cold_iters_to_warm_final = -1; // -1 when never reached
};

inline WarmColdReport warm_vs_cold_report(const Volume& fixed, const Volume& moving,
                                          const DisplacementField& init,
                                          const TtrConfig& cfg = {}) {
    WarmColdReport rep;
    rep.warm = refine(fixed, moving, init, cfg);
    DisplacementField zero(init.dims, init.spacing);
    rep.cold = refine(fixed, moving, zero, cfg);
    rep.warm_final_total = rep.warm.best_total;
    rep.warm_iters_to_final = rep.warm.best_iter;
    for (std::size_t i = 0; i < rep.cold.loss_trace.size(); ++i) {
        if (rep.cold.loss_trace[i].total <= rep.warm_final_total) {
            rep.cold_reached = true;
            rep.cold_iters_to_warm_final = static_cast<int>(i);
            break;
        }
    }
    return rep;
}

}  // namespace regttr
