#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "loss.hpp"

namespace mfb {

struct StageSchedule {
    int epochs = 0;
    double lr = 1e-3;
};

// Staged protocol: (i) LF pre-train, (ii) MF Adam with cosine decay,
// (iii) full-batch L-BFGS refinement over a frozen collocation snapshot.
struct TrainConfig {
    StageSchedule lf_stage{5000, 1e-3};
    StageSchedule mf_stage{10000, 1e-3};
    double mf_lr_end = 1e-4;
    int lbfgs_iters = 500;
    int lbfgs_memory = 20;

    int batch_lf = 256;
    int batch_hf = 0; // <=0 means full batch
    int batch_interior = 256;
    int batch_boundary = 64;
    int batch_initial = 64;

    int n_interior = 2048;
    int n_boundary = 256;
    int n_initial = 256;
    int n_param_strata = 8;
    Sampling sampling = Sampling::Uniform;
    int resample_every = 500; // 0 disables resampling
    int balance_every = 100;  // 0 disables weight balancing

    // LF fine-tuning during stage (ii) runs at a reduced rate; set
    // freeze_lf to pin the LF block entirely.
    double lf_lr_scale = 0.1;
    bool freeze_lf = false;

    bool no_gating = false;
    bool no_lf_pretrain = false;
    bool no_residual = false;

    // Parameter value for the held-out MRE grid; NaN picks the benchmark
    // default (Burgers 0.01/pi, heat 1, Taylor-Green 100).
    double eval_mu = std::numeric_limits<double>::quiet_NaN();
    uint64_t seed = 0;
    LossWeights weights;

    void validate() const;
};

struct TrainReport {
    std::vector<LossBreakdown> history; // one row per optimizer step
    std::vector<double> lr_history;     // aligned with history
    std::vector<LossWeights> weight_history;
    std::vector<int> stage_starts;          // history offset where each stage begins
    std::vector<std::string> stage_names;   // aligned with stage_starts
    std::vector<std::vector<double>> stage_params; // snapshot at each stage end
    std::vector<double> final_params;
    double lf_time_s = 0, adam_time_s = 0, lbfgs_time_s = 0;
    double final_mre = std::numeric_limits<double>::quiet_NaN();
    LossWeights final_weights;
    int lbfgs_iters_done = 0;
    bool lbfgs_warning = false;
    std::string status = "max-iters"; // converged | max-iters | line-search
};

struct AdamState {
    std::vector<double> m, v;
    long long t = 0;

    explicit AdamState(size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam update, beta = (0.9, 0.999), eps = 1e-8. `lr_scale`
/// optionally rescales the step per parameter (empty = 1 everywhere; zero
/// entries leave the parameter bitwise unchanged).
void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state,
               double lr, std::span<const double> lr_scale = {});

/// Objective callback: returns loss and fills `grad` (same length as params).
using ObjectiveFn = std::function<double(std::span<const double>, std::span<double>)>;

struct LbfgsResult {
    std::vector<double> params;
    double loss = 0;
    double grad_norm = 0;
    int iters = 0;
    int n_evals = 0;
    bool converged = false;          // gradient norm <= 1e-8
    bool line_search_failed = false; // returned best-so-far early
};

/// Limited-memory BFGS with a strong-Wolfe line search (c1=1e-4, c2=0.9).
/// Loss is monotone non-increasing over accepted iterates; stops at gradient
/// norm <= 1e-8 or max_iters. `on_iter` (optional) fires after each accepted
/// step. A failed line search returns the best iterate seen with a flag.
LbfgsResult lbfgs_refine(std::span<const double> start, const ObjectiveFn& f, int max_iters,
                         int memory,
                         const std::function<void(int, double, double)>& on_iter = {});

/// Stage (i): Adam on the LF head alone; correlator and gate blocks are left
/// bitwise untouched. Throws TrainingError if the loss becomes non-finite.
TrainReport pretrain_lf(MfModel& model, const Dataset& lf, const TrainConfig& config);

/// Full staged protocol. Runs pretrain_lf first unless disabled, then the MF
/// Adam stage (mini-batches, weight balancing, optional residual-adaptive
/// resampling) and L-BFGS refinement on a fixed full-batch objective.
/// Null dataset pointers drop the matching loss terms.
TrainReport train_mf(MfModel& model, const PdeProblem& prob, const Dataset* lf,
                     const Dataset* hf, const TrainConfig& config);

/// Mean relative error |u - u*| / (max |u*| + 1e-12) against the oracle over
/// the benchmark evaluation grid (201x101 Burgers, 101x101 heat, 64x64x11
/// Taylor-Green), normalized per output component.
double evaluate_mre(const MfModel& model, const PdeProblem& prob, double mu);

/// Benchmark parameter used when TrainConfig::eval_mu is NaN.
double default_eval_mu(const PdeProblem& prob);

/// Columnar per-step log: epoch, stage, lr, loss terms, weights.
void write_training_log(const TrainReport& report, const std::string& path);

} // namespace mfb
