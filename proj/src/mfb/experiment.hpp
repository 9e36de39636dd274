#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bayes.hpp"
#include "solvers.hpp"
#include "train.hpp"

namespace mfb {

// One benchmark run end to end: reference solves, dataset generation, staged
// training, posterior sampling, and predictive evaluation, with every
// artifact written under a content-addressed directory.
struct ExperimentConfig {
    std::string name = "run";
    std::string problem = "heat"; // burgers | heat | taylor_green
    std::string preset = "desk";  // full | desk | mini
    std::string model = "mf";     // mf | hf-only

    std::vector<double> train_mu; // parameter values with training data
    std::vector<double> eval_mu;  // generalization scan; empty = problem range
    // Held-out parameter for the MRE/UQ evaluation; NaN picks the benchmark
    // default (Burgers 0.01/pi, heat 1, Taylor-Green 100).
    double predictive_mu = std::numeric_limits<double>::quiet_NaN();

    int lf_resolution = 32;
    int hf_resolution = 128;
    int n_lf = 512; // LF samples per training parameter value
    int n_hf = 100; // HF samples per training parameter value
    double hf_noise_sd = 0.0;
    int eval_points = 500;

    bool sample_posterior = true;
    std::vector<int> sweep_n_hf; // per-parameter HF budgets for `sweep`
    int sweep_seeds = 3;

    TrainConfig train;
    BayesConfig bayes;

    std::string outdir = "runs";
    uint64_t seed = 0;

    void validate() const;
};

/// Parses a schema-1 JSON config. Unknown fields anywhere are an error, as
/// are missing/foreign schema versions; absent fields keep their defaults.
ExperimentConfig config_from_json(const std::string& text);

/// Canonical serialization (sorted keys, 2-space indent); parsing it back
/// yields an equal config.
std::string config_to_json(const ExperimentConfig& config);

ExperimentConfig read_config(const std::string& path);

/// 16-hex-digit digest of the canonical serialization (seed included).
std::string config_hash(const ExperimentConfig& config);

/// <outdir>/<name>-<hash>; the MFB_OUT_ROOT environment variable overrides
/// outdir when set.
std::filesystem::path run_dir_for(const ExperimentConfig& config);

/// Upper bound on worker processes, from MFB_MAX_WORKERS (default 1).
int max_workers();

/// Classical reference solve of a benchmark at one parameter value:
/// Burgers MUSCL at nx = resolution, heat 5-point/CG on an n x n grid,
/// Taylor-Green tabulated on resolution^2 x max(4, resolution/4) nodes.
GridSolution solve_reference(const PdeProblem& prob, double mu, int resolution);

/// Concatenates per-parameter datasets; column names and dims must agree.
Dataset merge_datasets(std::span<const Dataset> parts);

/// n uniform points in the space-time box at fixed mu, labeled by the
/// oracle plus N(0, noise_sd^2) noise.
Dataset oracle_points(const PdeProblem& prob, double mu, int n, double noise_sd, uint64_t seed);

/// Mean relative error of an arbitrary field against the oracle on the
/// benchmark evaluation grid (the same grid evaluate_mre uses).
double field_mre(const FieldFn& field, const PdeProblem& prob, double mu);

struct RunResult {
    std::filesystem::path dir;
    std::vector<std::pair<std::string, double>> metrics; // as written to metrics.csv
};

/// Full pipeline into run_dir_for(config). metrics.csv holds only
/// seed-deterministic values so identical configs produce byte-identical
/// files; wall-clock numbers go to timings.csv.
RunResult run_experiment(const ExperimentConfig& config);
RunResult run_experiment_in(const ExperimentConfig& config, const std::filesystem::path& dir);

/// HF-budget sweep: for every n_hf in sweep_n_hf and every seed offset below
/// sweep_seeds, trains both the gated model and the single-net baseline on
/// identical data, then writes seed-averaged rows (n_hf, mre_mf, mre_hf, gap)
/// to sweep_metrics.csv. Returns the sweep directory.
std::filesystem::path run_sweep(const ExperimentConfig& config);

/// Regenerates plot source data from stored artifacts. Tags: fig1 (gate
/// coefficient histogram), fig2 (MRE over mu with an in-range flag), fig4
/// (cost-accuracy points for FD at three resolutions plus the trained
/// surrogate). Missing artifacts raise ConfigError naming the file.
void emit_plot_data(const std::filesystem::path& run_dir, const std::string& figure);

} // namespace mfb
