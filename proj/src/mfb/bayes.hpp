#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "loss.hpp"
#include "rng.hpp"

namespace mfb {

// Posterior over network parameters: Gaussian HF likelihood, a residual
// pseudo-likelihood at collocation points, and a zero-mean Gaussian prior on
// all weights and biases. sigma_hf can instead be learned (log-sigma is then
// appended to the sampled vector under a half-normal(1) hyperprior).
struct BayesConfig {
    double tau = 1.0;
    double sigma_hf = 0.05;
    bool learn_sigma_hf = false;
    double sigma_r = 0.01;
    int chains = 4;
    int warmup = 500;
    int draws = 500;
    int leapfrog = 32;
    double step_size = 0.05; // initial; adapted during warmup
    int subsample = 0;       // interior points per trajectory; 0 = all
    uint64_t seed = 0;

    void validate() const;
};

struct PosteriorEnsemble {
    int n_chains = 0;
    int n_draws = 0; // per chain, post-warmup
    int dim = 0;
    std::vector<double> samples; // [chain][draw][dim], row-major
    std::vector<double> logp;    // [chain][draw]
    std::vector<double> accept_rate;  // per chain
    std::vector<double> step_size;    // adapted, per chain
    std::vector<double> ess_logp;     // per chain
    std::vector<int> divergences;     // post-warmup, per chain
    std::vector<bool> accept_healthy; // rate in (0.4, 0.95)

    std::span<const double> draw(int chain, int i) const {
        return {samples.data() + (size_t(chain) * n_draws + i) * dim, size_t(dim)};
    }
    std::span<const double> chain_logp(int chain) const {
        return {logp.data() + size_t(chain) * n_draws, size_t(n_draws)};
    }
    int total_draws() const { return n_chains * n_draws; }
};

struct PredictiveSummary {
    int out_dim = 1;
    // one entry per (point, component), component fastest
    std::vector<double> mean, total_var, aleatoric_var, epistemic_var, lower, upper;
    bool interval_warning = false; // fewer than 50 draws backing the percentiles

    size_t size() const { return mean.size(); }
};

struct CalibrationReport {
    double coverage_at_95 = 0; // percent
    double ece = 0;            // mean |empirical - nominal| over levels 5%..95%
    int n_points = 0;
};

/// log p(theta | data) and its gradient. `theta` holds the network parameters
/// (plus log sigma_hf last when learned). Null dataset/collocation pointers
/// drop those likelihood terms. Throws NumericError if logp is non-finite.
double log_posterior(std::span<const double> theta, std::span<double> grad,
                     const MfModel& model_template, const PdeProblem& prob, const Dataset* hf,
                     const CollocationSet* colloc, const BayesConfig& config);

// Reusable target bound to data; HMC-facing variant maps non-finite logp to
// -inf instead of throwing so trajectories can diverge gracefully.
class PosteriorTarget {
  public:
    PosteriorTarget(const MfModel& model_template, const PdeProblem& prob, const Dataset* hf,
                    const CollocationSet* colloc, const BayesConfig& config);

    int dim() const;
    std::vector<double> init_theta() const; // model params (+ log sigma_hf)
    double logp_grad(std::span<const double> theta, std::span<double> grad);
    /// Redraws the frozen interior subsample for the next trajectory.
    void refresh(Rng& rng);

    const MfModel& model() const { return model_; }

  private:
    MfModel model_;
    const PdeProblem& prob_;
    const Dataset* hf_;
    const CollocationSet* colloc_;
    BayesConfig cfg_;
    CollocationSet active_; // interior-only working set (full or current subsample)
    std::vector<double> buf_;
};

using TargetFn = std::function<double(std::span<const double>, std::span<double>)>;
using TargetRefresh = std::function<void(Rng&)>;

/// One leapfrog trajectory of `steps` steps with diagonal inverse mass
/// `inv_mass` (empty = identity); x, p, and grad are updated in place.
/// grad must hold the gradient at x on entry and holds the gradient at the
/// final x on exit. Returns logp at the final point.
double leapfrog(std::span<double> x, std::span<double> p, std::span<double> grad, double eps,
                int steps, const TargetFn& target, std::span<const double> inv_mass);

/// HMC with Metropolis correction, dual-averaging step-size adaptation to
/// 0.75 target acceptance, and a diagonal mass matrix estimated from the
/// second half of warmup. The per-trajectory step is jittered +-10% around
/// the adapted value to break periodic orbits. Chains use RNG streams
/// (seed, chain) and run sequentially; results are deterministic per seed.
/// `refresh` (optional) fires before every trajectory with the chain's RNG.
/// Throws SamplerHealthError when >10% of any chain's post-warmup
/// trajectories diverge (energy error > 1000 or non-finite).
PosteriorEnsemble hmc_sample(std::span<const double> init, const TargetFn& target,
                             const BayesConfig& config, const TargetRefresh& refresh = {});

/// Monte Carlo predictive statistics over the ensemble at `query` points
/// (rows hold coords then mu). Epistemic = sample variance of the per-draw
/// means; aleatoric = sigma_hf^2 (or E[sigma^2] over draws when learned);
/// total = their exact sum. Intervals are empirical 2.5/97.5 percentiles of
/// the draws widened by the observation noise quantile.
PredictiveSummary predictive_summary(const PosteriorEnsemble& ensemble,
                                     const MfModel& model_template, const Points& query,
                                     double sigma_hf);

/// Coverage of the 95% intervals plus expected calibration error over the
/// nominal levels {5%, 15%, ..., 95%} using Gaussian(mean, total_var)
/// intervals. truth holds one value per (point, component).
CalibrationReport calibration_report(const PredictiveSummary& summary,
                                     std::span<const double> truth);

/// Effective sample size of a scalar chain via Geyer's initial positive
/// sequence estimator.
double effective_sample_size(std::span<const double> series);

/// Standard normal quantile (Acklam's rational approximation, |rel err| < 1.2e-9).
double normal_quantile(double p);

/// Columnar (chain, draw, log_posterior) table next to a binary parameter
/// block: magic "MFBE", u32 version 1, u64 n_draws, u64 n_params, then
/// row-major little-endian doubles, draws ordered (chain, draw).
void write_ensemble(const PosteriorEnsemble& ensemble, const std::string& csv_path,
                    const std::string& bin_path);
PosteriorEnsemble read_ensemble(const std::string& csv_path, const std::string& bin_path);

/// Columnar per-point table: coords, mu, then per-component summary columns.
void write_predictive_summary(const PredictiveSummary& summary, const Points& query,
                              const std::string& path);

} // namespace mfb
