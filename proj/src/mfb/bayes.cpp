#include "bayes.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "errors.hpp"
#include "io.hpp"

namespace mfb {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
} // namespace

void BayesConfig::validate() const {
    if (!(tau > 0) || !std::isfinite(tau)) throw ConfigError("bayes: tau must be positive");
    if (!(sigma_hf > 0) || !std::isfinite(sigma_hf))
        throw ConfigError("bayes: sigma_hf must be positive");
    if (!(sigma_r > 0) || !std::isfinite(sigma_r))
        throw ConfigError("bayes: sigma_r must be positive");
    if (chains < 2) throw ConfigError("bayes: need at least 2 chains");
    if (warmup != 0 && warmup < 100)
        throw ConfigError("bayes: warmup must be 0 (no adaptation) or at least 100");
    if (draws < 1) throw ConfigError("bayes: draws must be positive");
    if (leapfrog < 1) throw ConfigError("bayes: leapfrog steps must be positive");
    if (!(step_size > 0) || !std::isfinite(step_size))
        throw ConfigError("bayes: step_size must be positive");
    if (subsample < 0) throw ConfigError("bayes: subsample must be nonnegative");
}

PosteriorTarget::PosteriorTarget(const MfModel& model_template, const PdeProblem& prob,
                                 const Dataset* hf, const CollocationSet* colloc,
                                 const BayesConfig& config)
    : model_(model_template), prob_(prob), hf_(hf), colloc_(colloc), cfg_(config) {
    cfg_.validate();
    if (model_.n_params() == 0) throw ContractError("PosteriorTarget: model has no parameters");
    if (colloc_ != nullptr) {
        if (cfg_.subsample > colloc_->interior.size())
            throw ConfigError("bayes: subsample exceeds the collocation count");
        active_.interior = colloc_->interior;
    }
    buf_.resize(model_.n_params());
}

int PosteriorTarget::dim() const {
    return int(model_.n_params()) + (cfg_.learn_sigma_hf ? 1 : 0);
}

std::vector<double> PosteriorTarget::init_theta() const {
    std::vector<double> t(model_.params.begin(), model_.params.end());
    if (cfg_.learn_sigma_hf) t.push_back(std::log(cfg_.sigma_hf));
    return t;
}

void PosteriorTarget::refresh(Rng& rng) {
    if (colloc_ == nullptr || cfg_.subsample <= 0 ||
        cfg_.subsample >= colloc_->interior.size())
        return;
    auto idx = rng.sample_without_replacement(colloc_->interior.size(), cfg_.subsample);
    std::sort(idx.begin(), idx.end());
    active_ = subset_collocation(*colloc_, idx, {}, {});
}

double PosteriorTarget::logp_grad(std::span<const double> theta, std::span<double> grad) {
    const size_t n = model_.n_params();
    if (int(theta.size()) != dim() || grad.size() != theta.size())
        throw ContractError("PosteriorTarget: theta/grad size mismatch");
    std::copy(theta.begin(), theta.begin() + n, model_.params.begin());
    std::fill(grad.begin(), grad.end(), 0.0);

    const double s = cfg_.learn_sigma_hf ? theta[n] : 0.0;
    const double sigma = cfg_.learn_sigma_hf ? std::exp(s) : cfg_.sigma_hf;

    double logp = 0;
    LossWeights unit;
    unit.lambda_hf = 1.0;
    unit.lambda_r = 1.0;

    try {
        if (hf_ != nullptr && hf_->size() > 0) {
            const double nc = double(hf_->size()) * hf_->out_dim;
            const LossBreakdown bd =
                composite_loss(model_, prob_, nullptr, hf_, nullptr, unit, buf_);
            const double sum_sq = bd.l_hf * nc; // l_hf is the mean over points and components
            const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
            logp -= sum_sq * inv2s2;
            for (size_t i = 0; i < n; ++i) grad[i] -= nc * inv2s2 * buf_[i];
            if (cfg_.learn_sigma_hf) {
                logp -= nc * s; // Gaussian normalization, needed once sigma varies
                grad[n] += sum_sq / (sigma * sigma) - nc;
            }
        }
        if (colloc_ != nullptr && active_.interior.size() > 0) {
            // the subsample mean estimates the full-set mean; scale by the full
            // count so the pseudo-likelihood strength is independent of the
            // subsample size
            const double nfull = double(colloc_->interior.size());
            const LossBreakdown bd =
                composite_loss(model_, prob_, nullptr, nullptr, &active_, unit, buf_);
            const double w = nfull / (2.0 * cfg_.sigma_r * cfg_.sigma_r);
            logp -= bd.l_residual * w;
            for (size_t i = 0; i < n; ++i) grad[i] -= w * buf_[i];
        }
    } catch (const NumericError&) {
        return -kInf;
    }

    const double inv_t2 = 1.0 / (cfg_.tau * cfg_.tau);
    for (size_t i = 0; i < n; ++i) {
        logp -= 0.5 * theta[i] * theta[i] * inv_t2;
        grad[i] -= theta[i] * inv_t2;
    }
    if (cfg_.learn_sigma_hf) {
        // half-normal(1) hyperprior on sigma plus the log-transform Jacobian
        logp += -0.5 * sigma * sigma + s;
        grad[n] += -sigma * sigma + 1.0;
    }

    if (!std::isfinite(logp)) return -kInf;
    for (double g : grad)
        if (!std::isfinite(g)) return -kInf;
    return logp;
}

double log_posterior(std::span<const double> theta, std::span<double> grad,
                     const MfModel& model_template, const PdeProblem& prob, const Dataset* hf,
                     const CollocationSet* colloc, const BayesConfig& config) {
    PosteriorTarget target(model_template, prob, hf, colloc, config);
    const double lp = target.logp_grad(theta, grad);
    if (!std::isfinite(lp)) throw NumericError("log_posterior", "non-finite log posterior");
    return lp;
}

double leapfrog(std::span<double> x, std::span<double> p, std::span<double> grad, double eps,
                int steps, const TargetFn& target, std::span<const double> inv_mass) {
    if (x.size() != p.size() || x.size() != grad.size())
        throw ContractError("leapfrog: buffer size mismatch");
    if (!inv_mass.empty() && inv_mass.size() != x.size())
        throw ContractError("leapfrog: inv_mass size mismatch");
    if (steps < 1) throw ContractError("leapfrog: need at least one step");
    const size_t d = x.size();
    double logp = -kInf;
    for (int s = 0; s < steps; ++s) {
        for (size_t i = 0; i < d; ++i) p[i] += 0.5 * eps * grad[i];
        for (size_t i = 0; i < d; ++i)
            x[i] += eps * (inv_mass.empty() ? 1.0 : inv_mass[i]) * p[i];
        logp = target(x, grad);
        if (!std::isfinite(logp)) return -kInf; // divergent; caller discards the state
        for (size_t i = 0; i < d; ++i) p[i] += 0.5 * eps * grad[i];
    }
    return logp;
}

namespace {

// Nesterov dual averaging of log eps (Hoffman & Gelman constants).
struct DualAvg {
    double mu = 0, log_eps = 0, log_eps_bar = 0, hbar = 0;
    int t = 0;

    void reset(double eps) {
        mu = std::log(10.0 * eps);
        log_eps = std::log(eps);
        log_eps_bar = std::log(eps);
        hbar = 0;
        t = 0;
    }
    double update(double alpha) {
        ++t;
        const double w = 1.0 / (t + 10.0);
        hbar = (1.0 - w) * hbar + w * (0.75 - alpha);
        log_eps = mu - std::sqrt(double(t)) / 0.05 * hbar;
        const double wt = std::pow(double(t), -0.75);
        log_eps_bar = wt * log_eps + (1.0 - wt) * log_eps_bar;
        return std::exp(log_eps);
    }
};

double kinetic(std::span<const double> p, std::span<const double> inv_mass) {
    double k = 0;
    for (size_t i = 0; i < p.size(); ++i)
        k += 0.5 * (inv_mass.empty() ? 1.0 : inv_mass[i]) * p[i] * p[i];
    return k;
}

} // namespace

PosteriorEnsemble hmc_sample(std::span<const double> init, const TargetFn& target,
                             const BayesConfig& config, const TargetRefresh& refresh) {
    config.validate();
    const int d = int(init.size());
    if (d == 0) throw ContractError("hmc_sample: empty initial point");
    if (!target) throw ContractError("hmc_sample: null target");

    PosteriorEnsemble ens;
    ens.n_chains = config.chains;
    ens.n_draws = config.draws;
    ens.dim = d;
    ens.samples.assign(size_t(config.chains) * config.draws * d, 0.0);
    ens.logp.assign(size_t(config.chains) * config.draws, 0.0);
    ens.accept_rate.resize(config.chains);
    ens.step_size.resize(config.chains);
    ens.ess_logp.resize(config.chains);
    ens.divergences.assign(config.chains, 0);
    ens.accept_healthy.assign(config.chains, false);

    const int warm = config.warmup;
    // mass matrix from the second half of warmup, leaving the last fifth to
    // re-adapt the step size under the new metric
    const int collect_lo = warm / 2;
    const int collect_hi = warm - warm / 5;

    for (int c = 0; c < config.chains; ++c) {
        Rng rng(config.seed, uint64_t(c));
        std::vector<double> x(init.begin(), init.end());
        std::vector<double> grad(d), xn(d), pn(d), gn(d);
        std::vector<double> inv_mass;               // empty = identity
        std::vector<double> wmean(d, 0.0), wm2(d, 0.0);
        int wn = 0;

        if (refresh) refresh(rng);
        double cur_logp = target(x, grad);
        if (!std::isfinite(cur_logp))
            throw NumericError("hmc_sample", "non-finite log posterior at the initial point");

        double eps = config.step_size;
        DualAvg da;
        da.reset(eps);

        int accepted = 0, divergent = 0;
        const int total = warm + config.draws;
        for (int it = 0; it < total; ++it) {
            if (refresh && it > 0) {
                refresh(rng); // frozen for the whole trajectory below
                cur_logp = target(x, grad);
                if (!std::isfinite(cur_logp))
                    throw NumericError("hmc_sample", "non-finite log posterior after refresh");
            }

            // +-10% step jitter per trajectory so near-periodic orbits of
            // close-to-Gaussian targets cannot trap the chain
            const double eps_t = eps * (0.9 + 0.2 * rng.uniform());
            for (int i = 0; i < d; ++i) {
                const double mi = inv_mass.empty() ? 1.0 : inv_mass[i];
                pn[i] = rng.normal() / std::sqrt(mi);
            }
            const double h_old = -cur_logp + kinetic(pn, inv_mass);

            std::copy(x.begin(), x.end(), xn.begin());
            std::copy(grad.begin(), grad.end(), gn.begin());
            const double new_logp =
                leapfrog(xn, pn, gn, eps_t, config.leapfrog, target, inv_mass);
            const double dh = std::isfinite(new_logp)
                                  ? (-new_logp + kinetic(pn, inv_mass)) - h_old
                                  : kInf;
            const bool div = !std::isfinite(dh) || dh > 1000.0;
            const double alpha = div ? 0.0 : std::min(1.0, std::exp(-dh));
            if (!div && rng.uniform() < alpha) {
                x.swap(xn);
                grad.swap(gn);
                cur_logp = new_logp;
                if (it >= warm) ++accepted;
            }

            if (it < warm) {
                eps = da.update(alpha);
                if (it >= collect_lo && it < collect_hi) {
                    ++wn;
                    for (int i = 0; i < d; ++i) {
                        const double delta = x[i] - wmean[i];
                        wmean[i] += delta / wn;
                        wm2[i] += delta * (x[i] - wmean[i]);
                    }
                }
                if (it + 1 == collect_hi && wn > 1) {
                    inv_mass.assign(size_t(d), 1.0);
                    for (int i = 0; i < d; ++i) {
                        const double var = wm2[i] / (wn - 1);
                        // shrink toward 1e-3 as in Stan's regularized estimate
                        double m = (wn / (wn + 5.0)) * var + 1e-3 * (5.0 / (wn + 5.0));
                        if (!(m > 0) || !std::isfinite(m)) m = 1.0;
                        inv_mass[i] = m;
                    }
                    da.reset(eps);
                }
                if (it + 1 == warm) eps = std::exp(da.log_eps_bar);
            } else {
                const int k = it - warm;
                std::copy(x.begin(), x.end(),
                          ens.samples.begin() + (size_t(c) * config.draws + k) * d);
                ens.logp[size_t(c) * config.draws + k] = cur_logp;
                if (div) ++divergent;
            }
        }

        if (divergent * 10 > config.draws)
            throw SamplerHealthError("hmc_sample: chain " + std::to_string(c) + " diverged in " +
                                     std::to_string(divergent) + " of " +
                                     std::to_string(config.draws) + " post-warmup steps");

        const double rate = double(accepted) / config.draws;
        ens.accept_rate[c] = rate;
        ens.step_size[c] = eps;
        ens.divergences[c] = divergent;
        ens.accept_healthy[c] = rate > 0.4 && rate < 0.95;
        ens.ess_logp[c] = effective_sample_size(ens.chain_logp(c));
    }
    return ens;
}

double effective_sample_size(std::span<const double> series) {
    const int n = int(series.size());
    if (n < 4) return double(n);
    double mean = 0;
    for (double v : series) mean += v;
    mean /= n;
    std::vector<double> cen(series.size());
    for (int i = 0; i < n; ++i) cen[i] = series[i] - mean;
    auto autocov = [&](int lag) {
        double s = 0;
        for (int i = 0; i + lag < n; ++i) s += cen[i] * cen[i + lag];
        return s / n;
    };
    const double c0 = autocov(0);
    if (!(c0 > 0)) return 1.0; // stuck chain
    double tau = -1.0;         // 2 * sum of positive pair sums, minus rho_0
    for (int k = 0; 2 * k + 1 < n; ++k) {
        const double pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
        if (pair <= 0) break;
        tau += 2.0 * pair;
    }
    if (tau < 1.0 / n) tau = 1.0 / n; // antithetic series: keep the estimate finite
    return std::min(double(n) / tau, 10.0 * double(n));
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ContractError("normal_quantile: p must be in (0, 1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double dc[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((dc[0] * q + dc[1]) * q + dc[2]) * q + dc[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((dc[0] * q + dc[1]) * q + dc[2]) * q + dc[3]) * q + 1.0);
    }
    // one Halley step against erfc brings the result to machine precision
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

namespace {

double percentile(std::span<const double> sorted, double q) {
    const double pos = q * double(sorted.size() - 1);
    const size_t lo = size_t(pos);
    const double frac = pos - double(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

} // namespace

PredictiveSummary predictive_summary(const PosteriorEnsemble& ensemble,
                                     const MfModel& model_template, const Points& query,
                                     double sigma_hf) {
    const int t = ensemble.total_draws();
    if (t <= 0 || ensemble.samples.empty())
        throw ContractError("predictive_summary: empty ensemble");
    if (query.size() == 0) throw ContractError("predictive_summary: no query points");
    if (query.dim != model_template.input_dim())
        throw ContractError("predictive_summary: query dim does not match the model");
    const size_t np = model_template.n_params();
    const bool learned = size_t(ensemble.dim) == np + 1;
    if (!learned && size_t(ensemble.dim) != np)
        throw ContractError("predictive_summary: ensemble dim does not match the model");
    if (!(sigma_hf >= 0)) throw ContractError("predictive_summary: sigma_hf must be >= 0");

    double alea = sigma_hf * sigma_hf;
    if (learned) {
        alea = 0;
        for (int ch = 0; ch < ensemble.n_chains; ++ch)
            for (int k = 0; k < ensemble.n_draws; ++k) {
                const double sd = std::exp(ensemble.draw(ch, k)[np]);
                alea += sd * sd / t;
            }
    }
    const double noise_half = normal_quantile(0.975) * std::sqrt(alea);

    const int pts = query.size();
    const int cdim = model_template.output_dim();
    MfModel model = model_template;

    std::vector<double> vals(size_t(pts) * cdim * t);
    int j = 0;
    for (int ch = 0; ch < ensemble.n_chains; ++ch)
        for (int k = 0; k < ensemble.n_draws; ++k, ++j) {
            auto dr = ensemble.draw(ch, k);
            std::copy(dr.begin(), dr.begin() + np, model.params.begin());
            for (int pi = 0; pi < pts; ++pi) {
                auto out = forward_mf(model, query[pi]);
                for (int kk = 0; kk < cdim; ++kk)
                    vals[(size_t(pi) * cdim + kk) * t + j] = out.u_mf[kk];
            }
        }

    PredictiveSummary out;
    out.out_dim = cdim;
    out.interval_warning = t < 50;
    const size_t total = size_t(pts) * cdim;
    out.mean.resize(total);
    out.total_var.resize(total);
    out.aleatoric_var.assign(total, alea);
    out.epistemic_var.resize(total);
    out.lower.resize(total);
    out.upper.resize(total);

    std::vector<double> sorted(static_cast<size_t>(t), 0.0);
    for (size_t i = 0; i < total; ++i) {
        std::span<const double> series(vals.data() + i * t, size_t(t));
        bool allsame = true;
        for (double v : series)
            if (v != series[0]) { allsame = false; break; }
        double m, epi;
        if (allsame) {
            m = series[0];
            epi = 0.0;
        } else {
            m = 0;
            for (double v : series) m += v;
            m /= t;
            epi = 0;
            for (double v : series) epi += (v - m) * (v - m);
            epi /= (t - 1);
        }
        out.mean[i] = m;
        out.epistemic_var[i] = epi;
        out.total_var[i] = alea + epi;
        std::copy(series.begin(), series.end(), sorted.begin());
        std::sort(sorted.begin(), sorted.end());
        out.lower[i] = std::min(percentile(sorted, 0.025) - noise_half, m);
        out.upper[i] = std::max(percentile(sorted, 0.975) + noise_half, m);
    }
    return out;
}

CalibrationReport calibration_report(const PredictiveSummary& summary,
                                     std::span<const double> truth) {
    const size_t n = summary.size();
    if (truth.size() != n)
        throw ContractError("calibration_report: truth size does not match the summary");
    if (n < 100) throw ContractError("calibration_report: need at least 100 held-out points");

    CalibrationReport rep;
    rep.n_points = int(n);
    size_t cov = 0;
    for (size_t i = 0; i < n; ++i)
        if (summary.lower[i] <= truth[i] && truth[i] <= summary.upper[i]) ++cov;
    rep.coverage_at_95 = 100.0 * double(cov) / double(n);

    double ece = 0;
    for (int lev = 5; lev <= 95; lev += 10) {
        const double nominal = lev / 100.0;
        const double z = normal_quantile(0.5 + 0.5 * nominal);
        size_t inside = 0;
        for (size_t i = 0; i < n; ++i)
            if (std::abs(truth[i] - summary.mean[i]) <= z * std::sqrt(summary.total_var[i]))
                ++inside;
        ece += std::abs(double(inside) / double(n) - nominal) / 10.0;
    }
    rep.ece = ece;
    return rep;
}

void write_ensemble(const PosteriorEnsemble& ensemble, const std::string& csv_path,
                    const std::string& bin_path) {
    std::string csv = "chain draw logp\n";
    for (int c = 0; c < ensemble.n_chains; ++c)
        for (int k = 0; k < ensemble.n_draws; ++k) {
            csv += std::to_string(c);
            csv += ' ';
            csv += std::to_string(k);
            csv += ' ';
            csv += fmt_double(ensemble.logp[size_t(c) * ensemble.n_draws + k]);
            csv += '\n';
        }
    atomic_write_file(csv_path, csv);

    std::string bin;
    bin.reserve(24 + ensemble.samples.size() * 8);
    bin += "MFBE";
    const uint32_t ver = 1;
    const uint64_t nd = uint64_t(ensemble.n_chains) * uint64_t(ensemble.n_draws);
    const uint64_t np = uint64_t(ensemble.dim);
    auto put = [&bin](const void* p, size_t len) {
        bin.append(static_cast<const char*>(p), len);
    };
    put(&ver, 4);
    put(&nd, 8);
    put(&np, 8);
    put(ensemble.samples.data(), ensemble.samples.size() * sizeof(double));
    atomic_write_file(bin_path, bin);
}

PosteriorEnsemble read_ensemble(const std::string& csv_path, const std::string& bin_path) {
    const std::string csv = read_file(csv_path);
    std::istringstream in(csv);
    std::string header;
    std::getline(in, header);
    if (header != "chain draw logp")
        throw ConfigError("read_ensemble: unexpected header in " + csv_path);
    std::vector<double> logp;
    int chain, draw, max_chain = -1, max_draw = -1;
    double lp;
    while (in >> chain >> draw >> lp) {
        logp.push_back(lp);
        max_chain = std::max(max_chain, chain);
        max_draw = std::max(max_draw, draw);
    }
    if (logp.empty()) throw ConfigError("read_ensemble: no draws in " + csv_path);

    PosteriorEnsemble ens;
    ens.n_chains = max_chain + 1;
    ens.n_draws = max_draw + 1;
    if (size_t(ens.n_chains) * size_t(ens.n_draws) != logp.size())
        throw ConfigError("read_ensemble: ragged chain table in " + csv_path);
    ens.logp = std::move(logp);

    const std::string bin = read_file(bin_path);
    if (bin.size() < 24 || bin.compare(0, 4, "MFBE") != 0)
        throw ConfigError("read_ensemble: bad parameter block header in " + bin_path);
    uint32_t ver;
    uint64_t nd, np;
    std::memcpy(&ver, bin.data() + 4, 4);
    std::memcpy(&nd, bin.data() + 8, 8);
    std::memcpy(&np, bin.data() + 16, 8);
    if (ver != 1) throw ConfigError("read_ensemble: unsupported parameter block version");
    if (nd != uint64_t(ens.n_chains) * uint64_t(ens.n_draws))
        throw ConfigError("read_ensemble: draw count mismatch between files");
    if (bin.size() != 24 + nd * np * sizeof(double))
        throw ConfigError("read_ensemble: truncated parameter block in " + bin_path);
    ens.dim = int(np);
    ens.samples.resize(nd * np);
    std::memcpy(ens.samples.data(), bin.data() + 24, nd * np * sizeof(double));

    // sampler diagnostics are not serialized; recompute what the files allow
    ens.accept_rate.assign(ens.n_chains, 0.0);
    ens.step_size.assign(ens.n_chains, 0.0);
    ens.divergences.assign(ens.n_chains, 0);
    ens.accept_healthy.assign(ens.n_chains, true);
    ens.ess_logp.resize(ens.n_chains);
    for (int c = 0; c < ens.n_chains; ++c)
        ens.ess_logp[c] = effective_sample_size(ens.chain_logp(c));
    return ens;
}

void write_predictive_summary(const PredictiveSummary& summary, const Points& query,
                              const std::string& path) {
    const int cdim = summary.out_dim;
    if (size_t(query.size()) * cdim != summary.size())
        throw ContractError("write_predictive_summary: query/summary size mismatch");
    std::string text;
    for (int a = 0; a + 1 < query.dim; ++a) {
        text += 'x';
        text += std::to_string(a);
        text += ' ';
    }
    text += "mu";
    for (int k = 0; k < cdim; ++k) {
        const std::string tag = cdim > 1 ? std::to_string(k) : std::string();
        for (const char* col : {"mean", "total_var", "aleatoric_var", "epistemic_var",
                                "lower", "upper"}) {
            text += ' ';
            text += col;
            text += tag;
        }
    }
    text += '\n';
    for (int i = 0; i < query.size(); ++i) {
        auto row = query[i];
        for (int a = 0; a < query.dim; ++a) {
            if (a) text += ' ';
            text += fmt_double(row[a]);
        }
        for (int k = 0; k < cdim; ++k) {
            const size_t idx = size_t(i) * cdim + k;
            for (const double* col : {&summary.mean[idx], &summary.total_var[idx],
                                      &summary.aleatoric_var[idx], &summary.epistemic_var[idx],
                                      &summary.lower[idx], &summary.upper[idx]}) {
                text += ' ';
                text += fmt_double(*col);
            }
        }
        text += '\n';
    }
    atomic_write_file(path, text);
}

} // namespace mfb
