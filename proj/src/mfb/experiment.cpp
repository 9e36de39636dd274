#include "experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <initializer_list>
#include <sstream>

#include "errors.hpp"
#include "io.hpp"
#include "json.hpp"
#include "network.hpp"
#include "rng.hpp"

namespace mfb {

using nlohmann::json;

namespace {

// same stream-splitting mix as the trainer so derived seeds never collide
// with user-visible ones
uint64_t mix(uint64_t seed, uint64_t k) {
    uint64_t z = seed + (k + 1) * 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double s() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

Preset preset_from_name(const std::string& tag) {
    if (tag == "full") return Preset::Full;
    if (tag == "desk") return Preset::Desk;
    if (tag == "mini") return Preset::Mini;
    throw ConfigError("unknown preset: " + tag + " (expected full, desk, or mini)");
}

std::vector<std::string> problem_coord_names(const PdeProblem& prob) {
    switch (prob.kind) {
        case ProblemKind::Burgers: return {"x", "t"};
        case ProblemKind::Heat: return {"x", "y"};
        case ProblemKind::TaylorGreen: return {"x", "y", "t"};
    }
    throw ContractError("problem_coord_names: unknown kind");
}

std::vector<std::string> problem_label_names(const PdeProblem& prob) {
    if (prob.kind == ProblemKind::TaylorGreen) return {"u", "v", "p"};
    return {"u"};
}

void check_known(const json& j, const std::string& scope,
                 std::initializer_list<const char*> known) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("config: unknown field \"" + it.key() + "\" in " + scope);
    }
}

template <class T>
void get_field(const json& j, const char* key, T& out, const std::string& scope) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for \"" + std::string(key) + "\" in " + scope +
                          ": " + e.what());
    }
}

void parse_train(const json& j, TrainConfig& t) {
    check_known(j, "train",
                {"lf_epochs",      "lf_lr",          "mf_epochs",    "mf_lr",
                 "mf_lr_end",      "lbfgs_iters",    "lbfgs_memory", "batch_lf",
                 "batch_hf",       "batch_interior", "batch_boundary", "batch_initial",
                 "n_interior",     "n_boundary",     "n_initial",    "n_param_strata",
                 "sampling",       "resample_every", "balance_every", "lf_lr_scale",
                 "freeze_lf",      "no_gating",      "no_lf_pretrain", "no_residual",
                 "lambda_hf",      "lambda_r",       "lambda_b",     "lambda_ic"});
    get_field(j, "lf_epochs", t.lf_stage.epochs, "train");
    get_field(j, "lf_lr", t.lf_stage.lr, "train");
    get_field(j, "mf_epochs", t.mf_stage.epochs, "train");
    get_field(j, "mf_lr", t.mf_stage.lr, "train");
    get_field(j, "mf_lr_end", t.mf_lr_end, "train");
    get_field(j, "lbfgs_iters", t.lbfgs_iters, "train");
    get_field(j, "lbfgs_memory", t.lbfgs_memory, "train");
    get_field(j, "batch_lf", t.batch_lf, "train");
    get_field(j, "batch_hf", t.batch_hf, "train");
    get_field(j, "batch_interior", t.batch_interior, "train");
    get_field(j, "batch_boundary", t.batch_boundary, "train");
    get_field(j, "batch_initial", t.batch_initial, "train");
    get_field(j, "n_interior", t.n_interior, "train");
    get_field(j, "n_boundary", t.n_boundary, "train");
    get_field(j, "n_initial", t.n_initial, "train");
    get_field(j, "n_param_strata", t.n_param_strata, "train");
    if (j.contains("sampling")) {
        std::string tag;
        get_field(j, "sampling", tag, "train");
        t.sampling = sampling_from_name(tag);
    }
    get_field(j, "resample_every", t.resample_every, "train");
    get_field(j, "balance_every", t.balance_every, "train");
    get_field(j, "lf_lr_scale", t.lf_lr_scale, "train");
    get_field(j, "freeze_lf", t.freeze_lf, "train");
    get_field(j, "no_gating", t.no_gating, "train");
    get_field(j, "no_lf_pretrain", t.no_lf_pretrain, "train");
    get_field(j, "no_residual", t.no_residual, "train");
    get_field(j, "lambda_hf", t.weights.lambda_hf, "train");
    get_field(j, "lambda_r", t.weights.lambda_r, "train");
    get_field(j, "lambda_b", t.weights.lambda_b, "train");
    get_field(j, "lambda_ic", t.weights.lambda_ic, "train");
}

void parse_bayes(const json& j, BayesConfig& b) {
    check_known(j, "bayes",
                {"tau", "sigma_hf", "learn_sigma_hf", "sigma_r", "chains", "warmup", "draws",
                 "leapfrog", "step_size", "subsample"});
    get_field(j, "tau", b.tau, "bayes");
    get_field(j, "sigma_hf", b.sigma_hf, "bayes");
    get_field(j, "learn_sigma_hf", b.learn_sigma_hf, "bayes");
    get_field(j, "sigma_r", b.sigma_r, "bayes");
    get_field(j, "chains", b.chains, "bayes");
    get_field(j, "warmup", b.warmup, "bayes");
    get_field(j, "draws", b.draws, "bayes");
    get_field(j, "leapfrog", b.leapfrog, "bayes");
    get_field(j, "step_size", b.step_size, "bayes");
    get_field(j, "subsample", b.subsample, "bayes");
}

json train_to_json(const TrainConfig& t) {
    json j;
    j["lf_epochs"] = t.lf_stage.epochs;
    j["lf_lr"] = t.lf_stage.lr;
    j["mf_epochs"] = t.mf_stage.epochs;
    j["mf_lr"] = t.mf_stage.lr;
    j["mf_lr_end"] = t.mf_lr_end;
    j["lbfgs_iters"] = t.lbfgs_iters;
    j["lbfgs_memory"] = t.lbfgs_memory;
    j["batch_lf"] = t.batch_lf;
    j["batch_hf"] = t.batch_hf;
    j["batch_interior"] = t.batch_interior;
    j["batch_boundary"] = t.batch_boundary;
    j["batch_initial"] = t.batch_initial;
    j["n_interior"] = t.n_interior;
    j["n_boundary"] = t.n_boundary;
    j["n_initial"] = t.n_initial;
    j["n_param_strata"] = t.n_param_strata;
    j["sampling"] = sampling_name(t.sampling);
    j["resample_every"] = t.resample_every;
    j["balance_every"] = t.balance_every;
    j["lf_lr_scale"] = t.lf_lr_scale;
    j["freeze_lf"] = t.freeze_lf;
    j["no_gating"] = t.no_gating;
    j["no_lf_pretrain"] = t.no_lf_pretrain;
    j["no_residual"] = t.no_residual;
    j["lambda_hf"] = t.weights.lambda_hf;
    j["lambda_r"] = t.weights.lambda_r;
    j["lambda_b"] = t.weights.lambda_b;
    j["lambda_ic"] = t.weights.lambda_ic;
    return j;
}

json bayes_to_json(const BayesConfig& b) {
    json j;
    j["tau"] = b.tau;
    j["sigma_hf"] = b.sigma_hf;
    j["learn_sigma_hf"] = b.learn_sigma_hf;
    j["sigma_r"] = b.sigma_r;
    j["chains"] = b.chains;
    j["warmup"] = b.warmup;
    j["draws"] = b.draws;
    j["leapfrog"] = b.leapfrog;
    j["step_size"] = b.step_size;
    j["subsample"] = b.subsample;
    return j;
}

MfModel make_model(const ExperimentConfig& c, const PdeProblem& prob) {
    const Preset p = preset_from_name(c.preset);
    const uint64_t mseed = mix(c.seed, 0);
    if (c.model == "hf-only") {
        MfSpecs specs;
        specs.lf = single_net_spec(prob.coord_dim(), prob.out_dim, p);
        return init_params(specs, domain_normalization(prob), mseed, GateMode::Learned,
                           ModelKind::SingleNet);
    }
    return init_params(default_specs(prob.coord_dim(), prob.out_dim, p),
                       domain_normalization(prob), mseed);
}

Dataset fidelity_data(const ExperimentConfig& c, const PdeProblem& prob, Fidelity fid) {
    std::vector<Dataset> parts;
    for (size_t i = 0; i < c.train_mu.size(); ++i) {
        GridSolution sol = solve_reference(prob, c.train_mu[i],
                                           fid == Fidelity::LF ? c.lf_resolution
                                                               : c.hf_resolution);
        sol.fidelity = fid;
        const uint64_t s = mix(c.seed, 100 + 2 * i + (fid == Fidelity::HF ? 1 : 0));
        parts.push_back(fid == Fidelity::LF
                            ? sample_interpolated(sol, c.n_lf, 0.0, s)
                            : sample_dataset(sol, c.n_hf, c.hf_noise_sd, s));
    }
    return merge_datasets(parts);
}

double held_out_mu(const ExperimentConfig& c, const PdeProblem& prob) {
    return std::isnan(c.predictive_mu) ? default_eval_mu(prob) : c.predictive_mu;
}

std::string metrics_table(const std::vector<std::pair<std::string, double>>& metrics) {
    std::string s = "metric value\n";
    for (const auto& [k, v] : metrics) s += k + " " + fmt_double(v) + "\n";
    return s;
}

// small space-separated two-column artifact reader (metrics/timings)
double lookup_column(const std::filesystem::path& path, const std::string& key,
                     const std::string& what) {
    if (!std::filesystem::exists(path))
        throw ConfigError("plots: missing artifact " + path.filename().string() + " for " +
                          what + "; run the experiment first");
    std::istringstream is(read_file(path));
    std::string line;
    std::getline(is, line); // header
    while (std::getline(is, line)) {
        std::istringstream row(line);
        std::string k;
        double v;
        if (row >> k >> v && k == key) return v;
    }
    throw ConfigError("plots: no \"" + key + "\" row in " + path.filename().string());
}

MfModel checkpoint_for_plot(const std::filesystem::path& dir, const std::string& what) {
    const auto path = dir / "ckpt_final.json";
    if (!std::filesystem::exists(path))
        throw ConfigError("plots: missing artifact ckpt_final.json for " + what +
                          "; run the experiment first");
    return read_checkpoint(path.string());
}

} // namespace

void ExperimentConfig::validate() const {
    const PdeProblem prob = PdeProblem::from_name(problem);
    preset_from_name(preset);
    if (model != "mf" && model != "hf-only")
        throw ConfigError("config: model must be \"mf\" or \"hf-only\", got \"" + model + "\"");
    if (name.empty() || name.find('/') != std::string::npos)
        throw ConfigError("config: name must be a non-empty path component");
    if (outdir.empty()) throw ConfigError("config: outdir must be non-empty");
    if (train_mu.empty()) throw ConfigError("config: train_mu must list at least one value");
    for (double m : train_mu)
        if (!(m >= prob.mu_lo && m <= prob.mu_hi))
            throw ConfigError("config: train_mu value " + fmt_double(m) + " outside [" +
                              fmt_double(prob.mu_lo) + ", " + fmt_double(prob.mu_hi) + "]");
    for (double m : eval_mu)
        if (!(m > 0) || !std::isfinite(m))
            throw ConfigError("config: eval_mu values must be positive");
    if (!std::isnan(predictive_mu) && (!(predictive_mu > 0) || !std::isfinite(predictive_mu)))
        throw ConfigError("config: predictive_mu must be positive");
    if (lf_resolution < 8 || hf_resolution < 8)
        throw ConfigError("config: resolutions must be at least 8");
    if (n_lf < 1 || n_hf < 1) throw ConfigError("config: n_lf and n_hf must be positive");
    if (!(hf_noise_sd >= 0) || !std::isfinite(hf_noise_sd))
        throw ConfigError("config: hf_noise_sd must be finite and non-negative");
    if (eval_points < 10) throw ConfigError("config: eval_points must be at least 10");
    for (int n : sweep_n_hf)
        if (n < 1) throw ConfigError("config: sweep_n_hf values must be positive");
    if (sweep_seeds < 1) throw ConfigError("config: sweep_seeds must be positive");
    train.validate();
    bayes.validate();
}

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    check_known(j, "top level",
                {"schema",       "name",        "problem",       "preset",
                 "model",        "train_mu",    "eval_mu",       "predictive_mu",
                 "lf_resolution", "hf_resolution", "n_lf",       "n_hf",
                 "hf_noise_sd",  "eval_points", "sample_posterior", "sweep_n_hf",
                 "sweep_seeds",  "train",       "bayes",         "outdir",
                 "seed"});
    if (!j.contains("schema")) throw ConfigError("config: missing \"schema\" field");
    int schema = 0;
    get_field(j, "schema", schema, "top level");
    if (schema != 1)
        throw ConfigError("config: unsupported schema version " + std::to_string(schema));

    ExperimentConfig c;
    get_field(j, "name", c.name, "top level");
    get_field(j, "problem", c.problem, "top level");
    get_field(j, "preset", c.preset, "top level");
    get_field(j, "model", c.model, "top level");
    get_field(j, "train_mu", c.train_mu, "top level");
    get_field(j, "eval_mu", c.eval_mu, "top level");
    get_field(j, "predictive_mu", c.predictive_mu, "top level");
    get_field(j, "lf_resolution", c.lf_resolution, "top level");
    get_field(j, "hf_resolution", c.hf_resolution, "top level");
    get_field(j, "n_lf", c.n_lf, "top level");
    get_field(j, "n_hf", c.n_hf, "top level");
    get_field(j, "hf_noise_sd", c.hf_noise_sd, "top level");
    get_field(j, "eval_points", c.eval_points, "top level");
    get_field(j, "sample_posterior", c.sample_posterior, "top level");
    get_field(j, "sweep_n_hf", c.sweep_n_hf, "top level");
    get_field(j, "sweep_seeds", c.sweep_seeds, "top level");
    get_field(j, "outdir", c.outdir, "top level");
    get_field(j, "seed", c.seed, "top level");
    if (j.contains("train")) parse_train(j.at("train"), c.train);
    if (j.contains("bayes")) parse_bayes(j.at("bayes"), c.bayes);
    c.validate();
    return c;
}

std::string config_to_json(const ExperimentConfig& c) {
    json j;
    j["schema"] = 1;
    j["name"] = c.name;
    j["problem"] = c.problem;
    j["preset"] = c.preset;
    j["model"] = c.model;
    j["train_mu"] = c.train_mu;
    j["eval_mu"] = c.eval_mu;
    if (!std::isnan(c.predictive_mu)) j["predictive_mu"] = c.predictive_mu;
    j["lf_resolution"] = c.lf_resolution;
    j["hf_resolution"] = c.hf_resolution;
    j["n_lf"] = c.n_lf;
    j["n_hf"] = c.n_hf;
    j["hf_noise_sd"] = c.hf_noise_sd;
    j["eval_points"] = c.eval_points;
    j["sample_posterior"] = c.sample_posterior;
    j["sweep_n_hf"] = c.sweep_n_hf;
    j["sweep_seeds"] = c.sweep_seeds;
    j["train"] = train_to_json(c.train);
    j["bayes"] = bayes_to_json(c.bayes);
    j["outdir"] = c.outdir;
    j["seed"] = c.seed;
    return j.dump(2) + "\n";
}

ExperimentConfig read_config(const std::string& path) {
    return config_from_json(read_file(path));
}

std::string config_hash(const ExperimentConfig& config) {
    return hash_hex(config_to_json(config));
}

std::filesystem::path run_dir_for(const ExperimentConfig& config) {
    const char* env = std::getenv("MFB_OUT_ROOT");
    const std::filesystem::path root = (env && *env) ? env : config.outdir.c_str();
    return root / (config.name + "-" + config_hash(config));
}

int max_workers() {
    const char* env = std::getenv("MFB_MAX_WORKERS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
        throw ConfigError("MFB_MAX_WORKERS must be a positive integer");
    return int(v);
}

GridSolution solve_reference(const PdeProblem& prob, double mu, int resolution) {
    switch (prob.kind) {
        case ProblemKind::Burgers: return solve_burgers_fd(mu, resolution);
        case ProblemKind::Heat: return solve_heat_fd(mu, resolution);
        case ProblemKind::TaylorGreen:
            return make_taylor_green_grid(mu, resolution, std::max(4, resolution / 4));
    }
    throw ContractError("solve_reference: unknown problem kind");
}

Dataset merge_datasets(std::span<const Dataset> parts) {
    if (parts.empty()) throw ContractError("merge_datasets: no parts");
    Dataset out = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) {
        const Dataset& d = parts[i];
        if (d.points.dim != out.points.dim || d.out_dim != out.out_dim)
            throw ContractError("merge_datasets: mismatched dimensions");
        if (d.coord_names != out.coord_names || d.label_names != out.label_names)
            throw ContractError("merge_datasets: mismatched column names");
        out.points.data.insert(out.points.data.end(), d.points.data.begin(),
                               d.points.data.end());
        out.labels.insert(out.labels.end(), d.labels.begin(), d.labels.end());
    }
    return out;
}

Dataset oracle_points(const PdeProblem& prob, double mu, int n, double noise_sd,
                      uint64_t seed) {
    if (n < 1) throw ContractError("oracle_points: n must be positive");
    Dataset ds;
    ds.coord_names = problem_coord_names(prob);
    ds.label_names = problem_label_names(prob);
    ds.out_dim = prob.out_dim;
    ds.fidelity = Fidelity::HF;
    ds.noise_sd = noise_sd;
    ds.points.dim = prob.point_dim();
    // separate streams so toggling noise does not move the probe locations
    Rng coord_rng(seed, 0), noise_rng(seed, 1);
    std::vector<double> pt(size_t(prob.point_dim()), 0.0);
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < prob.spatial_dim; ++d)
            pt[d] = coord_rng.uniform(prob.lo[d], prob.hi[d]);
        if (prob.is_transient) pt[prob.spatial_dim] = coord_rng.uniform(0.0, prob.t_end);
        pt.back() = mu;
        ds.points.push(pt);
        auto u = prob.oracle(std::span<const double>(pt).first(prob.coord_dim()), mu);
        for (double& v : u)
            if (noise_sd > 0) v += noise_sd * noise_rng.normal();
        ds.labels.insert(ds.labels.end(), u.begin(), u.end());
    }
    return ds;
}

double field_mre(const FieldFn& field, const PdeProblem& prob, double mu) {
    std::vector<int> dims;
    std::vector<double> lo, hi;
    switch (prob.kind) {
        case ProblemKind::Burgers:
            dims = {201, 101};
            lo = {prob.lo[0], 0.0};
            hi = {prob.hi[0], prob.t_end};
            break;
        case ProblemKind::Heat:
            dims = {101, 101};
            lo = {prob.lo[0], prob.lo[1]};
            hi = {prob.hi[0], prob.hi[1]};
            break;
        case ProblemKind::TaylorGreen:
            dims = {64, 64, 11};
            lo = {prob.lo[0], prob.lo[1], 0.0};
            hi = {prob.hi[0], prob.hi[1], prob.t_end};
            break;
    }
    const int cd = prob.coord_dim();
    const int C = prob.out_dim;

    long long total = 1;
    for (int d : dims) total *= d;
    std::vector<double> in(size_t(cd), 0.0);
    std::vector<double> sum_abs(size_t(C), 0.0), amax(size_t(C), 0.0);
    for (long long node = 0; node < total; ++node) {
        long long r = node;
        for (int a = 0; a < cd; ++a) {
            const int i = int(r % dims[a]);
            r /= dims[a];
            in[a] = dims[a] > 1 ? lo[a] + (hi[a] - lo[a]) * double(i) / double(dims[a] - 1)
                                : lo[a];
        }
        const auto pred = field(in);
        const auto truth = prob.oracle(in, mu);
        if (int(pred.size()) != C) throw ContractError("field_mre: field output dim mismatch");
        for (int c = 0; c < C; ++c) {
            sum_abs[c] += std::abs(pred[c] - truth[c]);
            amax[c] = std::max(amax[c], std::abs(truth[c]));
        }
    }
    double mre = 0;
    for (int c = 0; c < C; ++c) mre += sum_abs[c] / (double(total) * (amax[c] + 1e-12));
    return mre / double(C);
}

RunResult run_experiment(const ExperimentConfig& config) {
    return run_experiment_in(config, run_dir_for(config));
}

RunResult run_experiment_in(const ExperimentConfig& config,
                            const std::filesystem::path& dir) {
    config.validate();
    const PdeProblem prob = PdeProblem::from_name(config.problem);
    std::filesystem::create_directories(dir);
    atomic_write_file(dir / "config.json", config_to_json(config));

    const Timer t_total;
    const Timer t_data;
    const bool use_lf = config.model == "mf";
    Dataset lf;
    if (use_lf) {
        lf = fidelity_data(config, prob, Fidelity::LF);
        write_dataset(lf, (dir / "lf_data.txt").string());
    }
    const Dataset hf = fidelity_data(config, prob, Fidelity::HF);
    write_dataset(hf, (dir / "hf_data.txt").string());

    const double mu_star = held_out_mu(config, prob);
    const Dataset eval_ds =
        oracle_points(prob, mu_star, config.eval_points, config.hf_noise_sd, mix(config.seed, 2));
    write_dataset(eval_ds, (dir / "eval_data.txt").string());
    const double data_s = t_data.s();

    MfModel model = make_model(config, prob);
    TrainConfig tcfg = config.train;
    tcfg.seed = mix(config.seed, 1);
    tcfg.eval_mu = mu_star;
    const TrainReport rep = train_mf(model, prob, use_lf ? &lf : nullptr, &hf, tcfg);
    write_training_log(rep, (dir / "train_log.txt").string());
    for (size_t i = 0; i < rep.stage_names.size(); ++i) {
        MfModel snap = model;
        snap.params = rep.stage_params[i];
        write_checkpoint(snap, (dir / ("ckpt_" + rep.stage_names[i] + ".json")).string());
    }
    write_checkpoint(model, (dir / "ckpt_final.json").string());

    const double nan = std::numeric_limits<double>::quiet_NaN();
    double coverage = nan, ece = nan, epi_share = nan;
    double hmc_s = 0, pred_s = 0;
    if (config.sample_posterior) {
        const Timer t_hmc;
        BayesConfig bcfg = config.bayes;
        bcfg.seed = mix(config.seed, 3);
        const CollocationSet colloc =
            sample_points(prob, tcfg.n_interior, 0, 0, tcfg.n_param_strata, tcfg.sampling,
                          mix(config.seed, 4));
        PosteriorTarget target(model, prob, &hf, &colloc, bcfg);
        const TargetFn fn = [&target](std::span<const double> th, std::span<double> g) {
            return target.logp_grad(th, g);
        };
        TargetRefresh refresh;
        if (bcfg.subsample > 0) refresh = [&target](Rng& r) { target.refresh(r); };
        const PosteriorEnsemble ens = hmc_sample(target.init_theta(), fn, bcfg, refresh);
        write_ensemble(ens, (dir / "ensemble.csv").string(), (dir / "ensemble.bin").string());
        hmc_s = t_hmc.s();

        const Timer t_pred;
        const PredictiveSummary ps = predictive_summary(ens, model, eval_ds.points,
                                                        bcfg.sigma_hf);
        write_predictive_summary(ps, eval_ds.points, (dir / "predictive.txt").string());
        const CalibrationReport cal = calibration_report(ps, eval_ds.labels);
        coverage = cal.coverage_at_95;
        ece = cal.ece;
        double share = 0;
        for (size_t i = 0; i < ps.size(); ++i)
            share += ps.total_var[i] > 0 ? ps.epistemic_var[i] / ps.total_var[i] : 0.0;
        epi_share = share / double(ps.size());
        pred_s = t_pred.s();
    }

    RunResult result;
    result.dir = dir;
    result.metrics.emplace_back("mre", rep.final_mre);
    result.metrics.emplace_back("final_total_loss",
                                rep.history.empty() ? nan : rep.history.back().total);
    result.metrics.emplace_back("coverage_at_95", coverage);
    result.metrics.emplace_back("ece", ece);
    result.metrics.emplace_back("epistemic_share", epi_share);
    atomic_write_file(dir / "metrics.csv", metrics_table(result.metrics));

    std::string tm = "stage seconds\n";
    tm += "data " + fmt_double(data_s) + "\n";
    tm += "lf " + fmt_double(rep.lf_time_s) + "\n";
    tm += "adam " + fmt_double(rep.adam_time_s) + "\n";
    tm += "lbfgs " + fmt_double(rep.lbfgs_time_s) + "\n";
    tm += "hmc " + fmt_double(hmc_s) + "\n";
    tm += "predictive " + fmt_double(pred_s) + "\n";
    tm += "total " + fmt_double(t_total.s()) + "\n";
    atomic_write_file(dir / "timings.csv", tm);
    return result;
}

std::filesystem::path run_sweep(const ExperimentConfig& config) {
    config.validate();
    if (config.sweep_n_hf.empty())
        throw ConfigError("sweep: sweep_n_hf must list at least one HF budget");
    max_workers(); // validate the env override even though execution is sequential
    const char* env = std::getenv("MFB_OUT_ROOT");
    const std::filesystem::path root = (env && *env) ? env : config.outdir.c_str();
    const std::filesystem::path dir = root / (config.name + "-sweep-" + config_hash(config));
    std::filesystem::create_directories(dir);
    atomic_write_file(dir / "config.json", config_to_json(config));

    std::string rows = "n_hf mre_mf mre_hf gap\n";
    for (int n_hf : config.sweep_n_hf) {
        double sum_mf = 0, sum_hf = 0;
        for (int s = 0; s < config.sweep_seeds; ++s) {
            ExperimentConfig sub = config;
            sub.sweep_n_hf.clear();
            sub.n_hf = n_hf;
            sub.seed = config.seed + uint64_t(s);
            sub.sample_posterior = false;
            for (const char* kind : {"mf", "hf-only"}) {
                sub.model = kind;
                const std::string label =
                    std::string(kind) + "-nhf" + std::to_string(n_hf) + "-seed" +
                    std::to_string(s);
                const RunResult r = run_experiment_in(sub, dir / label);
                for (const auto& [k, v] : r.metrics)
                    if (k == "mre") (sub.model == "mf" ? sum_mf : sum_hf) += v;
            }
        }
        const double mf = sum_mf / double(config.sweep_seeds);
        const double hf = sum_hf / double(config.sweep_seeds);
        rows += std::to_string(n_hf) + " " + fmt_double(mf) + " " + fmt_double(hf) + " " +
                fmt_double(hf - mf) + "\n";
    }
    atomic_write_file(dir / "sweep_metrics.csv", rows);
    return dir;
}

void emit_plot_data(const std::filesystem::path& run_dir, const std::string& figure) {
    const auto cfg_path = run_dir / "config.json";
    if (!std::filesystem::exists(cfg_path))
        throw ConfigError("plots: " + run_dir.string() + " has no config.json; not a run directory");
    const ExperimentConfig cfg = config_from_json(read_file(cfg_path));
    const PdeProblem prob = PdeProblem::from_name(cfg.problem);

    if (figure == "fig1") {
        const MfModel model = checkpoint_for_plot(run_dir, "fig1");
        if (model.kind != ModelKind::Full)
            throw ConfigError("plots fig1: the gate histogram needs the gated model, not " +
                              cfg.model);
        const double mu = held_out_mu(cfg, prob);
        constexpr int kBins = 20;
        std::vector<long long> counts(kBins, 0);
        long long total = 0;
        const int cd = prob.coord_dim();
        std::vector<double> in(size_t(cd) + 1, 0.0);
        in[cd] = mu;
        // alpha sampled over the same grid the MRE evaluation walks
        field_mre(
            [&](std::span<const double> coords) {
                std::copy(coords.begin(), coords.end(), in.begin());
                const auto out = forward_mf(model, in);
                const int bin = std::min(kBins - 1, std::max(0, int(out.alpha * kBins)));
                ++counts[bin];
                ++total;
                return out.u_mf;
            },
            prob, mu);
        std::string s = "bin_lo bin_hi count frac\n";
        for (int b = 0; b < kBins; ++b)
            s += fmt_double(b / double(kBins)) + " " + fmt_double((b + 1) / double(kBins)) +
                 " " + std::to_string(counts[b]) + " " +
                 fmt_double(double(counts[b]) / double(total)) + "\n";
        atomic_write_file(run_dir / "fig1_alpha.txt", s);
        return;
    }

    if (figure == "fig2") {
        const MfModel model = checkpoint_for_plot(run_dir, "fig2");
        std::vector<double> mus = cfg.eval_mu;
        if (mus.empty()) {
            constexpr int kDefault = 9;
            for (int i = 0; i < kDefault; ++i)
                mus.push_back(prob.mu_lo +
                              (prob.mu_hi - prob.mu_lo) * double(i) / double(kDefault - 1));
        }
        const double lo = *std::min_element(cfg.train_mu.begin(), cfg.train_mu.end());
        const double hi = *std::max_element(cfg.train_mu.begin(), cfg.train_mu.end());
        const int cd = prob.coord_dim();
        std::string s = "mu mre in_range\n";
        for (double mu : mus) {
            std::vector<double> in(size_t(cd) + 1, 0.0);
            in[cd] = mu;
            const double mre = field_mre(
                [&](std::span<const double> coords) {
                    std::copy(coords.begin(), coords.end(), in.begin());
                    return forward_mf(model, in).u_mf;
                },
                prob, mu);
            const int in_range = (mu >= lo && mu <= hi) ? 1 : 0;
            s += fmt_double(mu) + " " + fmt_double(mre) + " " + std::to_string(in_range) + "\n";
        }
        atomic_write_file(run_dir / "fig2_generalization.txt", s);
        return;
    }

    if (figure == "fig4") {
        const double mre_model = lookup_column(run_dir / "metrics.csv", "mre", "fig4");
        const double train_s = lookup_column(run_dir / "timings.csv", "lf", "fig4") +
                               lookup_column(run_dir / "timings.csv", "adam", "fig4") +
                               lookup_column(run_dir / "timings.csv", "lbfgs", "fig4");
        const double mu = held_out_mu(cfg, prob);
        std::string s = "method resolution runtime_s mre\n";
        for (int res : {cfg.lf_resolution, 2 * cfg.lf_resolution, 4 * cfg.lf_resolution}) {
            const GridSolution sol = solve_reference(prob, mu, res);
            const double mre = field_mre(
                [&sol](std::span<const double> coords) { return interpolate(sol, coords); },
                prob, mu);
            s += "fd " + std::to_string(res) + " " + fmt_double(sol.runtime_s) + " " +
                 fmt_double(mre) + "\n";
        }
        s += "mf-bpinn 0 " + fmt_double(train_s) + " " + fmt_double(mre_model) + "\n";
        atomic_write_file(run_dir / "fig4_cost.txt", s);
        return;
    }

    throw ConfigError("plots: unknown figure tag \"" + figure +
                      "\" (expected fig1, fig2, or fig4)");
}

} // namespace mfb
