// Experiment runner. Exit codes: 0 success, 2 config/contract errors,
// 3 numeric failures, 4 sampler health, 1 anything else.

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "mfb/errors.hpp"
#include "mfb/experiment.hpp"
#include "mfb/io.hpp"

using namespace mfb;

int main(int argc, char** argv) {
    CLI::App app{"mfb: multi-fidelity Bayesian PINN benchmark runner"};
    app.require_subcommand(1);

    std::string config_path, run_dir, figure;

    auto* run = app.add_subcommand("run", "run one experiment from a JSON config");
    run->add_option("config", config_path, "config file")->required();

    auto* sweep = app.add_subcommand("sweep", "HF-budget sweep (gated vs single-net)");
    sweep->add_option("config", config_path, "config file with sweep_n_hf set")->required();

    auto* plots = app.add_subcommand("plots", "regenerate plot data from run artifacts");
    plots->add_option("dir", run_dir, "run directory")->required();
    plots->add_option("figure", figure, "fig1 | fig2 | fig4")->required();

    auto* validate = app.add_subcommand("validate", "parse and validate a config, then exit");
    validate->add_option("config", config_path, "config file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            const RunResult result = run_experiment(read_config(config_path));
            std::printf("run dir: %s\n", result.dir.c_str());
            for (const auto& [key, value] : result.metrics)
                std::printf("%s %s\n", key.c_str(), fmt_double(value).c_str());
        } else if (sweep->parsed()) {
            const auto dir = run_sweep(read_config(config_path));
            std::printf("sweep dir: %s\n", dir.c_str());
        } else if (plots->parsed()) {
            emit_plot_data(run_dir, figure);
            std::printf("wrote %s data under %s\n", figure.c_str(), run_dir.c_str());
        } else if (validate->parsed()) {
            const ExperimentConfig config = read_config(config_path);
            std::printf("ok: %s (hash %s)\n", config.name.c_str(),
                        config_hash(config).c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const SamplerHealthError& e) {
        std::fprintf(stderr, "sampler health: %s\n", e.what());
        return 4;
    } catch (const TrainingError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
