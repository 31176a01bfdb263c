#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "ood/driver.hpp"

// Exit codes: 0 success, 2 config/data error, 3 numerical failure.

int main(int argc, char** argv) {
    CLI::App app{"Self-distillation OOD detection experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_override;
    std::string checkpoint;
    std::vector<std::string> checkpoints;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
        cmd->add_option("--seed", seed_override, "override the config seed");
        cmd->add_option("--out", out_override, "override the output directory");
    };
    CLI::App* train = app.add_subcommand("train", "run the training loop");
    add_common(train);
    CLI::App* eval = app.add_subcommand("eval", "score test sets against the feature bank");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint, "checkpoint to load (default: final)");
    CLI::App* diagnose = app.add_subcommand("diagnose", "occupied classes and k-NN accuracy");
    add_common(diagnose);
    diagnose->add_option("--checkpoint", checkpoints,
                         "checkpoints to inspect (default: all in the run)");
    CLI::App* hist = app.add_subcommand("hist", "color histograms of the configured datasets");
    add_common(hist);

    CLI11_PARSE(app, argc, argv);

    try {
        ood::ExperimentConfig cfg = ood::ExperimentConfig::from_file(config_path);
        if (seed_override) cfg.seed = *seed_override;
        if (out_override) cfg.out_dir = *out_override;
        cfg.validate();
        if (train->parsed()) ood::cmd_train(cfg);
        else if (eval->parsed()) ood::cmd_eval(cfg, checkpoint);
        else if (diagnose->parsed()) ood::cmd_diagnose(cfg, checkpoints);
        else ood::cmd_hist(cfg);
    } catch (const ood::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
