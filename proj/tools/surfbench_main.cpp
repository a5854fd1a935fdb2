// surfbench command-line tool: generate corpora, train/evaluate/run the
// surface classifier, and calibrate surface parameters against recordings.
#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "surfbench/commands.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"surface workbench: hopping-leg simulation, IMU surface "
                 "recognition, and surface parameter calibration"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::string out_dir = ".";
    app.add_option("--config", config_path, "run configuration file (key = value lines)")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", seed_override, "override the run seed");
    app.add_option("--out", out_dir, "output directory for artifacts");

    auto* gen = app.add_subcommand("gen", "simulate the configured corpus");

    std::string manifest;
    auto* train = app.add_subcommand("train", "train a classifier on a corpus");
    train->add_option("manifest", manifest, "dataset manifest.json")
        ->required()
        ->check(CLI::ExistingFile);

    std::string model_path, eval_manifest;
    int stride = 10;
    auto* eval = app.add_subcommand("eval", "evaluate a model on a labeled corpus");
    eval->add_option("model", model_path, "model.json")->required()->check(CLI::ExistingFile);
    eval->add_option("manifest", eval_manifest, "dataset manifest.json")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--stride", stride, "window stride in samples")
        ->check(CLI::PositiveNumber);

    std::string classify_model, classify_csv;
    bool stream = false;
    auto* classify = app.add_subcommand("classify", "per-sample predictions for a recording");
    classify->add_option("model", classify_model, "model.json")
        ->required()
        ->check(CLI::ExistingFile);
    classify->add_option("csv", classify_csv, "recording in the episode CSV schema")
        ->required()
        ->check(CLI::ExistingFile);
    classify->add_flag("--stream", stream,
                       "use the incremental queue instead of batch windows");

    std::string ref_csv;
    std::optional<int> budget;
    auto* calibrate =
        app.add_subcommand("calibrate", "fit surface parameters to a reference recording");
    calibrate->add_option("ref", ref_csv, "reference recording CSV")
        ->required()
        ->check(CLI::ExistingFile);
    calibrate->add_option("--budget", budget, "simulation evaluation budget");

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "summarize the config or a JSON artifact");
    inspect->add_option("artifact", inspect_path, "manifest/model/calibration JSON")
        ->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Help/version exit 0; bad usage folds into the validation exit code.
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    return surfbench::run_with_exit_codes(std::cerr, [&] {
        surfbench::RunConfig cfg;
        if (!config_path.empty()) cfg = surfbench::load_config(config_path);
        if (seed_override) {
            cfg.seed = *seed_override;
            cfg.train.seed = *seed_override;
        }
        const fs::path out(out_dir);

        if (gen->parsed()) {
            surfbench::cmd_gen(cfg, out, std::cout);
        } else if (train->parsed()) {
            surfbench::cmd_train(cfg, manifest, out, std::cout);
        } else if (eval->parsed()) {
            surfbench::cmd_eval(model_path, eval_manifest, stride, out, std::cout);
        } else if (classify->parsed()) {
            surfbench::cmd_classify(classify_model, classify_csv, stream, out, std::cout);
        } else if (calibrate->parsed()) {
            surfbench::cmd_calibrate(cfg, ref_csv, budget.value_or(cfg.calib_budget), out,
                                     std::cout);
        } else if (inspect->parsed()) {
            std::optional<fs::path> artifact;
            if (!inspect_path.empty()) artifact = fs::path(inspect_path);
            surfbench::cmd_inspect(cfg, artifact, std::cout);
        }
    });
}
