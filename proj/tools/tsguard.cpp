#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tsguard/log.hpp"
#include "tsguard/pipeline.hpp"

namespace {

std::array<double, 3> parse_triplet(const std::string& s) {
    std::array<double, 3> out{};
    std::size_t pos = 0;
    for (int i = 0; i < 3; ++i) {
        const std::size_t comma = s.find(',', pos);
        const std::string field =
            s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            out[static_cast<std::size_t>(i)] = std::stod(field);
        } catch (const std::exception&) {
            throw tsguard::ConfigError("--triplet expects eps_c,eps_f,eps_t");
        }
        if (i < 2) {
            if (comma == std::string::npos)
                throw tsguard::ConfigError("--triplet expects eps_c,eps_f,eps_t");
            pos = comma + 1;
        } else if (comma != std::string::npos) {
            throw tsguard::ConfigError("--triplet expects exactly three values");
        }
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    tsguard::init_log_level_from_env();

    CLI::App app{"PGD poisoning attacks and hybrid defenses for hourly traffic forecasting"};
    app.fallthrough();
    app.require_subcommand(1);

    std::string config_path, out_dir, triplet_str, component;
    std::uint64_t seed = 0;
    int jobs = 1;
    auto* opt_config = app.add_option("--config", config_path, "experiment config (JSON)");
    auto* opt_seed = app.add_option("--seed", seed, "master seed override");
    auto* opt_out = app.add_option("--out", out_dir, "output directory override");
    auto* opt_jobs = app.add_option("--jobs", jobs, "max concurrent trainings");
    auto* opt_triplet =
        app.add_option("--triplet", triplet_str, "restrict the grid to one eps_c,eps_f,eps_t");

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic dataset CSV");
    CLI::App* train = app.add_subcommand("train", "train a component against the dataset");
    train->add_option("--component", component, "f1, f2, classifier, denoiser, or all")->required();
    CLI::App* eval = app.add_subcommand("eval", "evaluate the model grid and write reports");
    app.add_subcommand("report", "re-render report.md from an existing results.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        tsguard::ExperimentConfig cfg =
            opt_config->count() ? tsguard::load_config(config_path) : tsguard::ExperimentConfig{};
        if (opt_seed->count()) cfg.seed = seed;
        if (opt_out->count()) cfg.out_dir = out_dir;
        if (opt_jobs->count()) cfg.jobs = jobs;
        if (opt_triplet->count()) cfg.grid.triplets = {parse_triplet(triplet_str)};

        if (synth->parsed()) {
            cmd_synth(cfg);
        } else if (train->parsed()) {
            cmd_train(cfg, component);
        } else if (eval->parsed()) {
            cmd_eval(cfg);
        } else {
            cmd_report(cfg);
        }
        return 0;
    } catch (const tsguard::ConfigError& e) {
        tsguard::log_error(e.what());
        return 2;
    } catch (const tsguard::PrerequisiteError& e) {
        tsguard::log_error(e.what());
        return 3;
    } catch (const tsguard::NumericError& e) {
        tsguard::log_error(e.what());
        return 4;
    } catch (const std::invalid_argument& e) {
        tsguard::log_error(e.what());
        return 2;
    } catch (const std::exception& e) {
        tsguard::log_error(e.what());
        return 1;
    }
}
