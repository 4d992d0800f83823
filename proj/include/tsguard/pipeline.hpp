#pragma once

#include <atomic>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "tsguard/config.hpp"
#include "tsguard/log.hpp"
#include "tsguard/serialize.hpp"

namespace tsguard {

namespace detail {

/// Runs independent tasks on up to `jobs` threads; each task is internally
/// deterministic, so scheduling order cannot change any output.
inline void run_parallel(std::vector<std::function<void()>> tasks, int jobs) {
    if (jobs <= 1 || tasks.size() <= 1) {
        for (auto& t : tasks) t();
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            try {
                tasks[i]();
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(jobs), tasks.size());
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw PrerequisiteError("missing file: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw PrerequisiteError("cannot open for writing: " + path.string());
    os << text;
    if (!os) throw PrerequisiteError("write failed: " + path.string());
}

} // namespace detail

struct SynthStats {
    std::size_t stations = 0;
    std::size_t hours_per_station = 0;
    double mean_normalized_std = 0.0;
};

/// Generates the synthetic dataset, writes it in the CSV schema, and reports
/// the calibration statistic.
inline SynthStats cmd_synth(const ExperimentConfig& cfg) {
    validate(cfg);
    if (cfg.data.source != "synthetic")
        throw ConfigError("cmd_synth requires data.source = \"synthetic\"");
    SyntheticSpec spec{cfg.data.stations, cfg.data.weeks, cfg.data.noise_scale, cfg.synth_seed()};
    const std::vector<StationSeries> series = generate_synthetic(spec);
    std::filesystem::create_directories(cfg.dataset_path().parent_path());
    write_csv(series, cfg.dataset_path());
    SynthStats stats{series.size(), series.empty() ? 0 : series[0].values.size(),
                     mean_normalized_std(series, cfg.data.train_weeks * hours_per_week)};
    log_info("wrote " + cfg.dataset_path().string() + " (" + std::to_string(stats.stations) +
             " stations x " + std::to_string(stats.hours_per_station) +
             " hours, mean normalized std " + detail::fixed(stats.mean_normalized_std, 4) + ")");
    return stats;
}

/// CSV -> station selection -> normalization -> windows -> train/test split.
inline DatasetSplits load_dataset(const ExperimentConfig& cfg) {
    std::vector<StationSeries> series = load_csv(cfg.dataset_path());
    if (cfg.data.select_count > series.size())
        throw ConfigError("data.select_count exceeds stations present in " +
                          cfg.dataset_path().string());
    series = select_stations(series, cfg.data.select_count, cfg.select_seed());
    return prepare_dataset(series, cfg.data.train_weeks, cfg.data.test_weeks);
}

namespace detail {

inline void require_f1(const ExperimentConfig& cfg, const std::string& component) {
    if (!std::filesystem::exists(f1_path(cfg)))
        throw PrerequisiteError("training " + component + " requires a trained f1 (missing " +
                                f1_path(cfg).string() + "); run `train --component f1` first");
}

inline std::ofstream open_log(const ExperimentConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.logs_dir());
    const auto path = cfg.logs_dir() / (name + ".jsonl");
    std::ofstream os(path);
    if (!os) throw PrerequisiteError("cannot open for writing: " + path.string());
    return os;
}

inline void train_one(const ExperimentConfig& cfg, const DatasetSplits& data,
                      const std::string& component) {
    std::filesystem::create_directories(cfg.params_dir());
    if (component == "f1") {
        std::ofstream log = open_log(cfg, "f1");
        const ForecasterParams f1 = train_f1(data.train, cfg.forecaster_arch(), cfg.hp_f1(), &log);
        save_params(f1_path(cfg), f1);
        log_info("wrote " + f1_path(cfg).string());
        return;
    }
    require_f1(cfg, component);
    const ForecasterParams f1 = load_forecaster(f1_path(cfg));
    if (component == "f2") {
        std::ofstream log = open_log(cfg, "f2");
        const ForecasterParams f2 = train_f2(data.train, f1, cfg.forecaster_arch(), cfg.hp_f2(),
                                             cfg.epsilons.eps_f, cfg.attack, &log);
        save_params(f2_path(cfg), f2);
        log_info("wrote " + f2_path(cfg).string());
        return;
    }
    if (component == "classifier") {
        std::vector<std::function<void()>> tasks;
        for (double eps_c : cfg.epsilons.eps_c) {
            tasks.push_back([&cfg, &data, &f1, eps_c] {
                const std::string name =
                    "c_c" + detail::fmt_eps(eps_c) + "_f" + detail::fmt_eps(cfg.epsilons.eps_f);
                std::ofstream log = open_log(cfg, name);
                const ClassifierParams c =
                    train_classifier(data.train, f1, cfg.classifier_arch(), cfg.hp_classifier(eps_c),
                                     eps_c, cfg.epsilons.eps_f, cfg.attack, &log);
                save_params(classifier_path(cfg, eps_c), c);
                log_info("wrote " + classifier_path(cfg, eps_c).string());
            });
        }
        run_parallel(std::move(tasks), cfg.jobs);
        return;
    }
    if (component == "denoiser") {
        std::ofstream log = open_log(cfg, "denoiser");
        const DenoiserParams d = train_denoiser(data.train, f1, cfg.denoiser_arch(),
                                                cfg.hp_denoiser(), cfg.epsilons.eps_f, cfg.attack, &log);
        save_params(denoiser_path(cfg), d);
        log_info("wrote " + denoiser_path(cfg).string());
        return;
    }
    throw ConfigError("unknown component '" + component +
                      "' (expected f1, f2, classifier, denoiser, or all)");
}

} // namespace detail

/// Trains one component (or `all`: f1 first, then f2/classifier/denoiser,
/// concurrently up to --jobs).
inline void cmd_train(const ExperimentConfig& cfg, const std::string& component) {
    validate(cfg);
    const DatasetSplits data = load_dataset(cfg);
    if (component == "all") {
        detail::train_one(cfg, data, "f1");
        std::vector<std::function<void()>> tasks;
        for (const char* c : {"f2", "classifier", "denoiser"})
            tasks.push_back([&cfg, &data, c] { detail::train_one(cfg, data, c); });
        detail::run_parallel(std::move(tasks), cfg.jobs);
        return;
    }
    detail::train_one(cfg, data, component);
}

struct EvalOutputs {
    std::filesystem::path results_csv;
    std::filesystem::path report_md;
};

/// Loads every component the grid's triplets need, runs the grid, and writes
/// results.csv, report.md, and per-model manifests.
inline EvalOutputs cmd_eval(const ExperimentConfig& cfg) {
    validate(cfg);
    const DatasetSplits data = load_dataset(cfg);

    std::map<EpsKey, TrainedComponents> components;
    for (const auto& t : cfg.grid.triplets) {
        const EpsKey key = eps_key(t[0], t[1]);
        if (components.count(key)) continue;
        TrainedComponents tc{load_forecaster(f1_path(cfg)), load_forecaster(f2_path(cfg)),
                             load_classifier(classifier_path(cfg, t[0])),
                             load_denoiser(denoiser_path(cfg))};
        components.emplace(key, std::move(tc));
    }

    GridSpec spec;
    spec.triplets = cfg.grid.triplets;
    spec.k_values = cfg.grid.k_values;
    spec.pseq_values = cfg.grid.pseq_values;
    spec.attack = cfg.attack;
    spec.seed = cfg.grid_seed();
    const std::vector<GridResult> results = run_grid(spec, components, data.test);

    std::filesystem::create_directories(cfg.out_dir);
    detail::write_text_file(cfg.results_csv_path(), render_csv(results));
    detail::write_text_file(cfg.report_md_path(), render_markdown(results));

    std::filesystem::create_directories(cfg.models_dir());
    write_model_manifest(cfg.models_dir() / "m1.json", ModelTag::m1, {{"f1", f1_path(cfg)}});
    write_model_manifest(cfg.models_dir() /
                             ("m2_f" + detail::fmt_eps(cfg.epsilons.eps_f) + ".json"),
                         ModelTag::m2, {{"f2", f2_path(cfg)}});
    for (const auto& [key, tc] : components) {
        const double eps_c = key.first / 1000.0;
        const std::string suffix =
            "_c" + detail::fmt_eps(eps_c) + "_f" + detail::fmt_eps(cfg.epsilons.eps_f) + ".json";
        write_model_manifest(cfg.models_dir() / ("m3" + suffix), ModelTag::m3,
                             {{"classifier", classifier_path(cfg, eps_c)},
                              {"denoiser", denoiser_path(cfg)},
                              {"f1", f1_path(cfg)}});
        write_model_manifest(cfg.models_dir() / ("m4" + suffix), ModelTag::m4,
                             {{"classifier", classifier_path(cfg, eps_c)},
                              {"f1", f1_path(cfg)},
                              {"f2", f2_path(cfg)}});
    }
    log_info("wrote " + cfg.results_csv_path().string() + " and " + cfg.report_md_path().string());
    return {cfg.results_csv_path(), cfg.report_md_path()};
}

/// Re-renders report.md from an existing results.csv.
inline void cmd_report(const ExperimentConfig& cfg) {
    const std::string csv = detail::read_text_file(cfg.results_csv_path());
    detail::write_text_file(cfg.report_md_path(), render_markdown(parse_results_csv(csv)));
    log_info("wrote " + cfg.report_md_path().string());
}

} // namespace tsguard
