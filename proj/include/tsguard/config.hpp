#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsguard/attack.hpp"
#include "tsguard/data.hpp"
#include "tsguard/evaluation.hpp"
#include "tsguard/networks.hpp"
#include "tsguard/training.hpp"

namespace tsguard {

/// Experiment configuration: one JSON document drives the whole pipeline.
/// Seeds left unset derive from the master seed, so a single --seed makes the
/// full run reproducible.
struct DataConfig {
    std::string source = "synthetic"; // "synthetic" | "csv"
    std::string csv_path;             // empty: <out_dir>/data.csv
    std::size_t stations = 100;       // synthetic generation count
    int weeks = 8;
    double noise_scale = SyntheticSpec{}.noise_scale;
    std::optional<std::uint64_t> synth_seed;
    std::size_t select_count = 100;
    std::optional<std::uint64_t> select_seed;
    int train_weeks = 7;
    int test_weeks = 1;
};

struct ArchConfig {
    std::size_t forecaster_hidden = 32;
    std::size_t classifier_blocks = 2;
    std::size_t classifier_channels = 8;
    std::size_t denoiser_hidden = 8;
    std::size_t window = 3;
    double dropout = 0.1;
};

struct ComponentHp {
    int epochs;
    double learning_rate;
    double weight_decay;
    double gamma;
    int scheduler_step;
    std::optional<std::uint64_t> seed;
};

struct TrainingConfig {
    std::size_t batch_size = 512;
    ComponentHp f1 = {10, 0.008, 0.2, 0.5, 5, std::nullopt};
    ComponentHp f2 = {15, 0.008, 0.2, 0.5, 5, std::nullopt};
    ComponentHp classifier = {40, 0.01, 0.02, 0.5, 10, std::nullopt};
    ComponentHp denoiser = {40, 0.005, 0.1, 0.5, 5, std::nullopt};
};

struct EpsilonConfig {
    double eps_f = 0.3; // eps_d is tied to eps_f
    std::vector<double> eps_c = {0.2, 0.3};
};

struct GridConfig {
    std::vector<std::array<double, 3>> triplets = {
        {0.3, 0.3, 0.3}, {0.3, 0.3, 0.2},  {0.2, 0.3, 0.3}, {0.2, 0.3, 0.2},
        {0.2, 0.3, 0.15}, {0.2, 0.3, 0.1}, {0.2, 0.3, 0.4}};
    std::vector<int> k_values = {1, 2, 3};
    std::vector<int> pseq_values = {0, 20, 50, 100};
    std::optional<std::uint64_t> seed;
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "out";
    int jobs = 1;
    DataConfig data;
    ArchConfig arch;
    TrainingConfig training;
    AttackConfig attack; // attack.seed is per-use; the config field is ignored
    EpsilonConfig epsilons;
    GridConfig grid;

    // resolved seeds
    std::uint64_t synth_seed() const { return data.synth_seed.value_or(derive_seed(seed, {0x01})); }
    std::uint64_t select_seed() const { return data.select_seed.value_or(derive_seed(seed, {0x02})); }
    std::uint64_t grid_seed() const { return grid.seed.value_or(derive_seed(seed, {0x20})); }

    ForecasterArch forecaster_arch() const { return {arch.forecaster_hidden, arch.window, arch.dropout}; }
    ClassifierArch classifier_arch() const {
        return {arch.classifier_blocks, arch.classifier_channels, arch.window, arch.dropout};
    }
    DenoiserArch denoiser_arch() const { return {arch.denoiser_hidden, arch.window, arch.dropout}; }

    HyperParams hp(const ComponentHp& c, std::uint64_t fallback_tag) const {
        return {c.epochs,       c.learning_rate, c.weight_decay,
                c.gamma,        c.scheduler_step, training.batch_size,
                c.seed.value_or(derive_seed(seed, {fallback_tag}))};
    }
    HyperParams hp_f1() const { return hp(training.f1, 0x10); }
    HyperParams hp_f2() const { return hp(training.f2, 0x11); }
    HyperParams hp_classifier(double eps_c) const {
        HyperParams h = hp(training.classifier, 0x12);
        if (!training.classifier.seed)
            h.seed = derive_seed(seed, {0x12, static_cast<std::uint64_t>(eps_milli(eps_c))});
        return h;
    }
    HyperParams hp_denoiser() const { return hp(training.denoiser, 0x13); }

    // layout
    std::filesystem::path dataset_path() const {
        return data.csv_path.empty() ? std::filesystem::path(out_dir) / "data.csv"
                                     : std::filesystem::path(data.csv_path);
    }
    std::filesystem::path params_dir() const { return std::filesystem::path(out_dir) / "params"; }
    std::filesystem::path logs_dir() const { return std::filesystem::path(out_dir) / "logs"; }
    std::filesystem::path models_dir() const { return std::filesystem::path(out_dir) / "models"; }
    std::filesystem::path results_csv_path() const {
        return std::filesystem::path(out_dir) / "results.csv";
    }
    std::filesystem::path report_md_path() const {
        return std::filesystem::path(out_dir) / "report.md";
    }
};

namespace detail {

inline std::string fmt_eps(double e) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", e);
    return buf;
}

} // namespace detail

inline std::filesystem::path f1_path(const ExperimentConfig& cfg) {
    return cfg.params_dir() / "f1.bin";
}
inline std::filesystem::path f2_path(const ExperimentConfig& cfg) {
    return cfg.params_dir() / ("f2_f" + detail::fmt_eps(cfg.epsilons.eps_f) + ".bin");
}
inline std::filesystem::path classifier_path(const ExperimentConfig& cfg, double eps_c) {
    return cfg.params_dir() / ("c_c" + detail::fmt_eps(eps_c) + "_f" +
                               detail::fmt_eps(cfg.epsilons.eps_f) + ".bin");
}
inline std::filesystem::path denoiser_path(const ExperimentConfig& cfg) {
    return cfg.params_dir() / ("d_f" + detail::fmt_eps(cfg.epsilons.eps_f) + ".bin");
}

// --------------------------------------------------------------------------
// JSON loading (partial documents overlay the defaults)
// --------------------------------------------------------------------------

namespace detail {

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, std::optional<T>& out) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

inline void load_component_hp(const nlohmann::json& j, const char* key, ComponentHp& out) {
    if (!j.contains(key)) return;
    const nlohmann::json& c = j.at(key);
    get_if(c, "epochs", out.epochs);
    get_if(c, "learning_rate", out.learning_rate);
    get_if(c, "weight_decay", out.weight_decay);
    get_if(c, "gamma", out.gamma);
    get_if(c, "scheduler_step", out.scheduler_step);
    get_if(c, "seed", out.seed);
}

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    detail::get_if(j, "seed", cfg.seed);
    detail::get_if(j, "out_dir", cfg.out_dir);
    detail::get_if(j, "jobs", cfg.jobs);
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::get_if(d, "source", cfg.data.source);
        detail::get_if(d, "csv_path", cfg.data.csv_path);
        detail::get_if(d, "stations", cfg.data.stations);
        detail::get_if(d, "weeks", cfg.data.weeks);
        detail::get_if(d, "noise_scale", cfg.data.noise_scale);
        detail::get_if(d, "synth_seed", cfg.data.synth_seed);
        detail::get_if(d, "select_count", cfg.data.select_count);
        detail::get_if(d, "select_seed", cfg.data.select_seed);
        detail::get_if(d, "train_weeks", cfg.data.train_weeks);
        detail::get_if(d, "test_weeks", cfg.data.test_weeks);
    }
    if (j.contains("arch")) {
        const auto& a = j.at("arch");
        detail::get_if(a, "forecaster_hidden", cfg.arch.forecaster_hidden);
        detail::get_if(a, "classifier_blocks", cfg.arch.classifier_blocks);
        detail::get_if(a, "classifier_channels", cfg.arch.classifier_channels);
        detail::get_if(a, "denoiser_hidden", cfg.arch.denoiser_hidden);
        detail::get_if(a, "window", cfg.arch.window);
        detail::get_if(a, "dropout", cfg.arch.dropout);
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        detail::get_if(t, "batch_size", cfg.training.batch_size);
        detail::load_component_hp(t, "f1", cfg.training.f1);
        detail::load_component_hp(t, "f2", cfg.training.f2);
        detail::load_component_hp(t, "classifier", cfg.training.classifier);
        detail::load_component_hp(t, "denoiser", cfg.training.denoiser);
    }
    if (j.contains("attack")) {
        const auto& a = j.at("attack");
        detail::get_if(a, "steps", cfg.attack.steps);
        std::optional<double> alpha;
        detail::get_if(a, "alpha", alpha);
        if (alpha) cfg.attack.alpha = alpha;
        std::string init;
        detail::get_if(a, "init", init);
        if (init == "zero") cfg.attack.init = PgdInit::zero;
        else if (init == "uniform" || init.empty()) cfg.attack.init = PgdInit::uniform;
        else throw ConfigError("attack.init must be 'zero' or 'uniform'");
        detail::get_if(a, "clamp_to_unit", cfg.attack.clamp_to_unit);
    }
    if (j.contains("epsilons")) {
        const auto& e = j.at("epsilons");
        detail::get_if(e, "eps_f", cfg.epsilons.eps_f);
        detail::get_if(e, "eps_c", cfg.epsilons.eps_c);
    }
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        detail::get_if(g, "triplets", cfg.grid.triplets);
        detail::get_if(g, "k", cfg.grid.k_values);
        detail::get_if(g, "pseq", cfg.grid.pseq_values);
        detail::get_if(g, "seed", cfg.grid.seed);
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw PrerequisiteError("missing config file: " + path.string());
    nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path.string());
    return config_from_json(j);
}

/// Rejects invalid budgets before any compute starts.
inline void validate(const ExperimentConfig& cfg) {
    if (cfg.jobs < 1) throw ConfigError("jobs must be >= 1");
    if (cfg.data.source != "synthetic" && cfg.data.source != "csv")
        throw ConfigError("data.source must be 'synthetic' or 'csv'");
    if (cfg.data.stations < 1) throw ConfigError("data.stations must be >= 1");
    if (cfg.data.select_count < 1) throw ConfigError("data.select_count must be >= 1");
    if (cfg.data.source == "synthetic" && cfg.data.select_count > cfg.data.stations)
        throw ConfigError("data.select_count exceeds generated stations");
    if (cfg.data.train_weeks < 1 || cfg.data.test_weeks < 1)
        throw ConfigError("train_weeks and test_weeks must be >= 1");
    if (cfg.data.weeks < cfg.data.train_weeks + cfg.data.test_weeks)
        throw ConfigError("data.weeks must cover train_weeks + test_weeks");
    if (cfg.arch.dropout < 0.0 || cfg.arch.dropout >= 1.0)
        throw ConfigError("arch.dropout must be in [0, 1)");
    if (cfg.arch.window < 1) throw ConfigError("arch.window must be >= 1");
    if (cfg.training.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    for (const ComponentHp* c :
         {&cfg.training.f1, &cfg.training.f2, &cfg.training.classifier, &cfg.training.denoiser}) {
        if (c->epochs < 1) throw ConfigError("training epochs must be >= 1");
        if (c->learning_rate < 0.0) throw ConfigError("learning_rate must be nonnegative");
        if (c->scheduler_step < 1) throw ConfigError("scheduler_step must be >= 1");
    }
    if (cfg.attack.steps < 1) throw ConfigError("attack.steps must be >= 1");
    if (cfg.attack.alpha && *cfg.attack.alpha <= 0.0) throw ConfigError("attack.alpha must be positive");
    if (cfg.epsilons.eps_f < 0.0) throw ConfigError("epsilons.eps_f must be nonnegative");
    for (double ec : cfg.epsilons.eps_c) {
        if (ec < 0.0) throw ConfigError("epsilons.eps_c values must be nonnegative");
        if (ec > cfg.epsilons.eps_f)
            throw ConfigError("epsilon budget violated: eps_c " + detail::fmt_eps(ec) +
                              " exceeds eps_f " + detail::fmt_eps(cfg.epsilons.eps_f));
    }
    for (const auto& t : cfg.grid.triplets) {
        if (t[0] < 0.0 || t[1] < 0.0 || t[2] < 0.0)
            throw ConfigError("grid triplet radii must be nonnegative");
        if (t[0] > t[1])
            throw ConfigError("epsilon budget violated in triplet: eps_c " + detail::fmt_eps(t[0]) +
                              " exceeds eps_f " + detail::fmt_eps(t[1]));
        if (eps_milli(t[1]) != eps_milli(cfg.epsilons.eps_f))
            throw ConfigError("triplet eps_f " + detail::fmt_eps(t[1]) +
                              " is not the configured training eps_f");
        bool known = false;
        for (double ec : cfg.epsilons.eps_c) known |= eps_milli(ec) == eps_milli(t[0]);
        if (!known)
            throw ConfigError("triplet eps_c " + detail::fmt_eps(t[0]) +
                              " is not in epsilons.eps_c, so no classifier would be trained for it");
    }
    for (int k : cfg.grid.k_values)
        if (k < 0 || static_cast<std::size_t>(k) > cfg.arch.window)
            throw ConfigError("grid k values must be in [0, window]");
    for (int p : cfg.grid.pseq_values)
        if (p < 0 || p > 100) throw ConfigError("grid pseq values must be in [0, 100]");
}

} // namespace tsguard
