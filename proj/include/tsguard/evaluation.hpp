#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tsguard/assembly.hpp"
#include "tsguard/attack.hpp"
#include "tsguard/data.hpp"

namespace tsguard {

/// The evaluation grid: a list of (eps_c, eps_f, eps_t) triplets crossed with
/// perturbed-step counts k and perturbed-sequence percentages pseq. k=0 and
/// pseq=0 both denote the clean condition and collapse into one clean row per
/// triplet.
struct GridSpec {
    std::vector<std::array<double, 3>> triplets; // (eps_c, eps_f, eps_t)
    std::vector<int> k_values = {1, 2, 3};
    std::vector<int> pseq_values = {0, 20, 50, 100};
    AttackConfig attack;
    std::uint64_t seed = 0;
};

struct GridResult {
    double eps_c = 0, eps_f = 0, eps_t = 0;
    int k = 0;
    int pseq = 0;
    std::array<double, 4> mse{}; // M1..M4
    double classifier_accuracy = 0;
    std::size_t n_perturbed = 0;
    std::size_t n_clean = 0;
    std::uint64_t seed = 0;
};

struct TrainedComponents {
    ForecasterParams f1;
    ForecasterParams f2;
    ClassifierParams classifier;
    DenoiserParams denoiser;
};

/// Components are keyed by their training radii (eps_c, eps_f), quantized to
/// milli-units so map keys are exact.
using EpsKey = std::pair<int, int>;
inline int eps_milli(double e) { return static_cast<int>(std::llround(e * 1000.0)); }
inline EpsKey eps_key(double eps_c, double eps_f) { return {eps_milli(eps_c), eps_milli(eps_f)}; }

struct PerturbedTestSet {
    WindowedDataset data;
    std::vector<int> flags; // 1 where the row was replaced by an attack output
};

/// Replaces a uniformly chosen floor(pseq*N/100)-subset of rows by masked
/// eps_t attack outputs against f1 (exact-k masks, one per row). k=0 or
/// pseq=0 leave the set untouched with all flags 0.
inline PerturbedTestSet perturb_test_set(const ForecasterParams& f1, const WindowedDataset& test,
                                         double eps_t, int k, int pseq_percent,
                                         const AttackConfig& attack_cfg, std::uint64_t seed) {
    if (pseq_percent < 0 || pseq_percent > 100)
        throw std::invalid_argument("perturb_test_set: pseq must be in [0, 100]");
    if (k < 0 || static_cast<std::size_t>(k) > test.steps())
        throw std::invalid_argument("perturb_test_set: k out of range");
    PerturbedTestSet out{test, std::vector<int>(test.rows(), 0)};
    const std::size_t n_pick = test.rows() * static_cast<std::size_t>(pseq_percent) / 100;
    if (k == 0 || n_pick == 0) return out;

    Rng subset_rng(derive_seed(seed, {1}));
    const std::vector<std::size_t> picked = subset_rng.sample_indices(test.rows(), n_pick);
    Tensor xs = detail::gather_rows(test.X, picked);
    Tensor ys({picked.size()});
    for (std::size_t r = 0; r < picked.size(); ++r) ys.data[r] = test.y.data[picked[r]];

    // attack in bounded batches, then mask each row independently
    Tensor adv(xs.shape);
    constexpr std::size_t chunk = 512;
    for (std::size_t start = 0, c = 0; start < picked.size(); start += chunk, ++c) {
        const std::size_t count = std::min(chunk, picked.size() - start);
        AttackConfig cfg = attack_cfg;
        cfg.seed = derive_seed(seed, {2, c});
        const PgdOutputs atk =
            pgd_attack(f1, xs.rows(start, count), ys.rows(start, count), cfg, eps_t, eps_t);
        adv.set_rows(start, atk.x_f);
    }
    Rng mask_rng(derive_seed(seed, {3}));
    const Tensor masked =
        mask_rows(xs, adv, MaskPolicy::exact_k(static_cast<std::size_t>(k)), mask_rng);
    for (std::size_t r = 0; r < picked.size(); ++r) {
        for (std::size_t j = 0; j < test.steps(); ++j)
            out.data.X.at2(picked[r], j) = masked.at2(r, j);
        out.flags[picked[r]] = 1;
    }
    return out;
}

/// Re-verifies the attack bound at evaluation time: flagged rows must sit in
/// the eps_t ball of their clean originals, unflagged rows must be untouched.
inline void audit_perturbation(const WindowedDataset& clean, const WindowedDataset& perturbed,
                               const std::vector<int>& flags, double eps_t) {
    if (clean.rows() != perturbed.rows() || flags.size() != clean.rows())
        throw ShapeError("audit_perturbation: misaligned inputs");
    for (std::size_t i = 0; i < clean.rows(); ++i) {
        double dist = 0.0;
        for (std::size_t j = 0; j < clean.steps(); ++j)
            dist = std::max(dist, std::abs(clean.X.at2(i, j) - perturbed.X.at2(i, j)));
        if (flags[i] == 0 && dist != 0.0)
            throw NumericError("audit: clean row " + std::to_string(i) + " was modified");
        if (dist > eps_t + 1e-9)
            throw NumericError("audit: row " + std::to_string(i) + " breaks the eps_t bound");
    }
}

using PredictorFn = std::function<Tensor(const Tensor&)>;

/// MSE per station over its test windows, then averaged uniformly across
/// stations.
inline double evaluate_mse(const PredictorFn& predictor, const WindowedDataset& test) {
    if (test.rows() == 0) throw std::invalid_argument("evaluate_mse: empty test set");
    const Tensor pred = predictor(test.X);
    if (pred.size() != test.rows()) throw ShapeError("evaluate_mse: predictor output size mismatch");
    std::vector<std::string> order;
    std::map<std::string, std::pair<double, std::size_t>> per_station; // (sq err sum, count)
    for (std::size_t i = 0; i < test.rows(); ++i) {
        auto [it, is_new] = per_station.try_emplace(test.station[i], std::make_pair(0.0, 0));
        if (is_new) order.push_back(test.station[i]);
        const double d = pred.data[i] - test.y.data[i];
        it->second.first += d * d;
        it->second.second += 1;
    }
    double acc = 0.0;
    for (const std::string& s : order) {
        const auto& [sq, count] = per_station[s];
        acc += sq / static_cast<double>(count);
    }
    return acc / static_cast<double>(order.size());
}

inline double evaluate_mse(const ModelVariant& model, const WindowedDataset& test) {
    return evaluate_mse([&model](const Tensor& X) { return predict(model, X); }, test);
}

/// Fraction of rows where the detector verdict equals the ground-truth flag.
inline double evaluate_classifier_accuracy(const DetectorFn& detector, const WindowedDataset& mix,
                                           const std::vector<int>& flags) {
    if (flags.size() != mix.rows())
        throw std::invalid_argument("evaluate_classifier_accuracy: misaligned flags");
    if (mix.rows() == 0) throw std::invalid_argument("evaluate_classifier_accuracy: empty set");
    const std::vector<int> got = detector(mix.X);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < flags.size(); ++i) hits += got[i] == flags[i];
    return static_cast<double>(hits) / static_cast<double>(flags.size());
}

inline double evaluate_classifier_accuracy(const ClassifierParams& c, const WindowedDataset& mix,
                                           const std::vector<int>& flags) {
    return evaluate_classifier_accuracy(detail::classifier_detector(c), mix, flags);
}

/// One GridResult per (triplet, k, pseq) cell plus one clean row per triplet;
/// within a cell all four models see the same perturbed set. Cell seeds are
/// derived from the grid seed and the cell coordinates, so results do not
/// depend on evaluation order.
inline std::vector<GridResult> run_grid(const GridSpec& spec,
                                        const std::map<EpsKey, TrainedComponents>& components,
                                        const WindowedDataset& test) {
    std::vector<GridResult> results;
    for (const auto& [eps_c, eps_f, eps_t] : spec.triplets) {
        const auto it = components.find(eps_key(eps_c, eps_f));
        if (it == components.end()) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "no trained components for (eps_c=%g, eps_f=%g)", eps_c,
                          eps_f);
            throw PrerequisiteError(buf);
        }
        const TrainedComponents& tc = it->second;
        const std::array<ModelVariant, 4> models = {
            make_m1(tc.f1), make_m2(tc.f2), make_m3(tc.classifier, tc.denoiser, tc.f1),
            make_m4(tc.classifier, tc.f1, tc.f2)};

        auto evaluate_cell = [&](const WindowedDataset& data, const std::vector<int>& flags, int k,
                                 int pseq, std::uint64_t cell_seed) {
            GridResult r;
            r.eps_c = eps_c;
            r.eps_f = eps_f;
            r.eps_t = eps_t;
            r.k = k;
            r.pseq = pseq;
            for (std::size_t mi = 0; mi < 4; ++mi) r.mse[mi] = evaluate_mse(models[mi], data);
            r.classifier_accuracy = evaluate_classifier_accuracy(tc.classifier, data, flags);
            for (int f : flags) r.n_perturbed += f;
            r.n_clean = data.rows() - r.n_perturbed;
            r.seed = cell_seed;
            results.push_back(r);
        };

        // the clean baseline row (k=0 / pseq=0) is always reported per triplet
        const std::uint64_t clean_seed = derive_seed(
            spec.seed,
            {static_cast<std::uint64_t>(eps_milli(eps_c)), static_cast<std::uint64_t>(eps_milli(eps_f)),
             static_cast<std::uint64_t>(eps_milli(eps_t)), 0, 0});
        evaluate_cell(test, std::vector<int>(test.rows(), 0), 0, 0, clean_seed);
        for (int pseq : spec.pseq_values) {
            if (pseq == 0) continue; // folded into the clean row
            for (int k : spec.k_values) {
                if (k == 0) continue;
                const std::uint64_t cell_seed = derive_seed(
                    spec.seed, {static_cast<std::uint64_t>(eps_milli(eps_c)),
                                static_cast<std::uint64_t>(eps_milli(eps_f)),
                                static_cast<std::uint64_t>(eps_milli(eps_t)),
                                static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(pseq)});
                PerturbedTestSet cell =
                    perturb_test_set(tc.f1, test, eps_t, k, pseq, spec.attack, cell_seed);
                audit_perturbation(test, cell.data, cell.flags, eps_t);
                evaluate_cell(cell.data, cell.flags, k, pseq, cell_seed);
            }
        }
    }
    return results;
}

// --------------------------------------------------------------------------
// report rendering
// --------------------------------------------------------------------------

namespace detail {

inline std::string shortest(double v) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::string fixed(double v, int places) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", places, v);
    return buf;
}

} // namespace detail

/// CSV with one row per (cell, model); doubles use shortest round-trip form.
inline std::string render_csv(const std::vector<GridResult>& results) {
    if (results.empty()) throw std::invalid_argument("render_csv: no results");
    std::string out =
        "eps_c,eps_f,eps_t,k,pseq,model,mse,classifier_accuracy,n_perturbed,n_clean,seed\n";
    for (const GridResult& r : results) {
        for (std::size_t mi = 0; mi < 4; ++mi) {
            out += detail::shortest(r.eps_c);
            out += ',';
            out += detail::shortest(r.eps_f);
            out += ',';
            out += detail::shortest(r.eps_t);
            out += ',';
            out += std::to_string(r.k);
            out += ',';
            out += std::to_string(r.pseq);
            out += ',';
            out += "M" + std::to_string(mi + 1);
            out += ',';
            out += detail::shortest(r.mse[mi]);
            out += ',';
            out += detail::shortest(r.classifier_accuracy);
            out += ',';
            out += std::to_string(r.n_perturbed);
            out += ',';
            out += std::to_string(r.n_clean);
            out += ',';
            out += std::to_string(r.seed);
            out += '\n';
        }
    }
    return out;
}

inline std::vector<GridResult> parse_results_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("results CSV is empty");
    std::vector<GridResult> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> f = detail::split_csv_line(line);
        if (f.size() != 11) throw ConfigError("bad results CSV row: " + line);
        const int model_index = f[5].size() == 2 && f[5][0] == 'M' ? f[5][1] - '1' : -1;
        if (model_index < 0 || model_index > 3) throw ConfigError("bad model tag in CSV: " + f[5]);
        GridResult probe;
        probe.eps_c = detail::parse_value(f[0], "eps_c");
        probe.eps_f = detail::parse_value(f[1], "eps_f");
        probe.eps_t = detail::parse_value(f[2], "eps_t");
        probe.k = static_cast<int>(detail::parse_value(f[3], "k"));
        probe.pseq = static_cast<int>(detail::parse_value(f[4], "pseq"));
        const bool same_cell =
            !out.empty() && out.back().eps_c == probe.eps_c && out.back().eps_f == probe.eps_f &&
            out.back().eps_t == probe.eps_t && out.back().k == probe.k && out.back().pseq == probe.pseq;
        if (!same_cell) out.push_back(probe);
        GridResult& r = out.back();
        r.mse[static_cast<std::size_t>(model_index)] = detail::parse_value(f[6], "mse");
        r.classifier_accuracy = detail::parse_value(f[7], "accuracy");
        r.n_perturbed = static_cast<std::size_t>(detail::parse_value(f[8], "n_perturbed"));
        r.n_clean = static_cast<std::size_t>(detail::parse_value(f[9], "n_clean"));
        r.seed = static_cast<std::uint64_t>(detail::parse_value(f[10], "seed"));
    }
    if (out.empty()) throw ConfigError("results CSV has no rows");
    return out;
}

/// Markdown pivots: clean-condition tables per (eps_c, eps_f), then MSE and
/// classifier-accuracy tables with %pseq rows and (triplet, k) columns. MSE
/// uses 4 decimals, accuracies 2 decimals (percent).
inline std::string render_markdown(const std::vector<GridResult>& results) {
    if (results.empty()) throw std::invalid_argument("render_markdown: no results");

    std::vector<std::array<double, 3>> triplets;
    std::vector<int> ks, pseqs;
    for (const GridResult& r : results) {
        const std::array<double, 3> t = {r.eps_c, r.eps_f, r.eps_t};
        if (std::find(triplets.begin(), triplets.end(), t) == triplets.end()) triplets.push_back(t);
        if (r.k != 0 && std::find(ks.begin(), ks.end(), r.k) == ks.end()) ks.push_back(r.k);
        if (r.pseq != 0 && std::find(pseqs.begin(), pseqs.end(), r.pseq) == pseqs.end())
            pseqs.push_back(r.pseq);
    }
    std::sort(ks.begin(), ks.end());
    std::sort(pseqs.begin(), pseqs.end());

    auto find_cell = [&](const std::array<double, 3>& t, int k, int pseq) -> const GridResult* {
        for (const GridResult& r : results)
            if (r.eps_c == t[0] && r.eps_f == t[1] && r.eps_t == t[2] && r.k == k && r.pseq == pseq)
                return &r;
        return nullptr;
    };
    auto triplet_label = [](const std::array<double, 3>& t) {
        return "(" + detail::shortest(t[0]) + "," + detail::shortest(t[1]) + "," +
               detail::shortest(t[2]) + ")";
    };

    std::string md = "# Evaluation report\n\n## Clean condition\n\n";
    // one clean column per distinct training pair (the clean rows of triplets
    // sharing (eps_c, eps_f) are identical by construction)
    std::vector<std::array<double, 3>> clean_cols;
    for (const auto& t : triplets) {
        bool seen = false;
        for (const auto& u : clean_cols) seen |= u[0] == t[0] && u[1] == t[1];
        if (!seen && find_cell(t, 0, 0)) clean_cols.push_back(t);
    }
    md += "| Model |";
    for (const auto& t : clean_cols)
        md += " (" + detail::shortest(t[0]) + "," + detail::shortest(t[1]) + ") |";
    md += "\n|---|";
    for (std::size_t i = 0; i < clean_cols.size(); ++i) md += "---|";
    md += "\n";
    for (std::size_t mi = 0; mi < 4; ++mi) {
        md += "| M" + std::to_string(mi + 1) + " |";
        for (const auto& t : clean_cols) md += " " + detail::fixed(find_cell(t, 0, 0)->mse[mi], 4) + " |";
        md += "\n";
    }
    md += "\nClassifier accuracy on clean data (%):\n\n| Training pair | Accuracy |\n|---|---|\n";
    for (const auto& t : clean_cols)
        md += "| (" + detail::shortest(t[0]) + "," + detail::shortest(t[1]) + ") | " +
              detail::fixed(100.0 * find_cell(t, 0, 0)->classifier_accuracy, 2) + " |\n";

    if (!ks.empty() && !pseqs.empty()) {
        md += "\n## MSE under perturbation\n\n| %pseq | Model |";
        for (const auto& t : triplets)
            for (int k : ks) md += " " + triplet_label(t) + " k=" + std::to_string(k) + " |";
        md += "\n|---|---|";
        for (std::size_t i = 0; i < triplets.size() * ks.size(); ++i) md += "---|";
        md += "\n";
        for (int pseq : pseqs)
            for (std::size_t mi = 0; mi < 4; ++mi) {
                md += "| " + std::to_string(pseq) + " | M" + std::to_string(mi + 1) + " |";
                for (const auto& t : triplets)
                    for (int k : ks) {
                        const GridResult* r = find_cell(t, k, pseq);
                        md += r ? " " + detail::fixed(r->mse[mi], 4) + " |" : " - |";
                    }
                md += "\n";
            }
        md += "\n## Classifier accuracy under perturbation (%)\n\n| %pseq |";
        for (const auto& t : triplets)
            for (int k : ks) md += " " + triplet_label(t) + " k=" + std::to_string(k) + " |";
        md += "\n|---|";
        for (std::size_t i = 0; i < triplets.size() * ks.size(); ++i) md += "---|";
        md += "\n";
        for (int pseq : pseqs) {
            md += "| " + std::to_string(pseq) + " |";
            for (const auto& t : triplets)
                for (int k : ks) {
                    const GridResult* r = find_cell(t, k, pseq);
                    md += r ? " " + detail::fixed(100.0 * r->classifier_accuracy, 2) + " |" : " - |";
                }
            md += "\n";
        }
    }
    return md;
}

} // namespace tsguard
