#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsguard/networks.hpp"
#include "tsguard/serialize.hpp"

namespace tsguard {

enum class ModelTag { m1, m2, m3, m4 };

inline const char* to_string(ModelTag t) {
    switch (t) {
    case ModelTag::m1: return "M1";
    case ModelTag::m2: return "M2";
    case ModelTag::m3: return "M3";
    case ModelTag::m4: return "M4";
    }
    return "?";
}

inline ModelTag model_tag_from_string(const std::string& s) {
    if (s == "M1") return ModelTag::m1;
    if (s == "M2") return ModelTag::m2;
    if (s == "M3") return ModelTag::m3;
    if (s == "M4") return ModelTag::m4;
    throw ConfigError("unknown model tag: " + s);
}

/// Per-sequence perturbation verdicts (0 clean, 1 perturbed) for a batch.
using DetectorFn = std::function<std::vector<int>(const Tensor&)>;

/// An inference-time composition of trained components. Components are
/// borrowed, never owned or mutated. The detector defaults to the trained
/// classifier's decisions and can be substituted (stubs, oracles).
struct ModelVariant {
    ModelTag tag = ModelTag::m1;
    const ForecasterParams* f1 = nullptr;
    const ForecasterParams* f2 = nullptr;
    const ClassifierParams* classifier = nullptr;
    const DenoiserParams* denoiser = nullptr;
    DetectorFn detector;
};

namespace detail {
inline DetectorFn classifier_detector(const ClassifierParams& c) {
    return [&c](const Tensor& X) { return classify(c, X); };
}
} // namespace detail

inline ModelVariant make_m1(const ForecasterParams& f1) {
    return ModelVariant{ModelTag::m1, &f1, nullptr, nullptr, nullptr, {}};
}

inline ModelVariant make_m2(const ForecasterParams& f2) {
    return ModelVariant{ModelTag::m2, nullptr, &f2, nullptr, nullptr, {}};
}

inline ModelVariant make_m3(const ClassifierParams& c, const DenoiserParams& d,
                            const ForecasterParams& f1) {
    return ModelVariant{ModelTag::m3, &f1, nullptr, &c, &d, detail::classifier_detector(c)};
}

inline ModelVariant make_m4(const ClassifierParams& c, const ForecasterParams& f1,
                            const ForecasterParams& f2) {
    return ModelVariant{ModelTag::m4, &f1, &f2, &c, nullptr, detail::classifier_detector(c)};
}

inline ModelVariant with_detector(ModelVariant m, DetectorFn d) {
    m.detector = std::move(d);
    return m;
}

namespace detail {

inline void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("model variant is missing ") + what);
}

inline Tensor gather_rows(const Tensor& X, const std::vector<std::size_t>& idx) {
    const std::size_t n = X.shape.at(1);
    Tensor out({idx.size(), n});
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) out.at2(r, j) = X.at2(idx[r], j);
    return out;
}

} // namespace detail

/// Routing per Fig.-2 semantics, decided independently per sequence:
///   M1: f1(x)            M3: classify=1 ? f1(denoise(x)) : f1(x)
///   M2: f2(x)            M4: classify=1 ? f2(x) : f1(x)
/// All components run in eval mode; nothing is mutated.
inline Tensor predict(const ModelVariant& m, const Tensor& X) {
    switch (m.tag) {
    case ModelTag::m1:
        detail::require(m.f1 != nullptr, "f1");
        return forecaster_predict(*m.f1, X);
    case ModelTag::m2:
        detail::require(m.f2 != nullptr, "f2");
        return forecaster_predict(*m.f2, X);
    case ModelTag::m3: {
        detail::require(m.f1 != nullptr, "f1");
        detail::require(m.denoiser != nullptr, "denoiser");
        detail::require(static_cast<bool>(m.detector), "a detector");
        const std::vector<int> labels = m.detector(X);
        std::vector<std::size_t> flagged;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == 1) flagged.push_back(i);
        if (flagged.empty()) return forecaster_predict(*m.f1, X);
        Tensor routed = X;
        const Tensor denoised = denoiser_predict(*m.denoiser, detail::gather_rows(X, flagged));
        for (std::size_t r = 0; r < flagged.size(); ++r)
            for (std::size_t j = 0; j < X.shape[1]; ++j)
                routed.at2(flagged[r], j) = denoised.at2(r, j);
        return forecaster_predict(*m.f1, routed);
    }
    case ModelTag::m4: {
        detail::require(m.f1 != nullptr, "f1");
        detail::require(m.f2 != nullptr, "f2");
        detail::require(static_cast<bool>(m.detector), "a detector");
        const std::vector<int> labels = m.detector(X);
        std::vector<std::size_t> clean_rows, flagged;
        for (std::size_t i = 0; i < labels.size(); ++i)
            (labels[i] == 1 ? flagged : clean_rows).push_back(i);
        Tensor out({labels.size()});
        if (!clean_rows.empty()) {
            const Tensor p = forecaster_predict(*m.f1, detail::gather_rows(X, clean_rows));
            for (std::size_t r = 0; r < clean_rows.size(); ++r) out.data[clean_rows[r]] = p.data[r];
        }
        if (!flagged.empty()) {
            const Tensor p = forecaster_predict(*m.f2, detail::gather_rows(X, flagged));
            for (std::size_t r = 0; r < flagged.size(); ++r) out.data[flagged[r]] = p.data[r];
        }
        return out;
    }
    }
    throw std::invalid_argument("predict: unknown model tag");
}

struct Route {
    enum class Path { direct_f1, denoise_then_f1, f2 };
    int label;
    Path path;
};

/// The classifier decision and the forwarding path taken, per sequence.
/// Only meaningful for the classifier-routed variants (M3, M4).
inline std::vector<Route> routing_report(const ModelVariant& m, const Tensor& X) {
    if (m.tag != ModelTag::m3 && m.tag != ModelTag::m4)
        throw std::invalid_argument("routing_report: model has no classifier routing");
    detail::require(static_cast<bool>(m.detector), "a detector");
    const std::vector<int> labels = m.detector(X);
    std::vector<Route> out;
    out.reserve(labels.size());
    for (int l : labels) {
        if (l == 1)
            out.push_back({l, m.tag == ModelTag::m3 ? Route::Path::denoise_then_f1 : Route::Path::f2});
        else
            out.push_back({l, Route::Path::direct_f1});
    }
    return out;
}

// --------------------------------------------------------------------------
// model manifests: models are assembled for inference from separately trained
// parameter files listed in a small JSON document.
// --------------------------------------------------------------------------

inline void write_model_manifest(const std::filesystem::path& path, ModelTag tag,
                                 const std::map<std::string, std::filesystem::path>& components) {
    nlohmann::json doc;
    doc["tag"] = to_string(tag);
    nlohmann::json comps;
    for (const auto& [name, file] : components) comps[name] = file.string();
    doc["components"] = comps;
    std::ofstream os(path);
    if (!os) throw PrerequisiteError("cannot open for writing: " + path.string());
    os << doc.dump(2) << '\n';
}

/// Owns the components referenced by a manifest; view() borrows them as a
/// ModelVariant.
struct LoadedModel {
    ModelTag tag = ModelTag::m1;
    std::optional<ForecasterParams> f1, f2;
    std::optional<ClassifierParams> classifier;
    std::optional<DenoiserParams> denoiser;

    ModelVariant view() const {
        switch (tag) {
        case ModelTag::m1: return make_m1(*f1);
        case ModelTag::m2: return make_m2(*f2);
        case ModelTag::m3: return make_m3(*classifier, *denoiser, *f1);
        case ModelTag::m4: return make_m4(*classifier, *f1, *f2);
        }
        throw std::invalid_argument("LoadedModel: unknown tag");
    }
};

inline LoadedModel load_model(const std::filesystem::path& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw PrerequisiteError("missing model manifest: " + manifest_path.string());
    nlohmann::json doc = nlohmann::json::parse(is, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("bad model manifest: " + manifest_path.string());
    LoadedModel model;
    model.tag = model_tag_from_string(doc.at("tag").get<std::string>());
    const auto& comps = doc.at("components");
    auto component_path = [&](const char* name) {
        if (!comps.contains(name))
            throw ConfigError("manifest " + manifest_path.string() + " lacks component " + name);
        return std::filesystem::path(comps.at(name).get<std::string>());
    };
    switch (model.tag) {
    case ModelTag::m1:
        model.f1 = load_forecaster(component_path("f1"));
        break;
    case ModelTag::m2:
        model.f2 = load_forecaster(component_path("f2"));
        break;
    case ModelTag::m3:
        model.classifier = load_classifier(component_path("classifier"));
        model.denoiser = load_denoiser(component_path("denoiser"));
        model.f1 = load_forecaster(component_path("f1"));
        break;
    case ModelTag::m4:
        model.classifier = load_classifier(component_path("classifier"));
        model.f1 = load_forecaster(component_path("f1"));
        model.f2 = load_forecaster(component_path("f2"));
        break;
    }
    return model;
}

} // namespace tsguard
