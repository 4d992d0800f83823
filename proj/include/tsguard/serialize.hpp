#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsguard/errors.hpp"
#include "tsguard/networks.hpp"

namespace tsguard {

// Parameter files are a single JSON header line (component kind, architecture
// descriptor, tensor order with shapes) followed by the tensors' raw 64-bit
// little-endian floats in the listed order. Reload round-trips bit-exactly.

namespace detail {

inline void write_doubles_le(std::ostream& os, const std::vector<double>& v) {
    for (double d : v) {
        const auto bits = std::bit_cast<std::uint64_t>(d);
        char bytes[8];
        for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
        os.write(bytes, 8);
    }
}

inline void read_doubles_le(std::istream& is, std::vector<double>& v) {
    for (double& d : v) {
        char bytes[8];
        is.read(bytes, 8);
        if (!is) throw ConfigError("parameter file truncated");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
        d = std::bit_cast<double>(bits);
    }
}

using NamedTensors = std::vector<std::pair<std::string, const Tensor*>>;

inline void write_params_file(const std::filesystem::path& path, const std::string& component,
                              const nlohmann::json& arch, const NamedTensors& tensors) {
    nlohmann::json header;
    header["component"] = component;
    header["arch"] = arch;
    nlohmann::json order = nlohmann::json::array();
    for (const auto& [name, t] : tensors) order.push_back({{"name", name}, {"shape", t->shape}});
    header["tensors"] = order;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw PrerequisiteError("cannot open for writing: " + path.string());
    os << header.dump() << '\n';
    for (const auto& [name, t] : tensors) write_doubles_le(os, t->data);
    if (!os) throw PrerequisiteError("write failed: " + path.string());
}

struct ParamsFile {
    std::string component;
    nlohmann::json arch;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

inline ParamsFile read_params_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw PrerequisiteError("missing parameter file: " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("empty parameter file: " + path.string());
    nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
    if (header.is_discarded()) throw ConfigError("bad parameter file header: " + path.string());
    ParamsFile out;
    out.component = header.at("component").get<std::string>();
    out.arch = header.at("arch");
    for (const auto& entry : header.at("tensors")) {
        Tensor t(entry.at("shape").get<std::vector<std::size_t>>());
        read_doubles_le(is, t.data);
        out.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return out;
}

inline NamedTensors named_tensors(const ForecasterParams& p) {
    return {{"lstm0.w_in", &p.w_in[0]},     {"lstm0.w_rec", &p.w_rec[0]},
            {"lstm0.bias", &p.bias[0]},     {"lstm0.ln_scale", &p.ln_scale[0]},
            {"lstm0.ln_shift", &p.ln_shift[0]}, {"lstm1.w_in", &p.w_in[1]},
            {"lstm1.w_rec", &p.w_rec[1]},   {"lstm1.bias", &p.bias[1]},
            {"lstm1.ln_scale", &p.ln_scale[1]}, {"lstm1.ln_shift", &p.ln_shift[1]},
            {"fc.w", &p.fc_w},              {"fc.b", &p.fc_b}};
}

inline NamedTensors named_tensors(const ClassifierParams& p) {
    NamedTensors out;
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        out.emplace_back(prefix + "w1", &p.blocks[b].w1);
        out.emplace_back(prefix + "b1", &p.blocks[b].b1);
        out.emplace_back(prefix + "w3", &p.blocks[b].w3);
        out.emplace_back(prefix + "b3", &p.blocks[b].b3);
        out.emplace_back(prefix + "bn_scale", &p.blocks[b].bn_scale);
        out.emplace_back(prefix + "bn_shift", &p.blocks[b].bn_shift);
        out.emplace_back(prefix + "bn_mean", &p.blocks[b].bn_mean);
        out.emplace_back(prefix + "bn_var", &p.blocks[b].bn_var);
    }
    out.emplace_back("fc.w", &p.fc_w);
    out.emplace_back("fc.b", &p.fc_b);
    return out;
}

inline NamedTensors named_tensors(const DenoiserParams& p) {
    return {{"enc.w", &p.enc_w},
            {"enc.b", &p.enc_b},
            {"enc.bn_scale", &p.enc_bn_scale},
            {"enc.bn_shift", &p.enc_bn_shift},
            {"enc.bn_mean", &p.enc_bn_mean},
            {"enc.bn_var", &p.enc_bn_var},
            {"dec.w", &p.dec_w},
            {"dec.b", &p.dec_b},
            {"dec.bn_scale", &p.dec_bn_scale},
            {"dec.bn_shift", &p.dec_bn_shift},
            {"dec.bn_mean", &p.dec_bn_mean},
            {"dec.bn_var", &p.dec_bn_var}};
}

// mutable views in the same order as named_tensors

inline std::vector<Tensor*> tensor_slots(ForecasterParams& p) {
    return {&p.w_in[0], &p.w_rec[0], &p.bias[0], &p.ln_scale[0], &p.ln_shift[0],
            &p.w_in[1], &p.w_rec[1], &p.bias[1], &p.ln_scale[1], &p.ln_shift[1],
            &p.fc_w,    &p.fc_b};
}

inline std::vector<Tensor*> tensor_slots(ClassifierParams& p) {
    std::vector<Tensor*> out;
    for (auto& b : p.blocks) {
        out.push_back(&b.w1);
        out.push_back(&b.b1);
        out.push_back(&b.w3);
        out.push_back(&b.b3);
        out.push_back(&b.bn_scale);
        out.push_back(&b.bn_shift);
        out.push_back(&b.bn_mean);
        out.push_back(&b.bn_var);
    }
    out.push_back(&p.fc_w);
    out.push_back(&p.fc_b);
    return out;
}

inline std::vector<Tensor*> tensor_slots(DenoiserParams& p) {
    return {&p.enc_w, &p.enc_b, &p.enc_bn_scale, &p.enc_bn_shift, &p.enc_bn_mean, &p.enc_bn_var,
            &p.dec_w, &p.dec_b, &p.dec_bn_scale, &p.dec_bn_shift, &p.dec_bn_mean, &p.dec_bn_var};
}

template <typename Params>
void assign_tensors(Params& p, const ParamsFile& file, const std::filesystem::path& path) {
    const NamedTensors expected = named_tensors(p);
    std::vector<Tensor*> slots = tensor_slots(p);
    if (expected.size() != file.tensors.size())
        throw ConfigError("tensor count mismatch in " + path.string());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto& [name, got] = file.tensors[i];
        if (name != expected[i].first || got.shape != slots[i]->shape)
            throw ConfigError("tensor layout mismatch in " + path.string() + " at " + name);
        slots[i]->data = got.data;
    }
}

} // namespace detail

inline void save_params(const std::filesystem::path& path, const ForecasterParams& p) {
    nlohmann::json arch = {{"hidden", p.arch.hidden},
                           {"window", p.arch.window},
                           {"dropout", p.arch.dropout}};
    detail::write_params_file(path, "forecaster", arch, detail::named_tensors(p));
}

inline void save_params(const std::filesystem::path& path, const ClassifierParams& p) {
    nlohmann::json arch = {{"blocks", p.arch.blocks},
                           {"branch_channels", p.arch.branch_channels},
                           {"window", p.arch.window},
                           {"dropout", p.arch.dropout}};
    detail::write_params_file(path, "classifier", arch, detail::named_tensors(p));
}

inline void save_params(const std::filesystem::path& path, const DenoiserParams& p) {
    nlohmann::json arch = {{"hidden", p.arch.hidden},
                           {"window", p.arch.window},
                           {"dropout", p.arch.dropout}};
    detail::write_params_file(path, "denoiser", arch, detail::named_tensors(p));
}

inline ForecasterParams load_forecaster(const std::filesystem::path& path) {
    detail::ParamsFile file = detail::read_params_file(path);
    if (file.component != "forecaster")
        throw ConfigError(path.string() + " holds a " + file.component + ", expected a forecaster");
    ForecasterArch arch{file.arch.at("hidden").get<std::size_t>(),
                        file.arch.at("window").get<std::size_t>(),
                        file.arch.at("dropout").get<double>()};
    ForecasterParams p = init_forecaster(arch, 0);
    detail::assign_tensors(p, file, path);
    return p;
}

inline ClassifierParams load_classifier(const std::filesystem::path& path) {
    detail::ParamsFile file = detail::read_params_file(path);
    if (file.component != "classifier")
        throw ConfigError(path.string() + " holds a " + file.component + ", expected a classifier");
    ClassifierArch arch{file.arch.at("blocks").get<std::size_t>(),
                        file.arch.at("branch_channels").get<std::size_t>(),
                        file.arch.at("window").get<std::size_t>(),
                        file.arch.at("dropout").get<double>()};
    ClassifierParams p = init_classifier(arch, 0);
    detail::assign_tensors(p, file, path);
    return p;
}

inline DenoiserParams load_denoiser(const std::filesystem::path& path) {
    detail::ParamsFile file = detail::read_params_file(path);
    if (file.component != "denoiser")
        throw ConfigError(path.string() + " holds a " + file.component + ", expected a denoiser");
    DenoiserArch arch{file.arch.at("hidden").get<std::size_t>(),
                      file.arch.at("window").get<std::size_t>(),
                      file.arch.at("dropout").get<double>()};
    DenoiserParams p = init_denoiser(arch, 0);
    detail::assign_tensors(p, file, path);
    return p;
}

} // namespace tsguard
