#pragma once

#include <bit>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mantis/model.hpp"

namespace mantis {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are raw little-endian float64");

inline nlohmann::json model_config_json(const MantisConfig& cfg) {
    return {{"depth", cfg.depth},
            {"nf", cfg.nf},
            {"variant", unit_variant_name(cfg.variant)},
            {"ft_depth", cfg.ft_depth},
            {"num_classes", cfg.num_classes},
            {"in_channels", cfg.in_channels},
            {"smooth", cfg.smooth},
            {"heads_rule", "max(1,nf/8)"},
            {"seed", cfg.seed}};
}

inline MantisConfig model_config_from_json(const nlohmann::json& j) {
    MantisConfig cfg;
    cfg.depth = j.value("depth", cfg.depth);
    cfg.nf = j.value("nf", cfg.nf);
    cfg.variant = unit_variant_from_name(j.value("variant", std::string("fractal_resnet")));
    cfg.ft_depth = j.value("ft_depth", cfg.ft_depth);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.in_channels = j.value("in_channels", cfg.in_channels);
    cfg.smooth = j.value("smooth", cfg.smooth);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

// Checkpoint archive: a directory holding one raw little-endian float64 blob
// per parameter plus manifest.json mapping parameter names to shape, dtype
// and byte offset/length within their blob.
inline void save_checkpoint(const std::string& dir, MantisNet& net,
                            const nlohmann::json& extra = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    ParamRefs refs;
    net.params(refs);
    nlohmann::json manifest;
    manifest["format"] = "mantis-checkpoint-v1";
    manifest["model"] = model_config_json(net.config());
    if (!extra.is_null() && !extra.empty()) manifest["extra"] = extra;
    nlohmann::json params = nlohmann::json::object();
    int idx = 0;
    for (auto& [name, p] : refs) {
        char fname[32];
        std::snprintf(fname, sizeof fname, "p%04d.bin", idx++);
        const Tensor& v = p->value();
        size_t bytes = v.data.size() * sizeof(double);
        std::ofstream out(fs::path(dir) / fname, std::ios::binary);
        out.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(bytes));
        if (!out) throw std::runtime_error("save_checkpoint: write failed for " + std::string(fname));
        params[name] = {{"shape", v.shape},
                        {"dtype", "float64"},
                        {"file", fname},
                        {"offset", 0},
                        {"length", bytes}};
    }
    manifest["params"] = params;
    std::ofstream mf(fs::path(dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw std::runtime_error("save_checkpoint: manifest write failed");
}

inline nlohmann::json read_manifest(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("read_manifest: missing manifest.json in " + dir);
    nlohmann::json manifest;
    mf >> manifest;
    return manifest;
}

inline void load_parameters(const std::string& dir, MantisNet& net) {
    namespace fs = std::filesystem;
    nlohmann::json manifest = read_manifest(dir);
    const auto& params = manifest.at("params");
    ParamRefs refs;
    net.params(refs);
    for (auto& [name, p] : refs) {
        if (!params.contains(name))
            throw std::runtime_error("load_parameters: missing parameter " + name);
        const auto& entry = params.at(name);
        Shape shape = entry.at("shape").get<Shape>();
        if (!shapes_equal(shape, p->value().shape))
            throw std::runtime_error("load_parameters: shape mismatch for " + name);
        if (entry.at("dtype").get<std::string>() != "float64")
            throw std::runtime_error("load_parameters: unsupported dtype for " + name);
        size_t offset = entry.value("offset", size_t{0});
        size_t length = entry.at("length").get<size_t>();
        if (length != p->value().data.size() * sizeof(double))
            throw std::runtime_error("load_parameters: length mismatch for " + name);
        std::ifstream in(fs::path(dir) / entry.at("file").get<std::string>(), std::ios::binary);
        if (!in) throw std::runtime_error("load_parameters: missing blob for " + name);
        in.seekg(static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(p->value().data.data()), static_cast<std::streamsize>(length));
        if (!in) throw std::runtime_error("load_parameters: short read for " + name);
    }
}

// Builds the model described by the manifest and loads its weights.
inline MantisNet load_checkpoint(const std::string& dir) {
    nlohmann::json manifest = read_manifest(dir);
    MantisNet net(model_config_from_json(manifest.at("model")));
    load_parameters(dir, net);
    return net;
}

}  // namespace mantis
