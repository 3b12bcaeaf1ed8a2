#pragma once

// Checkpoint container: one f64 TensorFile per parameter tensor plus a JSON
// manifest (kind, frozen flag, tensor names/shapes, embedded config).

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "lh/dense.hpp"
#include "lh/hash.hpp"
#include "lh/tensor_file.hpp"

namespace lh {

struct CheckpointInfo {
    std::string kind;  // "backbone" | "heads" | "finetune"
    bool frozen = false;
    nlohmann::json config;
};

inline void save_checkpoint(const std::filesystem::path& dir, const CheckpointInfo& info,
                            const ParamSet& params) {
    namespace fs = std::filesystem;

    fs::create_directories(dir / "params");
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : params.items) {
        std::string file = t.name + ".lht";
        for (auto& c : file)
            if (c == '/') c = '~';
        std::vector<std::uint64_t> dims;
        for (auto d : t.shape) dims.push_back(d);
        if (dims.empty()) dims.push_back(t.v.size());
        write_tensor(dir / "params" / file, dims, t.v);
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"file", file}});
    }
    nlohmann::json j{{"format", "lh-checkpoint-v1"},
                     {"kind", info.kind},
                     {"frozen", info.frozen},
                     {"config", info.config},
                     {"tensors", tensors}};
    // write-temp-rename keeps the manifest atomic
    const fs::path tmp = dir / "manifest.json.tmp";
    {
        std::ofstream out(tmp);
        out << j.dump(2) << "\n";
    }
    fs::rename(tmp, dir / "manifest.json");
}

inline std::pair<ParamSet, CheckpointInfo> load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("load_checkpoint: missing manifest in " + dir.string());
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != std::string("lh-checkpoint-v1"))
        throw std::runtime_error("load_checkpoint: unknown format");
    CheckpointInfo info;
    info.kind = j.at("kind").get<std::string>();
    info.frozen = j.at("frozen").get<bool>();
    info.config = j.at("config");

    ParamSet params;
    for (const auto& t : j.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        auto& nt = params.add(name, shape);
        TensorData td = read_tensor(dir / "params" / t.at("file").get<std::string>());
        if (td.dtype != Dtype::f64 || td.f64.size() != nt.v.size())
            throw std::runtime_error("load_checkpoint: tensor mismatch for " + name);
        nt.v = std::move(td.f64);
    }
    params.frozen = info.frozen;
    return {std::move(params), std::move(info)};
}

/// Cryptographic fingerprint of a checkpoint directory (manifest + tensors).
inline std::string checkpoint_hash(const std::filesystem::path& dir) {
    return "sha256:" + sha256_dir(dir);
}

}  // namespace lh
