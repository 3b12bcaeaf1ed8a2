#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace lh {

/// Reproducibility record written next to every command's outputs.
struct RunManifest {
    std::string command;
    std::string config_hash;
    std::string dataset_hash;
    std::uint64_t seed = 0;
    std::vector<std::string> artifacts;
    double wall_clock_seconds = 0.0;
    double samples_per_second = 0.0;

    void write(const std::filesystem::path& dir) const {
        nlohmann::json j{{"command", command},
                         {"config_hash", config_hash},
                         {"dataset_hash", dataset_hash},
                         {"seed", seed},
                         {"artifacts", artifacts},
                         {"wall_clock_seconds", wall_clock_seconds},
                         {"samples_per_second", samples_per_second}};
        std::filesystem::create_directories(dir);
        std::ofstream out(dir / "run_manifest.json");
        out << j.dump(2) << "\n";
    }
};

}  // namespace lh
