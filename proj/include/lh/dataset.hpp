#pragma once

// Dataset layout on disk: one TensorFile per (variable, step) under fields/,
// static rasters under static/, basin masks under basins/, and a JSON
// manifest carrying grid axes, splits, per-variable units/statistics and a
// content hash.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lh/grid.hpp"
#include "lh/hash.hpp"
#include "lh/synthworld.hpp"
#include "lh/tensor_file.hpp"
#include "lh/transforms.hpp"

namespace lh {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct VariableInfo {
    std::string id;
    std::string units;
    std::string kind;  // "base" | "target" | "static"
    std::string mask;  // "none" | "land"
    bool log_space = false;
    double mean = 0.0;
    double stdev = 1.0;
    double log_mean = 0.0;   // statistics of log1p(x/eps), when log_space
    double log_stdev = 1.0;
    double log_eps = 1e-5;
};

struct DatasetManifest {
    std::size_t H = 0, W = 0;
    std::vector<double> lats, lons;
    long time_step_seconds = 21600;
    std::size_t n_steps = 0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> splits;  // [begin, end)
    std::uint64_t seed = 0;
    std::vector<VariableInfo> variables;
    std::size_t n_basins = 0;
    std::string dataset_hash;
    json world;

    const VariableInfo& var(const std::string& id) const {
        for (const auto& v : variables)
            if (v.id == id) return v;
        throw std::invalid_argument("DatasetManifest: unknown variable " + id);
    }
    std::vector<std::string> ids_of_kind(const std::string& kind) const {
        std::vector<std::string> out;
        for (const auto& v : variables)
            if (v.kind == kind) out.push_back(v.id);
        return out;
    }
};

inline void to_json(json& j, const VariableInfo& v) {
    j = json{{"id", v.id},           {"units", v.units},       {"kind", v.kind},
             {"mask", v.mask},       {"log_space", v.log_space}, {"mean", v.mean},
             {"std", v.stdev},       {"log_mean", v.log_mean}, {"log_std", v.log_stdev},
             {"log_eps", v.log_eps}};
}

inline void from_json(const json& j, VariableInfo& v) {
    j.at("id").get_to(v.id);
    j.at("units").get_to(v.units);
    j.at("kind").get_to(v.kind);
    j.at("mask").get_to(v.mask);
    j.at("log_space").get_to(v.log_space);
    j.at("mean").get_to(v.mean);
    j.at("std").get_to(v.stdev);
    j.at("log_mean").get_to(v.log_mean);
    j.at("log_std").get_to(v.log_stdev);
    j.at("log_eps").get_to(v.log_eps);
}

inline void to_json(json& j, const DatasetManifest& m) {
    json splits = json::object();
    for (const auto& [name, range] : m.splits) splits[name] = {range.first, range.second};
    j = json{{"format", "lh-dataset-v1"},
             {"H", m.H},
             {"W", m.W},
             {"lats", m.lats},
             {"lons", m.lons},
             {"time_step_seconds", m.time_step_seconds},
             {"n_steps", m.n_steps},
             {"splits", splits},
             {"seed", m.seed},
             {"variables", m.variables},
             {"n_basins", m.n_basins},
             {"dataset_hash", m.dataset_hash},
             {"world", m.world}};
}

inline void from_json(const json& j, DatasetManifest& m) {
    if (j.value("format", "") != std::string("lh-dataset-v1"))
        throw std::runtime_error("DatasetManifest: unknown format");
    j.at("H").get_to(m.H);
    j.at("W").get_to(m.W);
    j.at("lats").get_to(m.lats);
    j.at("lons").get_to(m.lons);
    j.at("time_step_seconds").get_to(m.time_step_seconds);
    j.at("n_steps").get_to(m.n_steps);
    m.splits.clear();
    for (const auto& [name, range] : j.at("splits").items())
        m.splits[name] = {range[0].get<std::size_t>(), range[1].get<std::size_t>()};
    j.at("seed").get_to(m.seed);
    m.variables = j.at("variables").get<std::vector<VariableInfo>>();
    j.at("n_basins").get_to(m.n_basins);
    j.at("dataset_hash").get_to(m.dataset_hash);
    m.world = j.at("world");
}

inline std::string field_file_name(const std::string& var, std::size_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%06zu.lht", step);
    return var + buf;
}

inline json world_config_to_json(const WorldConfig& cfg) {
    json j{{"H", cfg.H},
           {"W", cfg.W},
           {"seed", cfg.seed},
           {"dt", cfg.dt},
           {"kappa", cfg.kappa},
           {"rotation_speed", cfg.rotation_speed},
           {"forcing_modes", cfg.forcing_modes},
           {"n_steps", cfg.n_steps},
           {"relax_rate", cfg.relax_rate},
           {"wave_speed", cfg.wave_speed},
           {"land_fraction", cfg.land_fraction},
           {"n_basins", cfg.n_basins},
           {"coupling", cfg.coupling}};
    return j;
}

inline WorldConfig world_config_from_json(const json& j) {
    WorldConfig cfg;
    cfg.H = j.value("H", cfg.H);
    cfg.W = j.value("W", cfg.W);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.dt = j.value("dt", cfg.dt);
    cfg.kappa = j.value("kappa", cfg.kappa);
    cfg.rotation_speed = j.value("rotation_speed", cfg.rotation_speed);
    cfg.forcing_modes = j.value("forcing_modes", cfg.forcing_modes);
    cfg.n_steps = j.value("n_steps", cfg.n_steps);
    cfg.relax_rate = j.value("relax_rate", cfg.relax_rate);
    cfg.wave_speed = j.value("wave_speed", cfg.wave_speed);
    cfg.land_fraction = j.value("land_fraction", cfg.land_fraction);
    cfg.n_basins = j.value("n_basins", cfg.n_basins);
    if (j.contains("coupling"))
        cfg.coupling = j.at("coupling").get<std::map<std::string, double>>();
    cfg.validate();
    return cfg;
}

struct GenSplits {
    std::size_t train = 2000;
    std::size_t val = 200;
    std::size_t test = 200;
    std::size_t total() const { return train + val + test; }
};

/// Runs the synthetic world for the configured number of steps and writes the
/// dataset.  Returns the manifest (also written to manifest.json).
inline DatasetManifest generate_dataset(const WorldConfig& world_cfg, const GenSplits& splits,
                                        const fs::path& out_dir) {
    WorldConfig cfg = world_cfg;
    cfg.n_steps = splits.total();
    SynthWorld world(cfg);

    fs::create_directories(out_dir / "fields");
    fs::create_directories(out_dir / "static");
    fs::create_directories(out_dir / "basins");

    DatasetManifest m;
    m.H = cfg.H;
    m.W = cfg.W;
    m.lats = default_lats(cfg.H);
    m.lons = default_lons(cfg.W);
    m.n_steps = cfg.n_steps;
    m.seed = cfg.seed;
    m.splits["train"] = {0, splits.train};
    m.splits["val"] = {splits.train, splits.train + splits.val};
    m.splits["test"] = {splits.train + splits.val, cfg.n_steps};
    m.world = world_config_to_json(cfg);

    struct Stat {
        double sum = 0.0, sq = 0.0, lsum = 0.0, lsq = 0.0;
        std::size_t n = 0;
    };
    std::map<std::string, Stat> stats;

    const auto& base_ids = SynthWorld::base_variables();
    const auto& target_ids = SynthWorld::target_variables();

    {
        Field land(cfg.H, cfg.W, 0.0);
        for (std::size_t i = 0; i < land.v.size(); ++i)
            land.v[i] = static_cast<double>(world.land_mask().v[i]);
        write_field_f32(out_dir / "static" / "land.lht", land);
    }
    for (std::size_t b = 0; b < world.basin_masks().size(); ++b) {
        Field f(cfg.H, cfg.W, 0.0);
        for (std::size_t i = 0; i < f.v.size(); ++i)
            f.v[i] = static_cast<double>(world.basin_masks()[b].v[i]);
        char name[32];
        std::snprintf(name, sizeof(name), "basin_%02zu.lht", b);
        write_field_f32(out_dir / "basins" / name, f);
    }
    m.n_basins = world.basin_masks().size();

    const double log_eps = 1e-5;
    WorldState st = world.init_world();
    for (std::size_t step = 0; step < cfg.n_steps; ++step) {
        if (step > 0) st = world.step_world(st);
        auto targets = world.derive_targets(st);
        const Field* fields[8] = {&st.u, &st.v, &st.q, &st.tmp,
                                  &targets.at("evap_like"), &targets.at("precip_like"),
                                  &targets.at("runoff_like"), &targets.at("storage_like")};
        const std::string* names[8] = {&base_ids[0], &base_ids[1], &base_ids[2], &base_ids[3],
                                       &target_ids[0], &target_ids[1], &target_ids[2],
                                       &target_ids[3]};
        const bool in_train = step < splits.train;
        for (int k = 0; k < 8; ++k) {
            write_field_f32(out_dir / "fields" / field_file_name(*names[k], step), *fields[k]);
            if (in_train) {
                auto& s = stats[*names[k]];
                for (double x : fields[k]->v) {
                    // Stats describe what training reads back: f32 rounding
                    // applies to the stored fields, so apply it here too.
                    const double xf = static_cast<double>(static_cast<float>(x));
                    s.sum += xf;
                    s.sq += xf * xf;
                    if (*names[k] == "precip_like") {
                        const double lx = std::log1p(xf / log_eps);
                        s.lsum += lx;
                        s.lsq += lx * lx;
                    }
                    ++s.n;
                }
            }
        }
    }

    auto make_var = [&](const std::string& id, const std::string& kind, const std::string& units,
                        const std::string& mask, bool log_space) {
        VariableInfo v;
        v.id = id;
        v.kind = kind;
        v.units = units;
        v.mask = mask;
        v.log_space = log_space;
        v.log_eps = log_eps;
        const auto& s = stats.at(id);
        const double n = static_cast<double>(s.n);
        v.mean = s.sum / n;
        v.stdev = std::sqrt(std::max(1e-12, s.sq / n - v.mean * v.mean));
        if (log_space) {
            v.log_mean = s.lsum / n;
            v.log_stdev = std::sqrt(std::max(1e-12, s.lsq / n - v.log_mean * v.log_mean));
        }
        return v;
    };
    m.variables.push_back(make_var("u", "base", "px/step", "none", false));
    m.variables.push_back(make_var("v", "base", "px/step", "none", false));
    m.variables.push_back(make_var("q", "base", "kg/kg", "none", false));
    m.variables.push_back(make_var("tmp", "base", "K", "none", false));
    m.variables.push_back(make_var("evap_like", "target", "mm/6h", "none", false));
    m.variables.push_back(make_var("precip_like", "target", "mm/6h", "none", true));
    m.variables.push_back(make_var("runoff_like", "target", "mm/6h", "land", false));
    m.variables.push_back(make_var("storage_like", "target", "m", "land", false));
    {
        VariableInfo land;
        land.id = "land";
        land.kind = "static";
        land.units = "1";
        land.mask = "none";
        land.mean = 0.0;
        land.stdev = 1.0;
        m.variables.push_back(land);
    }

    m.dataset_hash = "";
    {
        json j = m;
        std::ofstream out(out_dir / "manifest.json");
        out << j.dump(2) << "\n";
    }
    m.dataset_hash = "sha256:" + sha256_dir(out_dir);
    {
        json j = m;
        std::ofstream out(out_dir / "manifest.json");
        out << j.dump(2) << "\n";
    }
    return m;
}

/// In-RAM dataset view.  Dynamic fields are preloaded per variable; statics
/// and basin masks load once.
class Dataset {
  public:
    DatasetManifest manifest;
    fs::path dir;

    static Dataset load(const fs::path& dir, bool preload = true) {
        Dataset d;
        d.dir = dir;
        std::ifstream in(dir / "manifest.json");
        if (!in) throw std::runtime_error("Dataset: missing manifest in " + dir.string());
        json j;
        in >> j;
        d.manifest = j.get<DatasetManifest>();

        Field land_f = read_field(dir / "static" / "land.lht");
        d.land_ = Mask::from_field(land_f);

        for (std::size_t b = 0; b < d.manifest.n_basins; ++b) {
            char name[32];
            std::snprintf(name, sizeof(name), "basin_%02zu.lht", b);
            d.basins_.push_back(Mask::from_field(read_field(dir / "basins" / name)));
        }

        if (preload) {
            for (const auto& v : d.manifest.variables) {
                if (v.kind == "static") continue;
                auto& vec = d.cache_[v.id];
                vec.reserve(d.manifest.n_steps);
                for (std::size_t s = 0; s < d.manifest.n_steps; ++s)
                    vec.push_back(read_field(dir / "fields" / field_file_name(v.id, s)));
            }
        }
        return d;
    }

    const Field& field(const std::string& var, std::size_t step) const {
        auto it = cache_.find(var);
        if (it == cache_.end()) throw std::invalid_argument("Dataset: variable not loaded: " + var);
        if (step >= it->second.size()) throw std::invalid_argument("Dataset: step out of range");
        return it->second[step];
    }

    const Mask& land() const { return land_; }
    const std::vector<Mask>& basins() const { return basins_; }

    const Mask* mask_for(const std::string& var) const {
        return manifest.var(var).mask == "land" ? &land_ : nullptr;
    }

    /// Standardized view used by training: (x - mean) / std, with the log
    /// transform applied first for log-space variables.
    Field standardized(const std::string& var, std::size_t step) const {
        const VariableInfo& info = manifest.var(var);
        Field f = field(var, step);
        if (info.log_space) {
            for (auto& x : f.v)
                x = (std::log1p(x / info.log_eps) - info.log_mean) / info.log_stdev;
        } else {
            for (auto& x : f.v) x = (x - info.mean) / info.stdev;
        }
        return f;
    }

    /// Inverse of `standardized`: back to physical units.
    Field unstandardize(const std::string& var, Field f) const {
        const VariableInfo& info = manifest.var(var);
        if (info.log_space) {
            for (auto& x : f.v) {
                const double y = x * info.log_stdev + info.log_mean;
                x = std::max(0.0, info.log_eps * std::expm1(y));
            }
        } else {
            for (auto& x : f.v) x = x * info.stdev + info.mean;
        }
        return f;
    }

  private:
    Mask land_;
    std::vector<Mask> basins_;
    std::map<std::string, std::vector<Field>> cache_;
};

}  // namespace lh
