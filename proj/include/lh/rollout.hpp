#pragma once

// Autoregressive rollout: forecast_step applied recursively with predictions
// fed back as inputs, decoder heads applied to the latent at every step.
// Deterministic; a NaN appearing at step k truncates the result with a flag.

#include <map>
#include <string>
#include <vector>

#include "lh/backbone.hpp"
#include "lh/checkpoint.hpp"
#include "lh/dataset.hpp"
#include "lh/heads.hpp"
#include "lh/trainer.hpp"

namespace lh {

struct RolloutResult {
    std::size_t n_steps_requested = 0;
    std::size_t n_steps_completed = 0;
    bool truncated = false;
    std::size_t truncated_at = 0;
    std::vector<long> lead_hours;                             // 6h * (k+1)
    std::vector<std::map<std::string, Field>> base_fields;    // physical units
    std::vector<std::map<std::string, Field>> head_fields;    // physical units
};

inline std::vector<MlpHead> load_heads(const std::filesystem::path& ckpt_dir) {
    auto [all, info] = load_checkpoint(ckpt_dir);
    if (info.kind != "heads") throw std::runtime_error("load_heads: checkpoint kind " + info.kind);
    const auto vars = info.config.at("variables").get<std::vector<std::string>>();
    const auto dims = info.config.at("dims").get<std::vector<std::size_t>>();
    std::vector<MlpHead> heads;
    for (const auto& var : vars) {
        MlpHead h;
        h.var_id = var;
        h.dims = dims;
        for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
            for (const char* suffix : {".w", ".b"}) {
                const std::string local = "layer" + std::to_string(k) + suffix;
                const auto& src = all.get(var + "/" + local);
                auto& dst = h.params.add(local, src.shape);
                dst.v = src.v;
            }
        }
        heads.push_back(std::move(h));
    }
    return heads;
}

/// init_t indexes the dataset: frames (init_t - 1, init_t) seed the rollout,
/// the first prediction lands on init_t + 1.
inline RolloutResult rollout(const Dataset& ds, const Backbone& backbone,
                             const std::vector<MlpHead>& heads, std::size_t init_t,
                             std::size_t n_steps) {
    if (n_steps < 1) throw std::invalid_argument("rollout: n_steps must be >= 1");
    if (init_t < 1 || init_t >= ds.manifest.n_steps)
        throw std::invalid_argument("rollout: init step out of range");
    const BackboneConfig& cfg = backbone.cfg;

    RolloutResult r;
    r.n_steps_requested = n_steps;

    // Standardized working frames per surface variable.
    std::vector<Field> prev, cur;
    for (const auto& var : cfg.surface_vars) {
        prev.push_back(ds.standardized(var, init_t - 1));
        cur.push_back(ds.standardized(var, init_t));
    }
    Field land(cfg.H, cfg.W, 0.0);
    for (std::size_t i = 0; i < land.v.size(); ++i)
        land.v[i] = static_cast<double>(ds.land().v[i]);

    for (std::size_t k = 0; k < n_steps; ++k) {
        SampleInputs in;
        for (std::size_t v = 0; v < cfg.surface_vars.size(); ++v)
            in.surface.push_back({prev[v], cur[v]});
        for (std::size_t s = 0; s < cfg.static_vars.size(); ++s) in.statics.push_back(land);

        ForwardCache fc = backbone.forward(in);

        std::map<std::string, Field> base_out;
        bool finite = true;
        std::vector<Field> next;
        for (const auto& var : cfg.surface_vars) {
            Field pred = backbone.decode_surface(fc.latent, var);
            for (double x : pred.v)
                if (!std::isfinite(x)) finite = false;
            next.push_back(pred);
            base_out[var] = ds.unstandardize(var, std::move(pred));
        }

        std::map<std::string, Field> head_out;
        if (!heads.empty()) {
            std::vector<double> latent(cfg.n_patches() * cfg.channels());
            for (std::size_t p = 0; p < cfg.n_patches(); ++p)
                for (std::size_t c = 0; c < cfg.channels(); ++c)
                    latent[p * cfg.channels() + c] = fc.latent.at(p, 0)[c];
            for (const auto& h : heads) {
                Field pred = head_forward(latent, cfg.n_patches(), h, cfg.H, cfg.W, cfg.P);
                for (double x : pred.v)
                    if (!std::isfinite(x)) finite = false;
                head_out[h.var_id] = ds.unstandardize(h.var_id, std::move(pred));
            }
        }

        if (!finite) {
            r.truncated = true;
            r.truncated_at = k;
            break;
        }
        r.base_fields.push_back(std::move(base_out));
        r.head_fields.push_back(std::move(head_out));
        r.lead_hours.push_back(static_cast<long>(6 * (k + 1)));
        r.n_steps_completed = k + 1;
        prev = std::move(cur);
        cur = std::move(next);
    }
    return r;
}

}  // namespace lh
