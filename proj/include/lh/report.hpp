#pragma once

// Scoring of prediction directories against a reference dataset: the full
// metric suite per variable, averaged over test samples, emitted as JSON and
// CSV.  Sample iteration and accumulation order are fixed, so reports are
// bit-reproducible.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lh/dataset.hpp"
#include "lh/metrics.hpp"
#include "lh/transforms.hpp"

namespace lh {

struct PredictionSet {
    std::filesystem::path dir;
    std::vector<std::string> variables;
    std::size_t first_step = 0, last_step = 0;  // [first, last)
    std::size_t patch_size = 4;
    std::string source_dataset_hash;

    static PredictionSet load(const std::filesystem::path& dir) {
        std::ifstream in(dir / "manifest.json");
        if (!in) throw std::runtime_error("PredictionSet: missing manifest in " + dir.string());
        nlohmann::json j;
        in >> j;
        if (j.value("format", "") != std::string("lh-predictions-v1"))
            throw std::runtime_error("PredictionSet: unknown format");
        PredictionSet p;
        p.dir = dir;
        p.variables = j.at("variables").get<std::vector<std::string>>();
        p.first_step = j.at("steps")[0].get<std::size_t>();
        p.last_step = j.at("steps")[1].get<std::size_t>();
        p.source_dataset_hash = j.value("source_dataset_hash", "");
        p.patch_size = j.value("patch_size", std::size_t{4});
        return p;
    }

    Field field(const std::string& var, std::size_t step) const {
        return read_field(dir / "fields" / field_file_name(var, step));
    }
};

struct VariableScores {
    std::map<std::string, double> values;
    std::map<std::string, std::size_t> flags;
    std::size_t n_samples = 0;
};

/// Metrics for one variable over aligned (pred, ref) sample sequences.
/// Point metrics average per-sample values; undefined samples (zero-variance
/// PCC, degenerate FSS) are skipped and counted in flags.
inline VariableScores score_variable(const std::vector<const Field*>& preds,
                                     const std::vector<const Field*>& refs,
                                     const VariableInfo& info, const LatWeights& weights,
                                     const Mask* mask, const MetricConfig& mc,
                                     const SeepsClimatology* clim, std::size_t patch_size) {
    if (preds.size() != refs.size() || preds.empty())
        throw std::invalid_argument("score_variable: sample count mismatch");
    mc.validate();
    VariableScores out;
    out.n_samples = preds.size();

    struct Acc {
        double sum = 0.0;
        std::size_t n = 0;
        void add(double v) {
            sum += v;
            ++n;
        }
        double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
    };
    std::map<std::string, Acc> acc;

    for (std::size_t s = 0; s < preds.size(); ++s) {
        const Field& p = *preds[s];
        const Field& r = *refs[s];
        acc["mae"].add(mae(p, r, &weights, mask));
        acc["rmse"].add(rmse(p, r, &weights, mask));
        acc["bias"].add(bias(p, r, &weights, mask));
        acc["relative_mae"].add(relative(mae(p, r, &weights, mask), r, &weights, mask,
                                         mc.relative_normalizer));
        acc["relative_rmse"].add(relative(rmse(p, r, &weights, mask), r, &weights, mask,
                                          mc.relative_normalizer));
        try {
            acc["pcc"].add(pcc(p, r, mask));
        } catch (const std::invalid_argument&) {
            ++out.flags["pcc_undefined_samples"];
        }
        acc["w1"].add(w1_fields(p, r, mask));
        acc["patchiness"].add(patchiness(p, r, patch_size));
        if (info.log_space) {
            acc["w1_log"].add(w1_log_fields(p, r, info.log_eps, mask));
            for (double alpha : mc.fss_thresholds) {
                auto fr = fss_detail(p, r, alpha, mc.fss_window);
                char key[32];
                std::snprintf(key, sizeof(key), "fss_%g", alpha);
                if (fr.degenerate)
                    ++out.flags[std::string(key) + "_degenerate_samples"];
                acc[key].add(fr.value);
            }
            if (clim) acc["seeps"].add(seeps(p, r, *clim, &weights));
        }
    }
    for (const auto& [name, a] : acc) out.values[name] = a.mean();
    return out;
}

struct EvalReport {
    nlohmann::json j;
    std::string csv;
};

/// Score every predicted variable in pred_dir against the reference dataset.
inline EvalReport evaluate_predictions(const std::filesystem::path& pred_dir, const Dataset& ds,
                                       const MetricConfig& mc) {
    PredictionSet ps = PredictionSet::load(pred_dir);
    auto weights = lat_weights(ds.manifest.lats);

    // SEEPS climatology from the training split of the reference data, built
    // once per log-space variable.
    std::map<std::string, SeepsClimatology> clims;
    for (const auto& var : ps.variables) {
        if (!ds.manifest.var(var).log_space) continue;
        const auto [b, e] = ds.manifest.splits.at("train");
        std::vector<const Field*> train_refs;
        for (std::size_t t = b; t < e; ++t) train_refs.push_back(&ds.field(var, t));
        clims.emplace(var, SeepsClimatology::from_training(train_refs, mc.seeps_dry_threshold));
    }

    nlohmann::json vars_json = nlohmann::json::object();
    std::string csv = "variable,metric,value\n";
    for (const auto& var : ps.variables) {
        const VariableInfo& info = ds.manifest.var(var);
        const Mask* mask = ds.mask_for(var);
        std::vector<Field> pred_store, ref_store;
        for (std::size_t t = ps.first_step; t < ps.last_step; ++t) {
            pred_store.push_back(ps.field(var, t));
            ref_store.push_back(ds.field(var, t));
        }
        std::vector<const Field*> preds, refs;
        for (const auto& f : pred_store) preds.push_back(&f);
        for (const auto& f : ref_store) refs.push_back(&f);
        const SeepsClimatology* clim = nullptr;
        if (auto it = clims.find(var); it != clims.end()) clim = &it->second;
        auto scores = score_variable(preds, refs, info, weights, mask, mc, clim, ps.patch_size);

        nlohmann::json vj{{"n_samples", scores.n_samples}};
        for (const auto& [name, value] : scores.values) {
            vj[name] = value;
            char buf[48];
            std::snprintf(buf, sizeof(buf), "%.10g", value);
            csv += var + "," + name + "," + buf + "\n";
        }
        if (!scores.flags.empty()) {
            nlohmann::json fj = nlohmann::json::object();
            for (const auto& [name, count] : scores.flags) fj[name] = count;
            vj["flags"] = fj;
        }
        vars_json[var] = vj;
    }

    EvalReport rep;
    rep.j = nlohmann::json{{"format", "lh-report-v1"},
                           {"variables", vars_json},
                           {"config",
                            {{"fss_window", mc.fss_window},
                             {"fss_thresholds", mc.fss_thresholds},
                             {"seeps_dry_threshold", mc.seeps_dry_threshold},
                             {"relative_normalizer", mc.relative_normalizer}}},
                           {"n_steps", ps.last_step - ps.first_step},
                           {"source_dataset_hash", ps.source_dataset_hash}};
    rep.csv = std::move(csv);
    return rep;
}

}  // namespace lh
