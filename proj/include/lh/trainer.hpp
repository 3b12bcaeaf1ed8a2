#pragma once

// Training modes over the synthetic dataset:
//   pretrain  — next-step forecasting of the base variables; the resulting
//               checkpoint is saved frozen and is the "foundation model".
//   decoder   — frozen backbone, per-variable MLP heads trained on a shared
//               read-only latent cache (the frozen forward runs once per
//               sample, amortized across epochs).
//   finetune  — full-model analog: new variables join the inputs via linear
//               patch encoders and the outputs via linear decoders, and
//               every parameter updates.
// Gradients are accumulated per sample into per-slot buffers and reduced in
// sample order, so results are bit-reproducible for any thread count.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "lh/backbone.hpp"
#include "lh/checkpoint.hpp"
#include "lh/dataset.hpp"
#include "lh/heads.hpp"
#include "lh/loss.hpp"
#include "lh/optim.hpp"

namespace lh {

enum class TrainMode { pretrain, decoder, finetune };

inline std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::pretrain: return "pretrain";
        case TrainMode::decoder: return "decoder";
        case TrainMode::finetune: return "finetune";
    }
    return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
    if (s == "pretrain") return TrainMode::pretrain;
    if (s == "decoder") return TrainMode::decoder;
    if (s == "finetune") return TrainMode::finetune;
    throw std::invalid_argument("unknown train mode: " + s);
}

struct TrainConfig {
    TrainMode mode = TrainMode::decoder;
    double lr_max = 5e-4;
    double lr_min = 5e-5;
    long warmup_steps = -1;  // -1: 100 for pretrain/decoder, 500 for finetune
    int epochs = 10;
    std::size_t batch_size = 8;
    std::uint64_t seed = 42;
    std::map<std::string, double> loss_weights;  // per variable, default 1
    int threads = 0;                             // 0 = hardware concurrency
    HeadDims head_dims = HeadDims::literal;
    std::vector<std::string> head_variables;     // default: all dataset targets

    long effective_warmup() const {
        if (warmup_steps >= 0) return warmup_steps;
        return mode == TrainMode::finetune ? 500 : 100;
    }
    double weight_for(const std::string& var) const {
        auto it = loss_weights.find(var);
        return it == loss_weights.end() ? 1.0 : it->second;
    }
    void validate() const {
        if (lr_min > lr_max) throw std::invalid_argument("TrainConfig: lr_min > lr_max");
        if (effective_warmup() < 0) throw std::invalid_argument("TrainConfig: warmup < 0");
        if (epochs < 1 || batch_size < 1)
            throw std::invalid_argument("TrainConfig: epochs and batch_size must be >= 1");
    }
};

struct CostReport {
    double flops_per_step = 0.0;      // per sample per optimizer visit
    double cache_build_flops = 0.0;   // decoder mode: one-time frozen pass, per sample
    std::size_t trainable_params = 0;
    std::size_t frozen_params = 0;
    std::size_t peak_activation_floats = 0;
    double samples_per_second = 0.0;  // measured over the training loop
};

inline void to_json(nlohmann::json& j, const CostReport& c) {
    j = nlohmann::json{{"flops_per_step", c.flops_per_step},
                       {"cache_build_flops", c.cache_build_flops},
                       {"trainable_params", c.trainable_params},
                       {"frozen_params", c.frozen_params},
                       {"peak_activation_floats", c.peak_activation_floats},
                       {"samples_per_second", c.samples_per_second}};
}

struct LossCurvePoint {
    long step;
    std::string split;
    double loss;
};

struct TrainResult {
    std::vector<LossCurvePoint> curve;
    CostReport cost;
    std::filesystem::path checkpoint_dir;
    std::filesystem::path predictions_dir;  // decoder/finetune
    double final_val_loss = 0.0;
};

class TrainingDiverged : public std::runtime_error {
  public:
    explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Analytic cost model: 2 FLOPs per multiply-add of every linear map, x3 for
// trained paths (forward + backward), x1 forward through frozen paths.
// ---------------------------------------------------------------------------
namespace cost_detail {

inline double backbone_forward_macs(const BackboneConfig& cfg) {
    const double np = static_cast<double>(cfg.n_patches());
    const double E = static_cast<double>(cfg.E), C = static_cast<double>(cfg.channels());
    const double L = static_cast<double>(cfg.levels());
    const double PP = static_cast<double>(cfg.P * cfg.P);
    const double Ds = static_cast<double>(cfg.T) * PP * static_cast<double>(cfg.v_s());
    const double Da = static_cast<double>(cfg.T) * PP * static_cast<double>(cfg.v_a());
    const double Dn = static_cast<double>(cfg.T) * PP;
    double macs = np * Ds * E;                                   // surface embed
    macs += np * static_cast<double>(cfg.new_vars.size()) * Dn * E;  // new-var encoders
    if (cfg.L_lat > 0) {
        macs += np * static_cast<double>(cfg.L_atm) * Da * E;    // atm embed
        macs += np * static_cast<double>(cfg.L_lat * cfg.L_atm) * E;  // level reduce
    }
    macs += np * L * E * C;                                      // lift
    macs += static_cast<double>(cfg.n_blocks) * (np * np * L * C + np * L * C * C);  // mixing
    const double n_dec_sfc = static_cast<double>(cfg.surface_vars.size() + cfg.new_vars.size());
    macs += np * n_dec_sfc * C * PP;                             // surface decoders
    if (!cfg.atm_vars.empty()) {
        macs += np * static_cast<double>(cfg.L_atm * cfg.L_lat) * C;  // level expand
        macs += np * static_cast<double>(cfg.L_atm) *
                static_cast<double>(cfg.atm_vars.size()) * C * PP;    // atm decoders
    }
    return macs;
}

inline double heads_forward_macs(const BackboneConfig& cfg, const std::vector<std::size_t>& dims,
                                 std::size_t n_heads) {
    double per_patch = 0.0;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k)
        per_patch += static_cast<double>(dims[k] * dims[k + 1]);
    return static_cast<double>(cfg.n_patches()) * per_patch * static_cast<double>(n_heads);
}

inline std::size_t backbone_activation_floats(const BackboneConfig& cfg) {
    const std::size_t np = cfg.n_patches(), E = cfg.E, C = cfg.channels(), L = cfg.levels();
    const std::size_t PP = cfg.P * cfg.P;
    std::size_t n = np * cfg.T * PP * cfg.v_s();           // patch inputs
    n += np * L * E;                                       // tokens
    n += np * L * C;                                       // lifted
    n += cfg.n_blocks * 2 * np * L * C;                    // block in/mid
    n += np * L * C;                                       // latent
    return n;
}

}  // namespace cost_detail

/// Analytic FLOP/memory cost for one mode at one config.  Decoder-mode
/// flops_per_step amortizes the frozen forward across epochs (the latent
/// cache is built once); the cache cost itself is reported separately.
inline CostReport flop_count(const BackboneConfig& cfg, TrainMode mode,
                             const std::vector<std::size_t>& head_dims_chain,
                             std::size_t n_heads, int epochs,
                             std::size_t batch_size = 8) {
    CostReport c;
    const double bfwd = 2.0 * cost_detail::backbone_forward_macs(cfg);
    const double hfwd = 2.0 * cost_detail::heads_forward_macs(cfg, head_dims_chain, n_heads);
    const std::size_t bparams = [&] {
        auto b = Backbone::create(cfg, 0);
        return b.params.total_size();
    }();
    const std::size_t hparams = n_heads * param_count(head_dims_chain);

    switch (mode) {
        case TrainMode::pretrain:
            c.flops_per_step = 3.0 * bfwd;
            c.trainable_params = bparams;
            c.frozen_params = 0;
            c.peak_activation_floats = batch_size * cost_detail::backbone_activation_floats(cfg);
            break;
        case TrainMode::decoder:
            c.cache_build_flops = bfwd;
            c.flops_per_step = 3.0 * hfwd + bfwd / static_cast<double>(epochs);
            c.trainable_params = hparams;
            c.frozen_params = bparams;
            c.peak_activation_floats =
                batch_size * (cfg.n_patches() * cfg.channels() +
                              cfg.n_patches() * (head_dims_chain.empty()
                                                     ? 0
                                                     : [&] {
                                                           std::size_t a = 0;
                                                           for (auto d : head_dims_chain) a += d;
                                                           return a;
                                                       }()) *
                                  n_heads);
            break;
        case TrainMode::finetune:
            c.flops_per_step = 3.0 * bfwd;  // cfg here includes new-var encoders/decoders
            c.trainable_params = bparams;
            c.frozen_params = 0;
            c.peak_activation_floats = batch_size * cost_detail::backbone_activation_floats(cfg);
            break;
    }
    return c;
}

// ---------------------------------------------------------------------------
// Sample assembly
// ---------------------------------------------------------------------------
namespace train_detail {

/// Sample t: inputs at (t-1, t), target at t+1.  Valid t per split [b, e):
/// b+1 <= t <= e-2.
inline std::vector<std::size_t> sample_indices(const DatasetManifest& m,
                                               const std::string& split) {
    auto it = m.splits.find(split);
    if (it == m.splits.end()) throw std::invalid_argument("unknown split " + split);
    const auto [b, e] = it->second;
    std::vector<std::size_t> out;
    for (std::size_t t = b + 1; t + 1 < e; ++t) out.push_back(t);
    return out;
}

inline SampleInputs make_inputs(const Dataset& ds, const BackboneConfig& cfg, std::size_t t) {
    SampleInputs in;
    for (const auto& var : cfg.surface_vars)
        in.surface.push_back({ds.standardized(var, t - 1), ds.standardized(var, t)});
    for (const auto& var : cfg.static_vars) {
        Field f(cfg.H, cfg.W, 0.0);
        const Mask& land = ds.land();
        for (std::size_t i = 0; i < f.v.size(); ++i) f.v[i] = static_cast<double>(land.v[i]);
        in.statics.push_back(std::move(f));
        (void)var;
    }
    for (const auto& var : cfg.new_vars)
        in.new_vars.push_back({ds.standardized(var, t - 1), ds.standardized(var, t)});
    return in;
}

inline int resolve_threads(int threads) {
#ifdef _OPENMP
    if (threads <= 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }
    return threads;
#else
    (void)threads;
    return 1;
#endif
}

inline void write_loss_curve(const std::filesystem::path& path,
                             const std::vector<LossCurvePoint>& curve) {
    std::ofstream out(path);
    out << "step,split,loss\n";
    for (const auto& p : curve) out << p.step << "," << p.split << "," << p.loss << "\n";
}

struct PredictionWriter {
    std::filesystem::path dir;
    std::vector<std::string> variables;
    std::size_t first_step = 0, last_step = 0;
    std::size_t patch_size = 4;

    void write(const Dataset& ds, const std::string& var, std::size_t step,
               const Field& standardized_pred) {
        namespace fs = std::filesystem;
        fs::create_directories(dir / "fields");
        Field phys = ds.unstandardize(var, standardized_pred);
        write_field_f32(dir / "fields" / field_file_name(var, step), phys);
        if (first_step == 0 || step < first_step) first_step = step;
        if (step > last_step) last_step = step;
        if (std::find(variables.begin(), variables.end(), var) == variables.end())
            variables.push_back(var);
    }

    void finish(const std::string& source_dataset_hash) const {
        nlohmann::json j{{"format", "lh-predictions-v1"},
                         {"variables", variables},
                         {"steps", {first_step, last_step + 1}},
                         {"patch_size", patch_size},
                         {"source_dataset_hash", source_dataset_hash}};
        std::ofstream out(dir / "manifest.json");
        out << j.dump(2) << "\n";
    }
};

}  // namespace train_detail

// ---------------------------------------------------------------------------
// Backbone config for a dataset
// ---------------------------------------------------------------------------
inline BackboneConfig default_backbone_config(const DatasetManifest& m) {
    BackboneConfig cfg;
    cfg.T = 2;
    cfg.H = m.H;
    cfg.W = m.W;
    cfg.P = 4;
    cfg.E = 32;
    cfg.L_atm = 3;
    cfg.L_lat = 3;
    cfg.n_blocks = 2;
    cfg.surface_vars = m.ids_of_kind("base");
    cfg.static_vars = {"land"};
    return cfg;
}

// ---------------------------------------------------------------------------
// Mode: pretrain
// ---------------------------------------------------------------------------
inline TrainResult pretrain(const Dataset& ds, BackboneConfig bb_cfg, const TrainConfig& cfg,
                            const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    cfg.validate();
    bb_cfg.new_vars.clear();
    Backbone model = Backbone::create(bb_cfg, cfg.seed);
    auto weights = lat_weights(ds.manifest.lats);

    auto train_ids = train_detail::sample_indices(ds.manifest, "train");
    auto val_ids = train_detail::sample_indices(ds.manifest, "val");
    const std::size_t steps_per_epoch =
        (train_ids.size() + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
    const long warmup = cfg.effective_warmup();
    if (total_steps <= warmup)
        throw std::invalid_argument("pretrain: total steps <= warmup (dataset too small)");

    OptState opt = OptState::init(model.params);
    const int threads = train_detail::resolve_threads(cfg.threads);
    std::vector<ParamSet> grad_slots(cfg.batch_size);
    std::vector<double> loss_slots(cfg.batch_size);
    for (auto& g : grad_slots) g = model.params.zeros_like();

    auto sample_loss_grad = [&](std::size_t t, ParamSet& grads, bool want_grad) {
        SampleInputs in = train_detail::make_inputs(ds, bb_cfg, t);
        ForwardCache fc = model.forward(in);
        double total = 0.0;
        std::vector<double> dlatent;
        if (want_grad) dlatent.assign(fc.latent.v.size(), 0.0);
        double wsum = 0.0;
        for (const auto& var : bb_cfg.surface_vars) wsum += cfg.weight_for(var);
        for (const auto& var : bb_cfg.surface_vars) {
            Field pred = model.decode_surface(fc.latent, var);
            Field ref = ds.standardized(var, t + 1);
            const Mask* mask = ds.mask_for(var);
            auto r = wmae_loss(pred, ref, weights, mask, want_grad);
            const double w = cfg.weight_for(var) / wsum;
            total += w * r.loss;
            if (want_grad) {
                for (auto& g : r.grad.v) g *= w;
                model.decode_surface_backward(fc.latent, var, r.grad, grads, dlatent);
            }
        }
        if (want_grad) model.backward(in, fc, std::move(dlatent), grads);
        return total;
    };

    TrainResult result;
    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5f5f5f5fULL);
    long step = 0;
    {
        // Validation loss of the untouched model anchors the curve.
        double val0 = 0.0;
        ParamSet dummy;
        for (auto t : val_ids) val0 += sample_loss_grad(t, dummy, false);
        result.curve.push_back({0, "val", val0 / static_cast<double>(val_ids.size())});
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t samples_processed = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = train_ids;
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
            const std::size_t bs = std::min(cfg.batch_size, order.size() - off);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
            for (std::size_t k = 0; k < bs; ++k) {
                grad_slots[k].zero();
                loss_slots[k] = sample_loss_grad(order[off + k], grad_slots[k], true);
            }
            ParamSet total_grad = grad_slots[0].zeros_like();
            double batch_loss = 0.0;
            for (std::size_t k = 0; k < bs; ++k) {  // fixed reduction order
                total_grad.accumulate(grad_slots[k]);
                batch_loss += loss_slots[k];
            }
            total_grad.scale(1.0 / static_cast<double>(bs));
            batch_loss /= static_cast<double>(bs);
            if (!std::isfinite(batch_loss)) {
                save_checkpoint(out_dir, {"backbone", true, nlohmann::json{}}, model.params);
                throw TrainingDiverged("pretrain: loss diverged at step " + std::to_string(step));
            }
            const double lr = lr_schedule(step, total_steps, cfg.lr_max, cfg.lr_min, warmup);
            adam_step(model.params, total_grad, opt, lr);
            result.curve.push_back({step, "train", batch_loss});
            ++step;
            samples_processed += bs;
        }
        // Validation loss at epoch end.
        double val = 0.0;
        ParamSet dummy;
        for (auto t : val_ids) val += sample_loss_grad(t, dummy, false);
        val /= static_cast<double>(val_ids.size());
        result.curve.push_back({step, "val", val});
        result.final_val_loss = val;
    }
    const auto t1 = std::chrono::steady_clock::now();

    nlohmann::json bb_json{{"T", bb_cfg.T},         {"H", bb_cfg.H},
                           {"W", bb_cfg.W},         {"P", bb_cfg.P},
                           {"E", bb_cfg.E},         {"L_atm", bb_cfg.L_atm},
                           {"L_lat", bb_cfg.L_lat}, {"n_blocks", bb_cfg.n_blocks},
                           {"surface_vars", bb_cfg.surface_vars},
                           {"static_vars", bb_cfg.static_vars},
                           {"atm_vars", bb_cfg.atm_vars},
                           {"new_vars", bb_cfg.new_vars}};
    save_checkpoint(out_dir, {"backbone", true, bb_json}, model.params);
    result.checkpoint_dir = out_dir;
    train_detail::write_loss_curve(out_dir / "loss_curve.csv", result.curve);

    result.cost = flop_count(bb_cfg, TrainMode::pretrain, head_layer_dims(bb_cfg.E, bb_cfg.P), 0,
                             cfg.epochs, cfg.batch_size);
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    result.cost.samples_per_second = secs > 0 ? static_cast<double>(samples_processed) / secs : 0;
    return result;
}

inline BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
    BackboneConfig cfg;
    cfg.T = j.at("T").get<std::size_t>();
    cfg.H = j.at("H").get<std::size_t>();
    cfg.W = j.at("W").get<std::size_t>();
    cfg.P = j.at("P").get<std::size_t>();
    cfg.E = j.at("E").get<std::size_t>();
    cfg.L_atm = j.at("L_atm").get<std::size_t>();
    cfg.L_lat = j.at("L_lat").get<std::size_t>();
    cfg.n_blocks = j.at("n_blocks").get<std::size_t>();
    cfg.surface_vars = j.at("surface_vars").get<std::vector<std::string>>();
    cfg.static_vars = j.at("static_vars").get<std::vector<std::string>>();
    cfg.atm_vars = j.at("atm_vars").get<std::vector<std::string>>();
    cfg.new_vars = j.at("new_vars").get<std::vector<std::string>>();
    return cfg;
}

inline Backbone load_backbone(const std::filesystem::path& ckpt_dir, bool expect_frozen) {
    auto [params, info] = load_checkpoint(ckpt_dir);
    if (info.kind != "backbone" && info.kind != "finetune")
        throw std::runtime_error("load_backbone: checkpoint kind is " + info.kind);
    Backbone b;
    b.cfg = backbone_config_from_json(info.config);
    b.cfg.validate();
    b.params = std::move(params);
    if (expect_frozen && !b.params.frozen)
        throw std::runtime_error("load_backbone: checkpoint is not frozen");
    return b;
}

// ---------------------------------------------------------------------------
// Mode: decoder (frozen backbone, MLP heads)
// ---------------------------------------------------------------------------
struct LatentCache {
    std::size_t n_patches = 0, channels = 0;
    std::map<std::size_t, std::size_t> slot_of_step;
    std::vector<double> data;  // [slot][n_patches * channels], surface level only

    const double* slice(std::size_t t) const {
        return data.data() + slot_of_step.at(t) * n_patches * channels;
    }
    std::vector<double> slice_vec(std::size_t t) const {
        const double* p = slice(t);
        return std::vector<double>(p, p + n_patches * channels);
    }
};

inline LatentCache build_latent_cache(const Dataset& ds, const Backbone& frozen,
                                      const std::vector<std::size_t>& steps, int threads) {
    LatentCache cache;
    cache.n_patches = frozen.cfg.n_patches();
    cache.channels = frozen.cfg.channels();
    const std::size_t stride = cache.n_patches * cache.channels;
    cache.data.assign(steps.size() * stride, 0.0);
    for (std::size_t k = 0; k < steps.size(); ++k) cache.slot_of_step[steps[k]] = k;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
    for (std::size_t k = 0; k < steps.size(); ++k) {
        SampleInputs in = train_detail::make_inputs(ds, frozen.cfg, steps[k]);
        ForwardCache fc = frozen.forward(in);
        double* dst = cache.data.data() + k * stride;
        for (std::size_t p = 0; p < cache.n_patches; ++p)
            for (std::size_t c = 0; c < cache.channels; ++c)
                dst[p * cache.channels + c] = fc.latent.at(p, 0)[c];
    }
    return cache;
}

inline TrainResult train_decoder(const Dataset& ds, const std::filesystem::path& backbone_ckpt,
                                 const TrainConfig& cfg, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    cfg.validate();
    Backbone frozen = load_backbone(backbone_ckpt, true);
    const BackboneConfig& bb_cfg = frozen.cfg;
    auto weights = lat_weights(ds.manifest.lats);

    std::vector<std::string> head_vars =
        cfg.head_variables.empty() ? ds.manifest.ids_of_kind("target") : cfg.head_variables;

    auto train_ids = train_detail::sample_indices(ds.manifest, "train");
    auto val_ids = train_detail::sample_indices(ds.manifest, "val");
    auto test_ids = train_detail::sample_indices(ds.manifest, "test");
    const std::size_t steps_per_epoch =
        (train_ids.size() + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
    const long warmup = cfg.effective_warmup();
    if (total_steps <= warmup)
        throw std::invalid_argument("train_decoder: total steps <= warmup");

    const int threads = train_detail::resolve_threads(cfg.threads);
    const auto t0 = std::chrono::steady_clock::now();

    // Shared read-only latent cache over every step any split touches.
    std::vector<std::size_t> all_steps = train_ids;
    all_steps.insert(all_steps.end(), val_ids.begin(), val_ids.end());
    all_steps.insert(all_steps.end(), test_ids.begin(), test_ids.end());
    LatentCache cache = build_latent_cache(ds, frozen, all_steps, threads);

    const auto dims = head_layer_dims(bb_cfg.E, bb_cfg.P, cfg.head_dims);
    std::vector<MlpHead> heads;
    std::vector<OptState> opts;
    for (std::size_t k = 0; k < head_vars.size(); ++k) {
        const bool log_space = ds.manifest.var(head_vars[k]).log_space;
        heads.push_back(MlpHead::create(head_vars[k], dims, cfg.seed + 1000 + k, log_space));
        opts.push_back(OptState::init(heads.back().params));
    }

    struct Slot {
        std::vector<ParamSet> grads;  // per head
        double loss = 0.0;
    };
    std::vector<Slot> slots(cfg.batch_size);
    for (auto& s : slots)
        for (const auto& h : heads) s.grads.push_back(h.params.zeros_like());

    double head_wsum = 0.0;
    for (const auto& v : head_vars) head_wsum += cfg.weight_for(v);

    auto sample_loss = [&](std::size_t t, Slot* slot) {
        std::vector<double> latent = cache.slice_vec(t);
        double total = 0.0;
        for (std::size_t k = 0; k < heads.size(); ++k) {
            Field pred = head_forward(latent, cache.n_patches, heads[k], bb_cfg.H, bb_cfg.W,
                                      bb_cfg.P);
            Field ref = ds.standardized(heads[k].var_id, t + 1);
            const Mask* mask = ds.mask_for(heads[k].var_id);
            auto r = wmae_loss(pred, ref, weights, mask, slot != nullptr);
            const double w = cfg.weight_for(heads[k].var_id) / head_wsum;
            total += w * r.loss;
            if (slot) {
                for (auto& g : r.grad.v) g *= w;
                auto hb = head_backward(latent, cache.n_patches, heads[k], r.grad, bb_cfg.P);
                slot->grads[k].accumulate(hb.param_grads);
            }
        }
        return total;
    };

    TrainResult result;
    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x6a6a6a6aULL);
    long step = 0;
    std::size_t samples_processed = 0;
    {
        double val0 = 0.0;
        for (auto t : val_ids) val0 += sample_loss(t, nullptr);
        result.curve.push_back({0, "val", val0 / static_cast<double>(val_ids.size())});
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = train_ids;
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
            const std::size_t bs = std::min(cfg.batch_size, order.size() - off);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
            for (std::size_t k = 0; k < bs; ++k) {
                for (auto& g : slots[k].grads) g.zero();
                slots[k].loss = sample_loss(order[off + k], &slots[k]);
            }
            double batch_loss = 0.0;
            std::vector<ParamSet> total(heads.size());
            for (std::size_t h = 0; h < heads.size(); ++h) total[h] = heads[h].params.zeros_like();
            for (std::size_t k = 0; k < bs; ++k) {
                batch_loss += slots[k].loss;
                for (std::size_t h = 0; h < heads.size(); ++h)
                    total[h].accumulate(slots[k].grads[h]);
            }
            batch_loss /= static_cast<double>(bs);
            if (!std::isfinite(batch_loss))
                throw TrainingDiverged("train_decoder: loss diverged at step " +
                                       std::to_string(step));
            const double lr = lr_schedule(step, total_steps, cfg.lr_max, cfg.lr_min, warmup);
            for (std::size_t h = 0; h < heads.size(); ++h) {
                total[h].scale(1.0 / static_cast<double>(bs));
                adam_step(heads[h].params, total[h], opts[h], lr);
            }
            result.curve.push_back({step, "train", batch_loss});
            ++step;
            samples_processed += bs;
        }
        double val = 0.0;
        for (auto t : val_ids) val += sample_loss(t, nullptr);
        val /= static_cast<double>(val_ids.size());
        result.curve.push_back({step, "val", val});
        result.final_val_loss = val;
    }
    const auto t1 = std::chrono::steady_clock::now();

    // Heads checkpoint: all heads in one ParamSet, names prefixed by var id.
    ParamSet all;
    for (const auto& h : heads)
        for (const auto& t : h.params.items) {
            auto& nt = all.add(h.var_id + "/" + t.name, t.shape);
            nt.v = t.v;
        }
    nlohmann::json heads_json{{"variables", head_vars},
                              {"dims", dims},
                              {"backbone_checkpoint", backbone_ckpt.string()}};
    save_checkpoint(out_dir / "heads", {"heads", false, heads_json}, all);
    result.checkpoint_dir = out_dir / "heads";
    train_detail::write_loss_curve(out_dir / "loss_curve.csv", result.curve);

    // Test-split predictions in physical units.
    train_detail::PredictionWriter pw;
    pw.dir = out_dir / "predictions";
    pw.patch_size = bb_cfg.P;
    for (auto t : test_ids) {
        std::vector<double> latent = cache.slice_vec(t);
        for (const auto& h : heads) {
            Field pred = head_forward(latent, cache.n_patches, h, bb_cfg.H, bb_cfg.W, bb_cfg.P);
            pw.write(ds, h.var_id, t + 1, pred);
        }
    }
    pw.finish(ds.manifest.dataset_hash);
    result.predictions_dir = pw.dir;

    result.cost = flop_count(bb_cfg, TrainMode::decoder, dims, heads.size(), cfg.epochs,
                             cfg.batch_size);
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    result.cost.samples_per_second = secs > 0 ? static_cast<double>(samples_processed) / secs : 0;
    return result;
}

// ---------------------------------------------------------------------------
// Mode: finetune (full model, new variables as inputs and outputs)
// ---------------------------------------------------------------------------
inline TrainResult finetune(const Dataset& ds, const std::filesystem::path& backbone_ckpt,
                            const TrainConfig& cfg, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    cfg.validate();
    Backbone pretrained = load_backbone(backbone_ckpt, false);

    std::vector<std::string> new_vars =
        cfg.head_variables.empty() ? ds.manifest.ids_of_kind("target") : cfg.head_variables;

    BackboneConfig ft_cfg = pretrained.cfg;
    ft_cfg.new_vars = new_vars;
    Backbone model = Backbone::create(ft_cfg, cfg.seed + 17);
    model.params.frozen = false;
    // Adopt every pretrained tensor; newly added encoders/decoders keep
    // their fresh initialization.
    for (const auto& t : pretrained.params.items) model.params.get(t.name).v = t.v;

    auto weights = lat_weights(ds.manifest.lats);
    auto train_ids = train_detail::sample_indices(ds.manifest, "train");
    auto val_ids = train_detail::sample_indices(ds.manifest, "val");
    auto test_ids = train_detail::sample_indices(ds.manifest, "test");
    const std::size_t steps_per_epoch =
        (train_ids.size() + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
    const long warmup = cfg.effective_warmup();
    if (total_steps <= warmup)
        throw std::invalid_argument("finetune: total steps <= warmup");

    OptState opt = OptState::init(model.params);
    const int threads = train_detail::resolve_threads(cfg.threads);
    std::vector<ParamSet> grad_slots(cfg.batch_size);
    std::vector<double> loss_slots(cfg.batch_size);
    for (auto& g : grad_slots) g = model.params.zeros_like();

    // Joint loss over base + new variables, each weight 1 by default.
    std::vector<std::string> all_vars = ft_cfg.surface_vars;
    all_vars.insert(all_vars.end(), new_vars.begin(), new_vars.end());
    double wsum = 0.0;
    for (const auto& v : all_vars) wsum += cfg.weight_for(v);

    auto sample_loss_grad = [&](std::size_t t, ParamSet& grads, bool want_grad) {
        SampleInputs in = train_detail::make_inputs(ds, ft_cfg, t);
        ForwardCache fc = model.forward(in);
        double total = 0.0;
        std::vector<double> dlatent;
        if (want_grad) dlatent.assign(fc.latent.v.size(), 0.0);
        for (const auto& var : all_vars) {
            Field pred = model.decode_surface(fc.latent, var);
            Field ref = ds.standardized(var, t + 1);
            const Mask* mask = ds.mask_for(var);
            auto r = wmae_loss(pred, ref, weights, mask, want_grad);
            const double w = cfg.weight_for(var) / wsum;
            total += w * r.loss;
            if (want_grad) {
                for (auto& g : r.grad.v) g *= w;
                model.decode_surface_backward(fc.latent, var, r.grad, grads, dlatent);
            }
        }
        if (want_grad) model.backward(in, fc, std::move(dlatent), grads);
        return total;
    };

    TrainResult result;
    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x7b7b7b7bULL);
    long step = 0;
    {
        double val0 = 0.0;
        ParamSet dummy;
        for (auto t : val_ids) val0 += sample_loss_grad(t, dummy, false);
        result.curve.push_back({0, "val", val0 / static_cast<double>(val_ids.size())});
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t samples_processed = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = train_ids;
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
            const std::size_t bs = std::min(cfg.batch_size, order.size() - off);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
            for (std::size_t k = 0; k < bs; ++k) {
                grad_slots[k].zero();
                loss_slots[k] = sample_loss_grad(order[off + k], grad_slots[k], true);
            }
            ParamSet total_grad = grad_slots[0].zeros_like();
            double batch_loss = 0.0;
            for (std::size_t k = 0; k < bs; ++k) {
                total_grad.accumulate(grad_slots[k]);
                batch_loss += loss_slots[k];
            }
            total_grad.scale(1.0 / static_cast<double>(bs));
            batch_loss /= static_cast<double>(bs);
            if (!std::isfinite(batch_loss)) {
                save_checkpoint(out_dir / "finetuned", {"finetune", false, nlohmann::json{}},
                                model.params);
                throw TrainingDiverged("finetune: loss diverged at step " + std::to_string(step));
            }
            const double lr = lr_schedule(step, total_steps, cfg.lr_max, cfg.lr_min, warmup);
            adam_step(model.params, total_grad, opt, lr);
            result.curve.push_back({step, "train", batch_loss});
            ++step;
            samples_processed += bs;
        }
        double val = 0.0;
        ParamSet dummy;
        for (auto t : val_ids) val += sample_loss_grad(t, dummy, false);
        val /= static_cast<double>(val_ids.size());
        result.curve.push_back({step, "val", val});
        result.final_val_loss = val;
    }
    const auto t1 = std::chrono::steady_clock::now();

    nlohmann::json bb_json{{"T", ft_cfg.T},         {"H", ft_cfg.H},
                           {"W", ft_cfg.W},         {"P", ft_cfg.P},
                           {"E", ft_cfg.E},         {"L_atm", ft_cfg.L_atm},
                           {"L_lat", ft_cfg.L_lat}, {"n_blocks", ft_cfg.n_blocks},
                           {"surface_vars", ft_cfg.surface_vars},
                           {"static_vars", ft_cfg.static_vars},
                           {"atm_vars", ft_cfg.atm_vars},
                           {"new_vars", ft_cfg.new_vars}};
    save_checkpoint(out_dir / "finetuned", {"finetune", false, bb_json}, model.params);
    result.checkpoint_dir = out_dir / "finetuned";
    train_detail::write_loss_curve(out_dir / "loss_curve.csv", result.curve);

    train_detail::PredictionWriter pw;
    pw.dir = out_dir / "predictions";
    pw.patch_size = ft_cfg.P;
    for (auto t : test_ids) {
        SampleInputs in = train_detail::make_inputs(ds, ft_cfg, t);
        ForwardCache fc = model.forward(in);
        for (const auto& var : new_vars) {
            Field pred = model.decode_surface(fc.latent, var);
            pw.write(ds, var, t + 1, pred);
        }
    }
    pw.finish(ds.manifest.dataset_hash);
    result.predictions_dir = pw.dir;

    result.cost = flop_count(ft_cfg, TrainMode::finetune,
                             head_layer_dims(ft_cfg.E, ft_cfg.P, cfg.head_dims), new_vars.size(),
                             cfg.epochs, cfg.batch_size);
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    result.cost.samples_per_second = secs > 0 ? static_cast<double>(samples_processed) / secs : 0;
    return result;
}

}  // namespace lh
