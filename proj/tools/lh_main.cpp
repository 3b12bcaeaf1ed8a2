// lh: single entry point for the synthetic-planet decoder-head toolkit.
//
// Commands: gen-data, pretrain, train-decoder, finetune, evaluate, rollout,
// basins, spectra, cost-report.  Configuration is one JSON document with
// per-module sections; command-line flags override it, and the LH_SEED
// environment variable overrides the config seed (flags beat both).
//
// Exit codes: 0 success, 2 configuration error, 3 runtime/numerical error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lh/basins.hpp"
#include "lh/dataset.hpp"
#include "lh/hash.hpp"
#include "lh/report.hpp"
#include "lh/rollout.hpp"
#include "lh/run_manifest.hpp"
#include "lh/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    return j;
}

std::uint64_t resolve_seed(const json& cfg, std::optional<std::uint64_t> flag_seed) {
    if (flag_seed) return *flag_seed;
    if (const char* env = std::getenv("LH_SEED")) {
        try {
            return std::stoull(env);
        } catch (...) {
            throw ConfigError("LH_SEED is not an integer");
        }
    }
    return cfg.value("seed", std::uint64_t{42});
}

lh::WorldConfig world_from_config(const json& cfg, std::uint64_t seed) {
    json w = cfg.value("world", json::object());
    w["seed"] = seed;
    try {
        return lh::world_config_from_json(w);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("world config: ") + e.what());
    }
}

lh::GenSplits splits_from_config(const json& cfg) {
    lh::GenSplits s;
    if (cfg.contains("splits")) {
        const json& j = cfg.at("splits");
        s.train = j.value("train", s.train);
        s.val = j.value("val", s.val);
        s.test = j.value("test", s.test);
    }
    if (s.train < 3 || s.val < 3 || s.test < 3)
        throw ConfigError("splits: each split needs at least 3 steps");
    return s;
}

lh::BackboneConfig backbone_from_config(const json& cfg, const lh::DatasetManifest& m) {
    lh::BackboneConfig bb = lh::default_backbone_config(m);
    if (cfg.contains("backbone")) {
        const json& j = cfg.at("backbone");
        bb.T = j.value("T", bb.T);
        bb.P = j.value("P", bb.P);
        bb.E = j.value("E", bb.E);
        bb.L_atm = j.value("L_atm", bb.L_atm);
        bb.L_lat = j.value("L_lat", bb.L_lat);
        bb.n_blocks = j.value("n_blocks", bb.n_blocks);
    }
    try {
        bb.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("backbone config: ") + e.what());
    }
    return bb;
}

lh::TrainConfig train_from_config(const json& cfg, lh::TrainMode mode, std::uint64_t seed,
                                  int threads_flag, int epochs_flag) {
    lh::TrainConfig tc;
    tc.mode = mode;
    tc.seed = seed;
    if (cfg.contains("train")) {
        const json& j = cfg.at("train");
        tc.lr_max = j.value("lr_max", tc.lr_max);
        tc.lr_min = j.value("lr_min", tc.lr_min);
        tc.epochs = j.value("epochs", tc.epochs);
        tc.batch_size = j.value("batch_size", tc.batch_size);
        if (mode == lh::TrainMode::pretrain)
            tc.epochs = j.value("pretrain_epochs", tc.epochs);
        const char* wkey = mode == lh::TrainMode::finetune ? "warmup_finetune" : "warmup_decoder";
        if (j.contains(wkey)) tc.warmup_steps = j.at(wkey).get<long>();
        if (j.contains("head_dims"))
            tc.head_dims = j.at("head_dims").get<std::string>() == "compact"
                               ? lh::HeadDims::compact
                               : lh::HeadDims::literal;
        if (j.contains("head_variables"))
            tc.head_variables = j.at("head_variables").get<std::vector<std::string>>();
        if (j.contains("loss_weights"))
            tc.loss_weights = j.at("loss_weights").get<std::map<std::string, double>>();
        tc.threads = j.value("threads", 0);
    }
    if (threads_flag > 0) tc.threads = threads_flag;
    if (cfg.contains("threads") && tc.threads == 0) tc.threads = cfg.value("threads", 0);
    if (epochs_flag > 0) tc.epochs = epochs_flag;
    try {
        tc.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    return tc;
}

lh::MetricConfig metrics_from_config(const json& cfg) {
    lh::MetricConfig mc;
    if (cfg.contains("metrics")) {
        const json& j = cfg.at("metrics");
        mc.fss_window = j.value("fss_window", mc.fss_window);
        if (j.contains("fss_thresholds"))
            mc.fss_thresholds = j.at("fss_thresholds").get<std::vector<double>>();
        mc.seeps_dry_threshold = j.value("seeps_dry_threshold", mc.seeps_dry_threshold);
        mc.relative_normalizer = j.value("relative_normalizer", mc.relative_normalizer);
    }
    try {
        mc.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("metrics config: ") + e.what());
    }
    return mc;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

int run_command(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const lh::TrainingDiverged& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latenthydro: frozen-backbone decoder heads on a synthetic planet"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, backbone_dir, heads_dir, pred_dir, ref_dir,
        masks_dir, csv_path, metrics_sel = "all";
    std::optional<std::uint64_t> seed_flag;
    int threads_flag = 0, epochs_flag = 0;
    long rollout_init = -1;
    std::size_t rollout_steps = 64;

    auto add_common = [&](CLI::App* cmd, bool with_data) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", seed_flag, "override seed (beats LH_SEED and config)");
        cmd->add_option("--threads", threads_flag, "max worker threads");
        if (with_data) cmd->add_option("--data", data_dir, "dataset directory")->required();
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen, false);
    gen->add_option("--out", out_path, "output directory")->required();

    auto* pre = app.add_subcommand("pretrain", "pretrain the backbone on base variables");
    add_common(pre, true);
    pre->add_option("--out", out_path, "checkpoint directory")->required();
    pre->add_option("--epochs", epochs_flag, "override epoch count");

    auto* dec = app.add_subcommand("train-decoder", "train MLP heads on the frozen latent");
    add_common(dec, true);
    dec->add_option("--backbone", backbone_dir, "frozen backbone checkpoint")->required();
    dec->add_option("--out", out_path, "output directory")->required();
    dec->add_option("--epochs", epochs_flag, "override epoch count");

    auto* fin = app.add_subcommand("finetune", "finetune the full model with new variables");
    add_common(fin, true);
    fin->add_option("--backbone", backbone_dir, "pretrained backbone checkpoint")->required();
    fin->add_option("--out", out_path, "output directory")->required();
    fin->add_option("--epochs", epochs_flag, "override epoch count");

    auto* eval = app.add_subcommand("evaluate", "score predictions against reference data");
    eval->add_option("--config", config_path, "JSON config file");
    eval->add_option("--pred", pred_dir, "predictions directory")->required();
    eval->add_option("--ref", ref_dir, "reference dataset directory")->required();
    eval->add_option("--metrics", metrics_sel, "metric selection (default: all)");
    eval->add_option("--out", out_path, "report path (.json)")->required();
    eval->add_option("--csv", csv_path, "also write a CSV table");

    auto* roll = app.add_subcommand("rollout", "autoregressive rollout with decoder heads");
    add_common(roll, true);
    roll->add_option("--backbone", backbone_dir, "frozen backbone checkpoint")->required();
    roll->add_option("--heads", heads_dir, "heads checkpoint");
    roll->add_option("--init", rollout_init, "initial step index (default: start of test split)");
    roll->add_option("--steps", rollout_steps, "number of rollout steps");
    roll->add_option("--out", out_path, "output directory")->required();

    auto* bas = app.add_subcommand("basins", "per-basin relative RMSE tables");
    bas->add_option("--config", config_path, "JSON config file");
    bas->add_option("--masks", masks_dir, "directory of basin mask rasters")->required();
    bas->add_option("--pred", pred_dir, "predictions directory")->required();
    bas->add_option("--ref", ref_dir, "reference dataset directory")->required();
    bas->add_option("--out", out_path, "output CSV path")->required();

    auto* spec = app.add_subcommand("spectra", "longitude energy spectra of pred vs ref");
    spec->add_option("--config", config_path, "JSON config file");
    spec->add_option("--pred", pred_dir, "predictions directory")->required();
    spec->add_option("--ref", ref_dir, "reference dataset directory")->required();
    spec->add_option("--out", out_path, "output CSV path")->required();

    auto* cost = app.add_subcommand("cost-report", "analytic training cost per mode");
    cost->add_option("--config", config_path, "JSON config file");
    cost->add_option("--data", data_dir, "dataset directory (for grid dims)");
    cost->add_option("--out", out_path, "output JSON path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    // ----- gen-data ---------------------------------------------------------
    if (gen->parsed()) {
        return run_command([&] {
            Timer timer;
            json cfg = load_config(config_path);
            const std::uint64_t seed = resolve_seed(cfg, seed_flag);
            lh::WorldConfig wc = world_from_config(cfg, seed);
            lh::GenSplits splits = splits_from_config(cfg);
            auto manifest = lh::generate_dataset(wc, splits, out_path);
            lh::RunManifest rm;
            rm.command = "gen-data";
            rm.config_hash = "sha256:" + lh::sha256_hex(cfg.dump());
            rm.dataset_hash = manifest.dataset_hash;
            rm.seed = seed;
            rm.artifacts = {(fs::path(out_path) / "manifest.json").string()};
            rm.wall_clock_seconds = timer.seconds();
            rm.write(out_path);
            std::cout << "dataset written to " << out_path << " (" << manifest.n_steps
                      << " steps, hash " << manifest.dataset_hash.substr(0, 23) << "...)\n";
            return 0;
        });
    }

    // ----- training modes ---------------------------------------------------
    auto run_training = [&](lh::TrainMode mode) {
        return run_command([&] {
            Timer timer;
            json cfg = load_config(config_path);
            const std::uint64_t seed = resolve_seed(cfg, seed_flag);
            lh::Dataset ds = lh::Dataset::load(data_dir);
            lh::TrainConfig tc = train_from_config(cfg, mode, seed, threads_flag, epochs_flag);
            lh::TrainResult result;
            switch (mode) {
                case lh::TrainMode::pretrain: {
                    lh::BackboneConfig bb = backbone_from_config(cfg, ds.manifest);
                    result = lh::pretrain(ds, bb, tc, out_path);
                    break;
                }
                case lh::TrainMode::decoder:
                    result = lh::train_decoder(ds, backbone_dir, tc, out_path);
                    break;
                case lh::TrainMode::finetune:
                    result = lh::finetune(ds, backbone_dir, tc, out_path);
                    break;
            }
            json cost_j;
            lh::to_json(cost_j, result.cost);
            {
                std::ofstream out(fs::path(out_path) / "cost_report.json");
                out << cost_j.dump(2) << "\n";
            }
            lh::RunManifest rm;
            rm.command = to_string(mode);
            rm.config_hash = "sha256:" + lh::sha256_hex(cfg.dump());
            rm.dataset_hash = ds.manifest.dataset_hash;
            rm.seed = seed;
            rm.artifacts = {result.checkpoint_dir.string(),
                            (fs::path(out_path) / "loss_curve.csv").string(),
                            (fs::path(out_path) / "cost_report.json").string()};
            if (!result.predictions_dir.empty())
                rm.artifacts.push_back(result.predictions_dir.string());
            rm.wall_clock_seconds = timer.seconds();
            rm.samples_per_second = result.cost.samples_per_second;
            rm.write(out_path);
            std::cout << to_string(mode) << " done: final val loss " << result.final_val_loss
                      << ", " << result.cost.samples_per_second << " samples/sec\n";
            return 0;
        });
    };
    if (pre->parsed()) return run_training(lh::TrainMode::pretrain);
    if (dec->parsed()) return run_training(lh::TrainMode::decoder);
    if (fin->parsed()) return run_training(lh::TrainMode::finetune);

    // ----- evaluate -----------------------------------------------------------
    if (eval->parsed()) {
        return run_command([&] {
            Timer timer;
            json cfg = load_config(config_path);
            if (metrics_sel != "all")
                throw ConfigError("--metrics currently supports only 'all'");
            lh::MetricConfig mc = metrics_from_config(cfg);
            lh::Dataset ds = lh::Dataset::load(ref_dir);
            auto rep = lh::evaluate_predictions(pred_dir, ds, mc);
            {
                std::ofstream out(out_path);
                if (!out) throw std::runtime_error("cannot write " + out_path);
                out << rep.j.dump(2) << "\n";
            }
            if (!csv_path.empty()) {
                std::ofstream out(csv_path);
                out << rep.csv;
            }
            lh::RunManifest rm;
            rm.command = "evaluate";
            rm.config_hash = "sha256:" + lh::sha256_hex(cfg.dump());
            rm.dataset_hash = ds.manifest.dataset_hash;
            rm.seed = 0;
            rm.artifacts = {out_path};
            if (!csv_path.empty()) rm.artifacts.push_back(csv_path);
            rm.wall_clock_seconds = timer.seconds();
            rm.write(fs::path(out_path).parent_path().empty()
                         ? fs::path(".")
                         : fs::path(out_path).parent_path());
            std::cout << "report written to " << out_path << "\n";
            return 0;
        });
    }

    // ----- rollout ------------------------------------------------------------
    if (roll->parsed()) {
        return run_command([&] {
            Timer timer;
            json cfg = load_config(config_path);
            lh::Dataset ds = lh::Dataset::load(data_dir);
            lh::Backbone bb = lh::load_backbone(backbone_dir, true);
            std::vector<lh::MlpHead> heads;
            if (!heads_dir.empty()) heads = lh::load_heads(heads_dir);
            if (cfg.contains("rollout")) {
                rollout_steps = cfg.at("rollout").value("steps", rollout_steps);
                if (rollout_init < 0) rollout_init = cfg.at("rollout").value("init", -1L);
            }
            const std::size_t init_t = rollout_init < 0
                                           ? ds.manifest.splits.at("test").first + 1
                                           : static_cast<std::size_t>(rollout_init);
            auto r = lh::rollout(ds, bb, heads, init_t, rollout_steps);

            fs::create_directories(fs::path(out_path) / "fields");
            std::string csv = "variable,lead_hours,metric,value\n";
            auto weights = lh::lat_weights(ds.manifest.lats);

            auto spatial_std = [&](const lh::Field& f) {
                double s = 0.0, s2 = 0.0;
                for (double x : f.v) {
                    s += x;
                    s2 += x * x;
                }
                const double n = static_cast<double>(f.v.size());
                const double m = s / n;
                return std::sqrt(std::max(0.0, s2 / n - m * m));
            };
            // Climatological spatial std per variable over the test split.
            const auto [tb, te] = ds.manifest.splits.at("test");
            std::vector<std::string> all_vars = bb.cfg.surface_vars;
            for (const auto& h : heads) all_vars.push_back(h.var_id);
            std::map<std::string, double> clim_std;
            for (const auto& var : all_vars) {
                double acc = 0.0;
                for (std::size_t t = tb; t < te; ++t) acc += spatial_std(ds.field(var, t));
                clim_std[var] = acc / static_cast<double>(te - tb);
            }

            json steps_json = json::array();
            for (std::size_t k = 0; k < r.n_steps_completed; ++k) {
                json step_j{{"lead_hours", r.lead_hours[k]}};
                json ratios = json::object();
                auto handle = [&](const std::string& var, const lh::Field& f) {
                    char name[64];
                    std::snprintf(name, sizeof(name), "%s_%03ld.lht", var.c_str(),
                                  r.lead_hours[k]);
                    lh::write_field_f32(fs::path(out_path) / "fields" / name, f);
                    ratios[var] = spatial_std(f) / clim_std.at(var);
                    const std::size_t target = init_t + k + 1;
                    if (target < ds.manifest.n_steps) {
                        const lh::Field& ref = ds.field(var, target);
                        const lh::Mask* mask = ds.mask_for(var);
                        char line[160];
                        std::snprintf(line, sizeof(line), "%s,%ld,rmse,%.10g\n", var.c_str(),
                                      r.lead_hours[k], lh::rmse(f, ref, &weights, mask));
                        csv += line;
                        std::snprintf(line, sizeof(line), "%s,%ld,mae,%.10g\n", var.c_str(),
                                      r.lead_hours[k], lh::mae(f, ref, &weights, mask));
                        csv += line;
                    }
                };
                for (const auto& [var, f] : r.base_fields[k]) handle(var, f);
                for (const auto& [var, f] : r.head_fields[k]) handle(var, f);
                step_j["std_ratio"] = ratios;
                steps_json.push_back(step_j);
            }
            json report{{"format", "lh-rollout-v1"},
                        {"init_step", init_t},
                        {"n_steps_requested", r.n_steps_requested},
                        {"n_steps_completed", r.n_steps_completed},
                        {"truncated", r.truncated},
                        {"steps", steps_json}};
            {
                std::ofstream out(fs::path(out_path) / "rollout_report.json");
                out << report.dump(2) << "\n";
            }
            {
                std::ofstream out(fs::path(out_path) / "rollout_metrics.csv");
                out << csv;
            }
            lh::RunManifest rm;
            rm.command = "rollout";
            rm.config_hash = "sha256:" + lh::sha256_hex(cfg.dump());
            rm.dataset_hash = ds.manifest.dataset_hash;
            rm.seed = 0;
            rm.artifacts = {(fs::path(out_path) / "rollout_report.json").string(),
                            (fs::path(out_path) / "rollout_metrics.csv").string()};
            rm.wall_clock_seconds = timer.seconds();
            rm.write(out_path);
            std::cout << "rollout: " << r.n_steps_completed << "/" << r.n_steps_requested
                      << " steps" << (r.truncated ? " (truncated)" : "") << "\n";
            return r.truncated ? 3 : 0;
        });
    }

    // ----- basins ---------------------------------------------------------------
    if (bas->parsed()) {
        return run_command([&] {
            Timer timer;
            json cfg = load_config(config_path);
            lh::Dataset ds = lh::Dataset::load(ref_dir);
            lh::PredictionSet ps = lh::PredictionSet::load(pred_dir);

            std::vector<lh::BasinMask> basins;
            std::vector<fs::path> mask_files;
            for (const auto& e : fs::directory_iterator(masks_dir))
                if (e.path().extension() == ".lht") mask_files.push_back(e.path());
            std::sort(mask_files.begin(), mask_files.end());
            for (const auto& p : mask_files)
                basins.push_back(lh::BasinMask::create(
                    p.stem().string(), lh::Mask::from_field(lh::read_field(p)),
                    ds.manifest.lats));
            if (basins.empty()) throw ConfigError("no .lht basin masks in " + masks_dir);

            std::string csv = "basin,variable,relative_rmse,n_days\n";
            for (const auto& basin : basins) {
                for (const auto& var : ps.variables) {
                    std::vector<lh::Field> pstore, rstore;
                    for (std::size_t t = ps.first_step; t < ps.last_step; ++t) {
                        pstore.push_back(ps.field(var, t));
                        rstore.push_back(ds.field(var, t));
                    }
                    std::vector<const lh::Field*> pf, rf;
                    for (const auto& f : pstore) pf.push_back(&f);
                    for (const auto& f : rstore) rf.push_back(&f);
                    const auto pseries = lh::basin_series(pf, basin);
                    const auto rseries = lh::basin_series(rf, basin);
                    char line[160];
                    try {
                        const double rrmse = lh::basin_relative_rmse(pseries, rseries);
                        std::snprintf(line, sizeof(line), "%s,%s,%.10g,%zu\n",
                                      basin.basin_id.c_str(), var.c_str(), rrmse,
                                      pseries.size() / 4);
                    } catch (const std::invalid_argument&) {
                        // all-dry basin window: relative RMSE undefined
                        std::snprintf(line, sizeof(line), "%s,%s,nan,%zu\n",
                                      basin.basin_id.c_str(), var.c_str(), pseries.size() / 4);
                    }
                    csv += line;
                }
            }
            {
                std::ofstream out(out_path);
                if (!out) throw std::runtime_error("cannot write " + out_path);
                out << csv;
            }
            lh::RunManifest rm;
            rm.command = "basins";
            rm.config_hash = "sha256:" + lh::sha256_hex(cfg.dump());
            rm.dataset_hash = ds.manifest.dataset_hash;
            rm.artifacts = {out_path};
            rm.wall_clock_seconds = timer.seconds();
            rm.write(fs::path(out_path).parent_path().empty()
                         ? fs::path(".")
                         : fs::path(out_path).parent_path());
            std::cout << "basin table written to " << out_path << "\n";
            return 0;
        });
    }

    // ----- spectra ----------------------------------------------------------------
    if (spec->parsed()) {
        return run_command([&] {
            Timer timer;
            json cfg = load_config(config_path);
            lh::Dataset ds = lh::Dataset::load(ref_dir);
            lh::PredictionSet ps = lh::PredictionSet::load(pred_dir);
            auto weights = lh::lat_weights(ds.manifest.lats);

            std::string csv = "variable,wavenumber,power_pred,power_ref\n";
            for (const auto& var : ps.variables) {
                std::vector<lh::Field> pstore, rstore;
                for (std::size_t t = ps.first_step; t < ps.last_step; ++t) {
                    pstore.push_back(ps.field(var, t));
                    rstore.push_back(ds.field(var, t));
                }
                std::vector<const lh::Field*> pf, rf;
                for (const auto& f : pstore) pf.push_back(&f);
                for (const auto& f : rstore) rf.push_back(&f);
                const auto sp = lh::energy_spectrum(pf, weights);
                const auto sr = lh::energy_spectrum(rf, weights);
                for (std::size_t k = 0; k < sp.size(); ++k) {
                    char line[160];
                    std::snprintf(line, sizeof(line), "%s,%zu,%.10g,%.10g\n", var.c_str(), k,
                                  sp[k], sr[k]);
                    csv += line;
                }
            }
            {
                std::ofstream out(out_path);
                if (!out) throw std::runtime_error("cannot write " + out_path);
                out << csv;
            }
            lh::RunManifest rm;
            rm.command = "spectra";
            rm.config_hash = "sha256:" + lh::sha256_hex(cfg.dump());
            rm.dataset_hash = ds.manifest.dataset_hash;
            rm.artifacts = {out_path};
            rm.wall_clock_seconds = timer.seconds();
            rm.write(fs::path(out_path).parent_path().empty()
                         ? fs::path(".")
                         : fs::path(out_path).parent_path());
            std::cout << "spectra written to " << out_path << "\n";
            return 0;
        });
    }

    // ----- cost-report -------------------------------------------------------------
    if (cost->parsed()) {
        return run_command([&] {
            json cfg = load_config(config_path);
            lh::DatasetManifest m;
            if (!data_dir.empty()) {
                m = lh::Dataset::load(data_dir, false).manifest;
            } else {
                m.H = cfg.value("world", json::object()).value("H", std::size_t{32});
                m.W = cfg.value("world", json::object()).value("W", std::size_t{64});
                lh::VariableInfo v;
                for (const char* id : {"u", "v", "q", "tmp"}) {
                    v.id = id;
                    v.kind = "base";
                    m.variables.push_back(v);
                }
                for (const char* id :
                     {"evap_like", "precip_like", "runoff_like", "storage_like"}) {
                    v.id = id;
                    v.kind = "target";
                    m.variables.push_back(v);
                }
            }
            lh::BackboneConfig bb = backbone_from_config(cfg, m);
            const int epochs = cfg.value("train", json::object()).value("epochs", 10);
            const std::size_t batch =
                cfg.value("train", json::object()).value("batch_size", std::size_t{8});
            const auto targets = m.ids_of_kind("target");
            const auto dims = lh::head_layer_dims(bb.E, bb.P);

            auto pre_cost = lh::flop_count(bb, lh::TrainMode::pretrain, dims, 0, epochs, batch);
            auto dec_cost =
                lh::flop_count(bb, lh::TrainMode::decoder, dims, targets.size(), epochs, batch);
            lh::BackboneConfig ft = bb;
            ft.new_vars = targets;
            auto fin_cost =
                lh::flop_count(ft, lh::TrainMode::finetune, dims, targets.size(), epochs, batch);

            json pre_j, dec_j, fin_j;
            lh::to_json(pre_j, pre_cost);
            lh::to_json(dec_j, dec_cost);
            lh::to_json(fin_j, fin_cost);
            json out{{"format", "lh-cost-v1"},
                     {"pretrain", pre_j},
                     {"decoder", dec_j},
                     {"finetune", fin_j},
                     {"finetune_over_decoder_flops",
                      fin_cost.flops_per_step / dec_cost.flops_per_step},
                     {"finetune_over_decoder_params",
                      static_cast<double>(fin_cost.trainable_params) /
                          static_cast<double>(dec_cost.trainable_params)}};
            std::ofstream f(out_path);
            if (!f) throw std::runtime_error("cannot write " + out_path);
            f << out.dump(2) << "\n";
            std::cout << "cost report written to " << out_path << "\n";
            return 0;
        });
    }

    return 2;
}
