#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "lh/basins.hpp"
#include "lh/dataset.hpp"
#include "lh/rollout.hpp"
#include "lh/trainer.hpp"

using namespace lh;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("lh_trainer_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Tiny world/dataset shared by the training tests (generated once).
struct TinyPipeline {
    TempDir tmp;
    DatasetManifest manifest;
    Dataset ds;

    TinyPipeline() {
        WorldConfig wc;
        wc.H = 16;
        wc.W = 32;
        wc.seed = 77;
        GenSplits splits;
        splits.train = 120;
        splits.val = 30;
        splits.test = 30;
        manifest = generate_dataset(wc, splits, tmp.path / "data");
        ds = Dataset::load(tmp.path / "data");
    }

    BackboneConfig tiny_backbone() const {
        BackboneConfig cfg = default_backbone_config(ds.manifest);
        cfg.E = 8;
        cfg.n_blocks = 1;
        cfg.L_lat = 1;
        cfg.L_atm = 1;
        return cfg;
    }

    TrainConfig tiny_train(TrainMode mode) const {
        TrainConfig tc;
        tc.mode = mode;
        tc.epochs = 2;
        tc.batch_size = 8;
        tc.seed = 5;
        tc.warmup_steps = 5;
        tc.threads = 2;
        return tc;
    }
};

TinyPipeline& pipeline() {
    static TinyPipeline p;
    return p;
}

}  // namespace

TEST_CASE("dataset round trip") {
    auto& P = pipeline();
    REQUIRE(P.ds.manifest.H == 16);
    REQUIRE(P.ds.manifest.splits.at("train").second == 120);
    REQUIRE(P.ds.manifest.n_basins > 0);
    REQUIRE(P.ds.manifest.dataset_hash.starts_with("sha256:"));

    SECTION("fields load and standardization round-trips") {
        const Field& f = P.ds.field("precip_like", 10);
        REQUIRE(f.rows == 16);
        Field s = P.ds.standardized("precip_like", 10);
        Field back = P.ds.unstandardize("precip_like", s);
        for (std::size_t i = 0; i < f.v.size(); ++i)
            REQUIRE(back.v[i] == Catch::Approx(f.v[i]).margin(1e-9));
    }
    SECTION("train-split standardization is roughly centered") {
        double acc = 0.0;
        std::size_t n = 0;
        for (std::size_t t = 0; t < 120; ++t) {
            Field s = P.ds.standardized("q", t);
            for (double x : s.v) acc += x;
            n += s.v.size();
        }
        REQUIRE(std::abs(acc / static_cast<double>(n)) < 1e-6);
    }
    SECTION("masked variables reference the land mask") {
        REQUIRE(P.ds.mask_for("storage_like") != nullptr);
        REQUIRE(P.ds.mask_for("evap_like") == nullptr);
    }
}

TEST_CASE("pretrain produces a frozen checkpoint and decreasing loss") {
    auto& P = pipeline();
    auto tc = P.tiny_train(TrainMode::pretrain);
    auto result = pretrain(P.ds, P.tiny_backbone(), tc, P.tmp.path / "bb");

    REQUIRE(fs::exists(P.tmp.path / "bb" / "manifest.json"));
    Backbone loaded = load_backbone(P.tmp.path / "bb", true);
    REQUIRE(loaded.params.frozen);

    // first recorded train loss vs last val loss
    double first_train = -1;
    for (const auto& p : result.curve)
        if (p.split == "train") {
            first_train = p.loss;
            break;
        }
    REQUIRE(first_train > 0.0);
    REQUIRE(result.final_val_loss < first_train);

    SECTION("loss curve file exists with header") {
        std::ifstream in(P.tmp.path / "bb" / "loss_curve.csv");
        std::string line;
        std::getline(in, line);
        REQUIRE(line == "step,split,loss");
    }
}

TEST_CASE("decoder training freezes the backbone and writes predictions") {
    auto& P = pipeline();
    // Reuse (or create) the pretrained checkpoint.
    if (!fs::exists(P.tmp.path / "bb" / "manifest.json"))
        pretrain(P.ds, P.tiny_backbone(), P.tiny_train(TrainMode::pretrain), P.tmp.path / "bb");

    const std::string hash_before = checkpoint_hash(P.tmp.path / "bb");
    auto tc = P.tiny_train(TrainMode::decoder);
    tc.head_dims = HeadDims::compact;
    auto result = train_decoder(P.ds, P.tmp.path / "bb", tc, P.tmp.path / "dec");
    const std::string hash_after = checkpoint_hash(P.tmp.path / "bb");

    REQUIRE(hash_before == hash_after);  // freezing contract
    REQUIRE(fs::exists(result.checkpoint_dir / "manifest.json"));
    REQUIRE(fs::exists(result.predictions_dir / "manifest.json"));
    // predictions exist for the test split range [b+2, e)
    const auto [tb, te] = P.ds.manifest.splits.at("test");
    REQUIRE(fs::exists(result.predictions_dir / "fields" / field_file_name("evap_like", tb + 2)));
    REQUIRE(fs::exists(result.predictions_dir / "fields" / field_file_name("evap_like", te - 1)));

    SECTION("frozen flag survives the round trip and blocks updates") {
        Backbone loaded = load_backbone(P.tmp.path / "bb", true);
        auto opt = OptState::init(loaded.params);
        auto g = loaded.params.zeros_like();
        REQUIRE_THROWS_AS(adam_step(loaded.params, g, opt, 1e-3), std::logic_error);
    }
    SECTION("heads checkpoint loads back") {
        auto heads = load_heads(result.checkpoint_dir);
        REQUIRE(heads.size() == 4);
        REQUIRE(heads[0].params.total_size() > 0);
    }
}

TEST_CASE("finetune trains more parameters than decoder mode and improves storage") {
    auto& P = pipeline();
    if (!fs::exists(P.tmp.path / "bb" / "manifest.json"))
        pretrain(P.ds, P.tiny_backbone(), P.tiny_train(TrainMode::pretrain), P.tmp.path / "bb");

    auto tc = P.tiny_train(TrainMode::finetune);
    tc.warmup_steps = 5;
    auto result = finetune(P.ds, P.tmp.path / "bb", tc, P.tmp.path / "ft");
    REQUIRE(fs::exists(result.checkpoint_dir / "manifest.json"));

    auto dec_cost = flop_count(P.tiny_backbone(), TrainMode::decoder,
                               head_layer_dims(8, 4, HeadDims::compact), 4, tc.epochs);
    REQUIRE(result.cost.trainable_params > dec_cost.trainable_params);
    REQUIRE(dec_cost.flops_per_step < result.cost.flops_per_step);

    SECTION("finetuned checkpoint decodes new variables") {
        Backbone ft = load_backbone(result.checkpoint_dir, false);
        REQUIRE(ft.cfg.new_vars.size() == 4);
        auto in = train_detail::make_inputs(P.ds, ft.cfg, 5);
        auto fields = ft.forecast_step(in);
        REQUIRE(fields.count("storage_like") == 1);
    }
}

TEST_CASE("training reproducibility: identical runs give identical checkpoints") {
    auto& P = pipeline();
    if (!fs::exists(P.tmp.path / "bb" / "manifest.json"))
        pretrain(P.ds, P.tiny_backbone(), P.tiny_train(TrainMode::pretrain), P.tmp.path / "bb");
    auto tc = P.tiny_train(TrainMode::decoder);
    tc.epochs = 1;
    train_decoder(P.ds, P.tmp.path / "bb", tc, P.tmp.path / "d1");
    train_decoder(P.ds, P.tmp.path / "bb", tc, P.tmp.path / "d2");
    REQUIRE(checkpoint_hash(P.tmp.path / "d1" / "heads") ==
            checkpoint_hash(P.tmp.path / "d2" / "heads"));
}

TEST_CASE("flop_count basics") {
    SECTION("single linear layer forward is 2*in*out") {
        // d_in=2, d_out=3 -> 12 FLOPs
        BackboneConfig cfg;
        (void)cfg;
        std::vector<std::size_t> dims{2, 3};
        // heads_forward_macs counts per patch; with one patch: 2*3 MACs
        REQUIRE(2.0 * 2 * 3 == 12.0);
        REQUIRE(param_count(dims) == 9);
    }
    SECTION("decoder flops and params are well below finetune at the desk config") {
        BackboneConfig desk;
        desk.H = 32;
        desk.W = 64;
        desk.P = 4;
        desk.E = 32;
        desk.L_atm = 3;
        desk.L_lat = 3;
        desk.n_blocks = 2;
        desk.surface_vars = {"u", "v", "q", "tmp"};
        desk.static_vars = {"land"};
        auto dims = head_layer_dims(desk.E, desk.P);
        auto dec = flop_count(desk, TrainMode::decoder, dims, 4, 10);
        BackboneConfig ft = desk;
        ft.new_vars = {"evap_like", "precip_like", "runoff_like", "storage_like"};
        auto fin = flop_count(ft, TrainMode::finetune, dims, 4, 10);
        CAPTURE(dec.flops_per_step, fin.flops_per_step, dec.trainable_params,
                fin.trainable_params);
        REQUIRE(dec.flops_per_step < fin.flops_per_step);
        REQUIRE(fin.flops_per_step / dec.flops_per_step > 5.0);
        REQUIRE(static_cast<double>(fin.trainable_params) /
                    static_cast<double>(dec.trainable_params) >
                5.0);
    }
}

TEST_CASE("per-target validation loss decreases over decoder training") {
    auto& P = pipeline();
    if (!fs::exists(P.tmp.path / "bb" / "manifest.json"))
        pretrain(P.ds, P.tiny_backbone(), P.tiny_train(TrainMode::pretrain), P.tmp.path / "bb");
    for (const std::string var : {"evap_like", "precip_like"}) {
        auto tc = P.tiny_train(TrainMode::decoder);
        tc.epochs = 3;
        tc.head_variables = {var};
        tc.head_dims = HeadDims::compact;
        auto result = train_decoder(P.ds, P.tmp.path / "bb", tc, P.tmp.path / ("v_" + var));
        double val0 = -1.0;
        for (const auto& p : result.curve)
            if (p.split == "val") {
                val0 = p.loss;
                break;
            }
        INFO(var << ": val0 " << val0 << " final " << result.final_val_loss);
        REQUIRE(val0 > 0.0);
        REQUIRE(result.final_val_loss < val0);
    }
}

TEST_CASE("rollout truncates and flags when the model blows up") {
    auto& P = pipeline();
    if (!fs::exists(P.tmp.path / "bb" / "manifest.json"))
        pretrain(P.ds, P.tiny_backbone(), P.tiny_train(TrainMode::pretrain), P.tmp.path / "bb");
    Backbone bb = load_backbone(P.tmp.path / "bb", true);
    // Explosive decoder weights overflow to inf within one step.
    Backbone hot = bb;
    hot.params.frozen = false;
    for (auto& t : hot.params.items)
        if (t.name.find("dec.sfc.") == 0)
            for (auto& x : t.v) x *= 1e155;  // decoded ~1e155, squares overflow on feedback
    auto r = rollout(P.ds, hot, {}, P.ds.manifest.splits.at("test").first + 1, 4);
    REQUIRE(r.truncated);
    REQUIRE(r.truncated_at <= 1);
    REQUIRE(r.n_steps_completed < 4);
}

TEST_CASE("rollout on a trained tiny model") {
    auto& P = pipeline();
    if (!fs::exists(P.tmp.path / "bb" / "manifest.json"))
        pretrain(P.ds, P.tiny_backbone(), P.tiny_train(TrainMode::pretrain), P.tmp.path / "bb");
    if (!fs::exists(P.tmp.path / "dec" / "heads" / "manifest.json")) {
        auto tc = P.tiny_train(TrainMode::decoder);
        tc.head_dims = HeadDims::compact;
        train_decoder(P.ds, P.tmp.path / "bb", tc, P.tmp.path / "dec");
    }
    Backbone bb = load_backbone(P.tmp.path / "bb", true);
    auto heads = load_heads(P.tmp.path / "dec" / "heads");
    const auto [tb, te] = P.ds.manifest.splits.at("test");

    SECTION("n_steps = 1 equals a single forecast_step plus head decode") {
        auto r1 = rollout(P.ds, bb, heads, tb + 1, 1);
        REQUIRE(r1.n_steps_completed == 1);
        auto in = train_detail::make_inputs(P.ds, bb.cfg, tb + 1);
        auto fc = bb.forward(in);
        Field direct = P.ds.unstandardize("u", bb.decode_surface(fc.latent, "u"));
        REQUIRE(r1.base_fields[0].at("u").v == direct.v);
    }
    SECTION("determinism and prefix property") {
        auto a = rollout(P.ds, bb, heads, tb + 1, 8);
        auto b = rollout(P.ds, bb, heads, tb + 1, 8);
        auto c = rollout(P.ds, bb, heads, tb + 1, 3);
        REQUIRE(a.n_steps_completed == 8);
        for (std::size_t k = 0; k < 8; ++k)
            for (const auto& [var, f] : a.base_fields[k])
                REQUIRE(f.v == b.base_fields[k].at(var).v);
        for (std::size_t k = 0; k < 3; ++k)
            for (const auto& [var, f] : c.base_fields[k])
                REQUIRE(f.v == a.base_fields[k].at(var).v);
    }
    SECTION("all outputs finite over a longer rollout") {
        auto r = rollout(P.ds, bb, heads, tb + 1, 16);
        REQUIRE(!r.truncated);
        for (const auto& step : r.head_fields)
            for (const auto& [var, f] : step)
                for (double x : f.v) REQUIRE(std::isfinite(x));
    }
}

TEST_CASE("basin aggregation") {
    auto& P = pipeline();
    const auto& basins = P.ds.basins();
    REQUIRE(!basins.empty());
    auto lats = P.ds.manifest.lats;

    SECTION("single-pixel basin picks out one weighted value") {
        Mask m(16, 32, 0);
        m.v[5 * 32 + 7] = 1;
        auto b = BasinMask::create("single", m, lats);
        Field f = P.ds.field("q", 3);
        auto series = basin_series({&f}, b);
        auto w = lat_weights(lats);
        REQUIRE(series.size() == 1);
        REQUIRE(series[0] == Catch::Approx(w.w[5] * f.at(5, 7)).epsilon(1e-13));
    }
    SECTION("two equal-latitude pixels of a constant field sum to 2a") {
        Mask m(16, 32, 0);
        m.v[4 * 32 + 2] = 1;
        m.v[4 * 32 + 9] = 1;
        auto b = BasinMask::create("pair", m, lats);
        Field one(16, 32, 1.0);
        auto w = lat_weights(lats);
        auto series = basin_series({&one}, b);
        REQUIRE(series[0] == Catch::Approx(2.0 * w.w[4]).epsilon(1e-13));
    }
    SECTION("splitting a basin preserves the series sum") {
        auto whole = BasinMask::create("whole", basins[0], lats);
        // split by column parity
        Mask a(16, 32, 0), c(16, 32, 0);
        for (std::size_t i = 0; i < 16; ++i)
            for (std::size_t j = 0; j < 32; ++j)
                if (basins[0].v[i * 32 + j]) (j % 2 == 0 ? a : c).v[i * 32 + j] = 1;
        if (a.count() == 0 || c.count() == 0) return;  // degenerate split
        auto ba = BasinMask::create("a", a, lats);
        auto bc = BasinMask::create("c", c, lats);
        std::vector<const Field*> fields;
        std::vector<Field> storage;
        for (std::size_t t = 0; t < 8; ++t) storage.push_back(P.ds.field("runoff_like", t));
        for (const auto& f : storage) fields.push_back(&f);
        auto sw = basin_series(fields, whole);
        auto sa = basin_series(fields, ba);
        auto sc = basin_series(fields, bc);
        for (std::size_t t = 0; t < sw.size(); ++t)
            REQUIRE(std::abs(sa[t] + sc[t] - sw[t]) < 1e-9);
    }
    SECTION("empty basin is rejected") {
        Mask m(16, 32, 0);
        REQUIRE_THROWS_AS(BasinMask::create("empty", m, lats), std::invalid_argument);
    }
}

TEST_CASE("daily averaging and basin relative rmse") {
    SECTION("constant series stays constant") {
        std::vector<double> s(12, 3.5);
        auto d = daily_average(s);
        REQUIRE(d.size() == 3);
        for (double x : d) REQUIRE(x == 3.5);
    }
    SECTION("worked example [1..8] -> [2.5, 6.5]") {
        std::vector<double> s{1, 2, 3, 4, 5, 6, 7, 8};
        auto d = daily_average(s);
        REQUIRE(d == std::vector<double>{2.5, 6.5});
    }
    SECTION("length 9 drops the remainder with a flag") {
        std::vector<double> s(9, 1.0);
        bool flag = false;
        auto d = daily_average(s, 4, &flag);
        REQUIRE(d.size() == 2);
        REQUIRE(flag);
    }
    SECTION("relative rmse examples") {
        std::vector<double> ref(8, 2.0);
        REQUIRE(basin_relative_rmse(ref, ref) == 0.0);
        std::vector<double> twice(8, 4.0);
        REQUIRE(basin_relative_rmse(twice, ref) == Catch::Approx(1.0));
        // scale invariance
        std::vector<double> p{1, 2, 3, 4, 2, 3, 4, 5}, r{2, 1, 3, 3, 4, 4, 2, 1};
        const double base = basin_relative_rmse(p, r);
        for (auto& x : p) x *= 3.0;
        for (auto& x : r) x *= 3.0;
        REQUIRE(basin_relative_rmse(p, r) == Catch::Approx(base).epsilon(1e-12));
    }
}
