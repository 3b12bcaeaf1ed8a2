#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lh/loss.hpp"
#include "lh/optim.hpp"
#include "testing_util.hpp"

using namespace lh;

TEST_CASE("lr schedule endpoints and shape") {
    const double lr_max = 5e-4, lr_min = 5e-5;
    const long warmup = 100, total = 2500;

    SECTION("warmup endpoint hits lr_max exactly") {
        REQUIRE(std::abs(lr_schedule(warmup, total, lr_max, lr_min, warmup) - lr_max) < 1e-12);
    }
    SECTION("final step hits lr_min exactly") {
        REQUIRE(std::abs(lr_schedule(total, total, lr_max, lr_min, warmup) - lr_min) < 1e-12);
    }
    SECTION("cosine midpoint is the arithmetic mean") {
        const long mid = warmup + (total - warmup) / 2;
        REQUIRE(lr_schedule(mid, total, lr_max, lr_min, warmup) ==
                Catch::Approx(2.75e-4).epsilon(1e-10));
    }
    SECTION("warmup is linear and starts above zero") {
        REQUIRE(lr_schedule(0, total, lr_max, lr_min, warmup) ==
                Catch::Approx(lr_max / 100.0).epsilon(1e-12));
        REQUIRE(lr_schedule(49, total, lr_max, lr_min, warmup) <
                lr_schedule(50, total, lr_max, lr_min, warmup));
    }
    SECTION("monotone decay after warmup") {
        double prev = lr_schedule(warmup, total, lr_max, lr_min, warmup);
        for (long s = warmup + 1; s <= total; s += 50) {
            const double cur = lr_schedule(s, total, lr_max, lr_min, warmup);
            REQUIRE(cur <= prev + 1e-15);
            prev = cur;
        }
    }
    SECTION("degenerate totals throw") {
        REQUIRE_THROWS_AS(lr_schedule(0, 100, lr_max, lr_min, 100), std::invalid_argument);
        REQUIRE_THROWS_AS(lr_schedule(-1, 200, lr_max, lr_min, 100), std::invalid_argument);
    }
}

TEST_CASE("adam closed-form behavior") {
    ParamSet p;
    p.add("w", {1}).v[0] = 1.0;
    auto st = OptState::init(p);

    SECTION("zero gradient leaves the parameter unchanged") {
        ParamSet g = p.zeros_like();
        adam_step(p, g, st, 0.1);
        REQUIRE(p.get("w").v[0] == 1.0);
    }
    SECTION("first step with g=1, lr=0.1 moves by about -0.1") {
        ParamSet g = p.zeros_like();
        g.get("w").v[0] = 1.0;
        adam_step(p, g, st, 0.1);
        // bias-corrected m-hat/sqrt(v-hat) = 1, modulo eps
        REQUIRE(p.get("w").v[0] == Catch::Approx(0.9).margin(1e-6));
    }
    SECTION("NaN gradient aborts with diagnostics") {
        ParamSet g = p.zeros_like();
        g.get("w").v[0] = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_WITH(adam_step(p, g, st, 0.1), Catch::Matchers::ContainsSubstring("w"));
    }
    SECTION("frozen parameter sets reject updates") {
        p.frozen = true;
        ParamSet g = p.zeros_like();
        REQUIRE_THROWS_AS(adam_step(p, g, st, 0.1), std::logic_error);
    }
}

TEST_CASE("adam determinism") {
    auto run = [] {
        std::mt19937_64 rng(33);
        ParamSet p;
        auto& w = p.add("w", {16});
        init_uniform(w, 16, rng);
        auto st = OptState::init(p);
        std::normal_distribution<double> d(0.0, 1.0);
        for (int i = 0; i < 50; ++i) {
            ParamSet g = p.zeros_like();
            for (auto& x : g.get("w").v) x = d(rng);
            adam_step(p, g, st, 1e-3);
        }
        return p.get("w").v;
    };
    REQUIRE(run() == run());
}

TEST_CASE("wmae loss values") {
    auto w_uniform = lat_weights({0.0, 0.0});

    SECTION("pred == ref gives zero") {
        Field a(2, 3, 1.5);
        REQUIRE(wmae_loss(a, a, lat_weights({0.0, 0.0})).loss == 0.0);
    }
    SECTION("constant offset c gives |c| regardless of weights") {
        std::mt19937_64 rng(8);
        Field ref = lh::testing::random_field(4, 5, rng);
        Field pred = ref;
        for (auto& x : pred.v) x += -2.25;
        auto w = lat_weights({10.0, 40.0, -20.0, 70.0});
        REQUIRE(wmae_loss(pred, ref, w).loss == Catch::Approx(2.25).epsilon(1e-12));
    }
    SECTION("2x1 grid with weights [4/3, 2/3] and diffs [3, 0] gives 2.0") {
        Field pred(2, 1), ref(2, 1, 0.0);
        pred.at(0, 0) = 3.0;
        pred.at(1, 0) = 0.0;
        auto w = lat_weights({0.0, 60.0});
        REQUIRE(wmae_loss(pred, ref, w).loss == Catch::Approx(2.0).epsilon(1e-12));
    }
    SECTION("empty mask is a degenerate input") {
        Field a(2, 2, 1.0);
        Mask m(2, 2, 0);
        REQUIRE_THROWS_AS(wmae_loss(a, a, w_uniform, &m), std::invalid_argument);
    }
    SECTION("masked loss equals loss on extracted pixels") {
        std::mt19937_64 rng(9);
        Field pred = lh::testing::random_field(6, 8, rng);
        Field ref = lh::testing::random_field(6, 8, rng);
        Mask m = lh::testing::random_mask(6, 8, rng);
        auto w = lat_weights(default_lats(6));
        const double masked = wmae_loss(pred, ref, w, &m).loss;
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 8; ++j)
                if (m.v[i * 8 + j]) {
                    num += w.w[i] * std::abs(pred.at(i, j) - ref.at(i, j));
                    den += w.w[i];
                }
        REQUIRE(masked == Catch::Approx(num / den).epsilon(1e-13));
    }
}

TEST_CASE("wmae gradient matches finite differences") {
    std::mt19937_64 rng(10);
    Field pred = lh::testing::random_field(5, 6, rng);
    Field ref = lh::testing::random_field(5, 6, rng);
    Mask m = lh::testing::random_mask(5, 6, rng);
    auto w = lat_weights(default_lats(5));

    auto r = wmae_loss(pred, ref, w, &m);
    lh::testing::GradCheckStats stats;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        auto loss = [&] { return wmae_loss(pred, ref, w, &m, false).loss; };
        lh::testing::grad_check_one(loss, pred.v[i], r.grad.v[i], stats);
    }
    INFO("max rel err " << stats.max_rel_err);
    REQUIRE(stats.max_rel_err < 1e-4);
}

TEST_CASE("wmae invariant under simultaneous pixel/weight permutation") {
    std::mt19937_64 rng(11);
    Field pred = lh::testing::random_field(4, 3, rng);
    Field ref = lh::testing::random_field(4, 3, rng);
    auto w = lat_weights({0.0, 30.0, 60.0, 80.0});
    const double base = wmae_loss(pred, ref, w).loss;

    // Permute rows (weights move with their rows).
    std::vector<std::size_t> perm{2, 0, 3, 1};
    Field pred2(4, 3), ref2(4, 3);
    LatWeights w2;
    w2.w.resize(4);
    for (std::size_t i = 0; i < 4; ++i) {
        w2.w[i] = w.w[perm[i]];
        for (std::size_t j = 0; j < 3; ++j) {
            pred2.at(i, j) = pred.at(perm[i], j);
            ref2.at(i, j) = ref.at(perm[i], j);
        }
    }
    REQUIRE(wmae_loss(pred2, ref2, w2).loss == Catch::Approx(base).epsilon(1e-13));
}
