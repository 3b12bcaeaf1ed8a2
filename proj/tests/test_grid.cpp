#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <random>

#include "lh/grid.hpp"
#include "testing_util.hpp"

using namespace lh;

TEST_CASE("lat_weights basic values") {
    SECTION("equator rows give unit weights") {
        auto w = lat_weights({0.0, 0.0, 0.0});
        for (double x : w.w) REQUIRE(x == Catch::Approx(1.0).margin(1e-15));
    }
    SECTION("cos values {1, 0.5} normalize to {4/3, 2/3}") {
        auto w = lat_weights({0.0, 60.0});
        REQUIRE(w.w[0] == Catch::Approx(4.0 / 3.0).epsilon(1e-12));
        REQUIRE(w.w[1] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    }
    SECTION("symmetric latitudes give equal weights") {
        auto w = lat_weights({-45.0, 45.0});
        REQUIRE(w.w[0] == Catch::Approx(1.0).margin(1e-14));
        REQUIRE(w.w[1] == Catch::Approx(1.0).margin(1e-14));
    }
    SECTION("out-of-range latitude throws") {
        REQUIRE_THROWS_AS(lat_weights({0.0, 91.0}), std::invalid_argument);
        REQUIRE_THROWS_AS(lat_weights({-90.5}), std::invalid_argument);
    }
}

TEST_CASE("lat_weights properties: mean 1 and sign-flip invariance") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(-89.0, 89.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 40;
        std::vector<double> lats(n), flipped(n);
        for (std::size_t i = 0; i < n; ++i) {
            lats[i] = d(rng);
            flipped[i] = -lats[i];
        }
        auto w = lat_weights(lats);
        auto wf = lat_weights(flipped);
        double mean = std::accumulate(w.w.begin(), w.w.end(), 0.0) / static_cast<double>(n);
        REQUIRE(std::abs(mean - 1.0) < 1e-12);
        for (std::size_t i = 0; i < n; ++i) {
            REQUIRE(w.w[i] >= 0.0);
            REQUIRE(w.w[i] == Catch::Approx(wf.w[i]).epsilon(1e-13));
        }
    }
}

TEST_CASE("patchify layout") {
    SECTION("4x4 with P=4 gives one row-major patch") {
        Field f(4, 4);
        std::iota(f.v.begin(), f.v.end(), 0.0);
        auto patches = patchify(f, 4);
        REQUIRE(patches.size() == 1);
        for (std::size_t i = 0; i < 16; ++i) REQUIRE(patches[0][i] == static_cast<double>(i));
    }
    SECTION("8x8 with P=4: patch 0 holds rows 0-3 x cols 0-3") {
        Field f(8, 8);
        std::iota(f.v.begin(), f.v.end(), 0.0);
        auto patches = patchify(f, 4);
        REQUIRE(patches.size() == 4);
        for (std::size_t di = 0; di < 4; ++di)
            for (std::size_t dj = 0; dj < 4; ++dj)
                REQUIRE(patches[0][di * 4 + dj] == static_cast<double>(di * 8 + dj));
        // patch 1 is the top-right block
        REQUIRE(patches[1][0] == 4.0);
    }
    SECTION("non-divisible dims throw") {
        Field f(6, 8);
        REQUIRE_THROWS_AS(patchify(f, 4), std::invalid_argument);
        REQUIRE_THROWS_AS(unpatchify({{0.0}}, 4, 6, 8), std::invalid_argument);
    }
    SECTION("patch count mismatch throws") {
        std::vector<std::vector<double>> patches(3, std::vector<double>(16));
        REQUIRE_THROWS_AS(unpatchify(patches, 4, 8, 8), std::invalid_argument);
    }
}

TEST_CASE("patchify/unpatchify are mutually inverse") {
    SECTION("single patch round trip") {
        std::vector<std::vector<double>> patches{std::vector<double>(16)};
        std::iota(patches[0].begin(), patches[0].end(), 1.0);
        Field f = unpatchify(patches, 4, 4, 4);
        REQUIRE(f.at(0, 0) == 1.0);
        REQUIRE(f.at(3, 3) == 16.0);
    }
    SECTION("all-zero patches give an all-zero field") {
        std::vector<std::vector<double>> patches(4, std::vector<double>(4, 0.0));
        Field f = unpatchify(patches, 2, 4, 4);
        for (double x : f.v) REQUIRE(x == 0.0);
    }
    SECTION("random 16x32 round trip, P=4") {
        std::mt19937_64 rng(3);
        Field f = lh::testing::random_field(16, 32, rng);
        Field back = unpatchify(patchify(f, 4), 4, 16, 32);
        REQUIRE(back.v == f.v);
    }
    SECTION("exhaustive bijection at 8x8 for P in {2,4}") {
        for (std::size_t P : {2, 4}) {
            Field f(8, 8);
            std::iota(f.v.begin(), f.v.end(), 0.0);  // unique values
            Field back = unpatchify(patchify(f, P), P, 8, 8);
            REQUIRE(back.v == f.v);
        }
    }
}

TEST_CASE("GridField validation") {
    auto lats = default_lats(4);
    auto lons = default_lons(8);
    Field data(4, 8, 1.0);
    REQUIRE_NOTHROW(GridField("t", 0, lats, lons, data, "K"));

    SECTION("non-monotone latitudes throw") {
        auto bad = lats;
        bad[2] = bad[1];
        REQUIRE_THROWS_AS(GridField("t", 0, bad, lons, data, "K"), std::invalid_argument);
    }
    SECTION("non-uniform longitudes throw") {
        auto bad = lons;
        bad[3] += 0.5;
        REQUIRE_THROWS_AS(GridField("t", 0, lats, bad, data, "K"), std::invalid_argument);
    }
    SECTION("NaN data throws") {
        Field bad = data;
        bad.at(1, 2) = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_AS(GridField("t", 0, lats, lons, bad, "K"), std::invalid_argument);
    }
}

TEST_CASE("Mask accepts only 0/1") {
    Field f(2, 2, 0.0);
    f.at(0, 1) = 1.0;
    REQUIRE_NOTHROW(Mask::from_field(f));
    f.at(1, 0) = 0.5;
    REQUIRE_THROWS_AS(Mask::from_field(f), std::invalid_argument);
}
