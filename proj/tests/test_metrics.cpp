#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lh/metrics.hpp"
#include "testing_util.hpp"

using namespace lh;

// ---------------------------------------------------------------------------
// Independent brute-force oracles.  These deliberately share no code with the
// implementations they check.
// ---------------------------------------------------------------------------
namespace oracle {

// FSS by explicit window enumeration with modular column arithmetic.
double fss_enumerate(const Field& pred, const Field& ref, double alpha, int window) {
    const long H = static_cast<long>(pred.rows), W = static_cast<long>(pred.cols);
    const long r = window / 2;
    const long ncols = std::min<long>(window, W);
    double num = 0.0, den = 0.0;
    for (long i = 0; i < H; ++i) {
        for (long j = 0; j < W; ++j) {
            long cp = 0, cr = 0, count = 0;
            for (long di = -r; di <= r; ++di) {
                const long ii = i + di;
                if (ii < 0 || ii >= H) continue;
                for (long k = 0; k < ncols; ++k) {
                    long jj = (j - r + k) % W;
                    if (jj < 0) jj += W;
                    cp += pred.at(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) >=
                                  alpha
                              ? 1
                              : 0;
                    cr += ref.at(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) >=
                                  alpha
                              ? 1
                              : 0;
                    ++count;
                }
            }
            const double fp = static_cast<double>(cp) / static_cast<double>(count);
            const double fr = static_cast<double>(cr) / static_cast<double>(count);
            num += (fp - fr) * (fp - fr);
            den += fp * fp + fr * fr;
        }
    }
    if (den == 0.0) return 1.0;
    return 1.0 - num / den;
}

// W1 by integrating |CDF_a - CDF_b| over the merged breakpoint grid
// (trapezoid rule is exact here because the integrand is piecewise constant).
double w1_cdf_integral(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<double> xs;
    xs.reserve(a.size() + b.size());
    xs.insert(xs.end(), a.begin(), a.end());
    xs.insert(xs.end(), b.begin(), b.end());
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    auto cdf = [](const std::vector<double>& v, double x) {
        const auto it = std::upper_bound(v.begin(), v.end(), x);
        return static_cast<double>(it - v.begin()) / static_cast<double>(v.size());
    };
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < xs.size(); ++k)
        total += std::abs(cdf(a, xs[k]) - cdf(b, xs[k])) * (xs[k + 1] - xs[k]);
    return total;
}

}  // namespace oracle

TEST_CASE("point metrics on simple inputs") {
    SECTION("mae examples") {
        Field a(1, 2), z(1, 2, 0.0);
        a.at(0, 0) = 1.0;
        a.at(0, 1) = 3.0;
        REQUIRE(mae(a, a) == 0.0);
        REQUIRE(mae(a, z) == Catch::Approx(2.0));
        Field shifted = z;
        for (auto& x : shifted.v) x += 2.0;
        REQUIRE(mae(shifted, z) == Catch::Approx(2.0));
    }
    SECTION("rmse examples") {
        Field p(1, 2, 0.0), r(1, 2, 0.0);
        p.at(0, 0) = 3.0;
        p.at(0, 1) = 4.0;
        REQUIRE(rmse(p, p) == 0.0);
        REQUIRE(rmse(p, r) == Catch::Approx(std::sqrt(12.5)).epsilon(1e-12));
        Field c(2, 2, 1.25), z2(2, 2, 0.0);
        REQUIRE(rmse(c, z2) == Catch::Approx(1.25));
    }
    SECTION("bias examples") {
        std::mt19937_64 rng(1);
        Field ref = lh::testing::random_field(3, 4, rng);
        REQUIRE(bias(ref, ref) == 0.0);
        Field lower = ref;
        for (auto& x : lower.v) x -= 0.5;
        REQUIRE(bias(lower, ref) == Catch::Approx(-0.5).epsilon(1e-12));
        Field anti(1, 2, 0.0), zero(1, 2, 0.0);
        anti.at(0, 0) = 0.7;
        anti.at(0, 1) = -0.7;
        REQUIRE(bias(anti, zero) == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("mae <= rmse always") {
        std::mt19937_64 rng(2);
        for (int t = 0; t < 30; ++t) {
            Field p = lh::testing::random_field(6, 6, rng);
            Field r = lh::testing::random_field(6, 6, rng);
            auto w = lat_weights(default_lats(6));
            REQUIRE(mae(p, r, &w) <= rmse(p, r, &w) + 1e-15);
        }
    }
}

TEST_CASE("pcc") {
    std::mt19937_64 rng(3);
    Field ref = lh::testing::random_field(5, 5, rng);

    SECTION("affine invariance gives 1") {
        Field p = ref;
        for (auto& x : p.v) x = 2.0 * x + 1.0;
        REQUIRE(pcc(p, ref) == Catch::Approx(1.0).epsilon(1e-12));
    }
    SECTION("negated zero-mean field gives -1") {
        Field zm = ref;
        double m = 0.0;
        for (double x : zm.v) m += x;
        m /= static_cast<double>(zm.v.size());
        for (auto& x : zm.v) x -= m;
        Field neg = zm;
        for (auto& x : neg.v) x = -x;
        REQUIRE(pcc(neg, zm) == Catch::Approx(-1.0).epsilon(1e-12));
    }
    SECTION("worked example [1,2,3,4] vs [1,2,3,5]") {
        Field p(1, 4), r(1, 4);
        p.v = {1, 2, 3, 4};
        r.v = {1, 2, 3, 5};
        REQUIRE(pcc(p, r) == Catch::Approx(0.982708).margin(5e-7));
    }
    SECTION("zero variance is an error") {
        Field c(2, 2, 1.0);
        REQUIRE_THROWS_AS(pcc(c, ref), std::invalid_argument);
    }
    SECTION("pcc in [-1, 1] on random fields") {
        for (int t = 0; t < 20; ++t) {
            Field p = lh::testing::random_field(6, 6, rng);
            Field r = lh::testing::random_field(6, 6, rng);
            const double v = pcc(p, r);
            REQUIRE(v >= -1.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("w1") {
    SECTION("identical samples give 0") {
        REQUIRE(w1({1.0, 2.0, 3.0}, {3.0, 1.0, 2.0}) == 0.0);
    }
    SECTION("translation by c gives |c|") {
        std::mt19937_64 rng(4);
        std::vector<double> a(40);
        for (auto& x : a) x = std::normal_distribution<double>(0, 2)(rng);
        std::vector<double> b = a;
        for (auto& x : b) x += 1.75;
        REQUIRE(w1(b, a) == Catch::Approx(1.75).epsilon(1e-12));
    }
    SECTION("worked example {0,3} vs {0,1}") {
        REQUIRE(w1({0.0, 3.0}, {0.0, 1.0}) == Catch::Approx(1.0));
    }
    SECTION("empty input throws") {
        REQUIRE_THROWS_AS(w1({}, {1.0}), std::invalid_argument);
    }
    SECTION("equal-size path matches the CDF-integral oracle") {
        std::mt19937_64 rng(5);
        double max_diff = 0.0;
        for (int t = 0; t < 200; ++t) {
            std::vector<double> a(64), b(64);
            for (auto& x : a) x = std::normal_distribution<double>(0, 1)(rng);
            for (auto& x : b) x = std::normal_distribution<double>(0.3, 1.4)(rng);
            const double v1 = w1(a, b);
            const double v2 = oracle::w1_cdf_integral(a, b);
            max_diff = std::max(max_diff, std::abs(v1 - v2) / std::max(v1, 1e-12));
        }
        INFO("max relative diff " << max_diff);
        REQUIRE(max_diff < 1e-12);
    }
    SECTION("unequal sizes agree with the oracle") {
        std::mt19937_64 rng(6);
        for (int t = 0; t < 50; ++t) {
            std::vector<double> a(37), b(53);
            for (auto& x : a) x = std::normal_distribution<double>(0, 1)(rng);
            for (auto& x : b) x = std::normal_distribution<double>(-0.2, 0.7)(rng);
            REQUIRE(w1(a, b) == Catch::Approx(oracle::w1_cdf_integral(a, b)).epsilon(1e-12));
        }
    }
}

TEST_CASE("fss") {
    SECTION("identical fields give 1") {
        std::mt19937_64 rng(7);
        Field f = lh::testing::random_field(8, 8, rng, 0.0, 10.0);
        REQUIRE(fss(f, f, 5.0, 3) == 1.0);
    }
    SECTION("whole-field window worked example: fractions 0.5 vs 0.25 give 0.8") {
        Field ref(2, 2, 0.0), pred(2, 2, 0.0);
        ref.at(0, 0) = 2.0;
        ref.at(1, 1) = 2.0;   // fraction 0.5 above alpha=1
        pred.at(0, 0) = 2.0;  // fraction 0.25
        REQUIRE(fss(pred, ref, 1.0, 3) == Catch::Approx(0.8).epsilon(1e-12));
    }
    SECTION("disjoint exceedance gives 0") {
        Field pred(4, 4, 0.0), ref(4, 4, 10.0);
        REQUIRE(fss(pred, ref, 1.0, 3) == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("both all-dry is degenerate and reported as 1") {
        Field a(4, 4, 0.0), b(4, 4, 0.1);
        auto r = fss_detail(a, b, 1.0, 3);
        REQUIRE(r.degenerate);
        REQUIRE(r.value == 1.0);
    }
    SECTION("value in [0,1] and bit-exact match with the enumeration oracle") {
        std::mt19937_64 rng(8);
        for (int t = 0; t < 200; ++t) {
            Field p = lh::testing::random_field(8, 8, rng, 0.0, 2.0);
            Field r = lh::testing::random_field(8, 8, rng, 0.0, 2.0);
            const double alpha = std::uniform_real_distribution<double>(0.2, 1.8)(rng);
            const int window = 2 * static_cast<int>(rng() % 4) + 1;  // 1,3,5,7
            const double mine = fss(p, r, alpha, window);
            const double ora = oracle::fss_enumerate(p, r, alpha, window);
            REQUIRE(mine == ora);  // identical integer counts, identical accumulation order
            REQUIRE(mine >= 0.0);
            REQUIRE(mine <= 1.0);
        }
    }
    SECTION("even window throws") {
        Field f(4, 4, 0.0);
        REQUIRE_THROWS_AS(fss(f, f, 1.0, 4), std::invalid_argument);
    }
}

namespace {

SeepsClimatology make_climatology(std::size_t H, std::size_t W, std::mt19937_64& rng) {
    // Build from synthetic training data: exponential wet amounts, varying
    // dry probability across pixels.
    std::vector<Field> train(400, Field(H, W, 0.0));
    std::uniform_real_distribution<double> pdry(0.2, 0.8);
    std::vector<double> pd(H * W);
    for (auto& x : pd) x = pdry(rng);
    std::exponential_distribution<double> wet(0.4);
    std::bernoulli_distribution coin;
    for (auto& f : train)
        for (std::size_t i = 0; i < H * W; ++i)
            f.v[i] = std::bernoulli_distribution(pd[i])(rng) ? 0.0 : 0.25 + wet(rng);
    std::vector<const Field*> ptrs;
    for (const auto& f : train) ptrs.push_back(&f);
    return SeepsClimatology::from_training(ptrs, 0.25);
}

}  // namespace

TEST_CASE("seeps") {
    std::mt19937_64 rng(9);
    auto clim = make_climatology(6, 8, rng);
    REQUIRE(clim.valid.count() > 0);

    SECTION("pred == ref scores 0 for any climatology") {
        Field f(6, 8, 0.0);
        for (auto& x : f.v) x = std::exponential_distribution<double>(0.5)(rng);
        REQUIRE(seeps(f, f, clim) == 0.0);
    }
    SECTION("single-pixel category lookups match the matrix") {
        SeepsClimatology c;
        c.dry_threshold = 0.25;
        c.p1 = Field(1, 1, 0.7);
        c.wet_threshold = Field(1, 1, 3.0);
        c.valid = Mask(1, 1, 1);
        Field obs_dry(1, 1, 0.1), fc_light(1, 1, 1.0);
        // forecast light, observed dry: 0.5 / p1
        REQUIRE(seeps(fc_light, obs_dry, c) == Catch::Approx(0.5 / 0.7).epsilon(1e-12));
        // forecast dry, observed light: 0.5 / (1 - p1)
        REQUIRE(seeps(obs_dry, fc_light, c) == Catch::Approx(0.5 / 0.3).epsilon(1e-12));
        // worked value at p1 = 0.5: obs light, fc dry -> 1.0
        c.p1 = Field(1, 1, 0.5);
        REQUIRE(seeps(obs_dry, fc_light, c) == Catch::Approx(1.0).epsilon(1e-12));
    }
    SECTION("matrix diagonal is zero, off-diagonal positive") {
        for (std::size_t px = 0; px < clim.p1.v.size(); ++px) {
            if (!clim.valid.v[px]) continue;
            auto m = clim.matrix_at(px);
            for (int f = 0; f < 3; ++f)
                for (int v = 0; v < 3; ++v) {
                    if (f == v)
                        REQUIRE(m[static_cast<std::size_t>(f * 3 + v)] == 0.0);
                    else
                        REQUIRE(m[static_cast<std::size_t>(f * 3 + v)] > 0.0);
                }
        }
    }
    SECTION("equitability: every constant forecast has expected score 1") {
        // Under the climatological distribution (dry with prob p1, light
        // 2(1-p1)/3, heavy (1-p1)/3), each constant forecast strategy scores
        // 1 in expectation.  This pins the matrix orientation.
        for (std::size_t px = 0; px < clim.p1.v.size(); ++px) {
            if (!clim.valid.v[px]) continue;
            auto m = clim.matrix_at(px);
            const double p1 = clim.p1.v[px];
            const double probs[3] = {p1, 2.0 * (1.0 - p1) / 3.0, (1.0 - p1) / 3.0};
            for (int f = 0; f < 3; ++f) {
                double expect = 0.0;
                for (int v = 0; v < 3; ++v)
                    expect += probs[v] * m[static_cast<std::size_t>(f * 3 + v)];
                REQUIRE(expect == Catch::Approx(1.0).epsilon(1e-12));
            }
        }
    }
    SECTION("wet threshold exceeds the dry threshold on valid pixels") {
        for (std::size_t px = 0; px < clim.p1.v.size(); ++px)
            if (clim.valid.v[px]) {
                REQUIRE(clim.wet_threshold.v[px] > 0.25);
                REQUIRE(clim.p1.v[px] > 0.03);
                REQUIRE(clim.p1.v[px] < 0.97);
            }
    }
}

TEST_CASE("relative metric") {
    std::mt19937_64 rng(10);
    Field ref = lh::testing::random_field(4, 4, rng, 1.0, 5.0);
    REQUIRE(relative(0.0, ref) == 0.0);

    SECTION("mae 1 with mean|ref| 4 gives 0.25") {
        Field four(4, 4, 4.0);
        REQUIRE(relative(1.0, four) == Catch::Approx(0.25).epsilon(1e-12));
    }
    SECTION("scale invariance of relative MAE") {
        Field pred = lh::testing::random_field(4, 4, rng, 1.0, 5.0);
        auto w = lat_weights(default_lats(4));
        const double r1 = relative(mae(pred, ref, &w), ref, &w);
        const double c = 7.25;
        Field ps = pred, rs = ref;
        for (auto& x : ps.v) x *= c;
        for (auto& x : rs.v) x *= c;
        const double r2 = relative(mae(ps, rs, &w), rs, &w);
        REQUIRE(r1 == Catch::Approx(r2).epsilon(1e-12));
    }
    SECTION("ref_std normalizer") {
        Field pred = ref;
        const double v = relative(2.0, ref, nullptr, nullptr, "ref_std");
        REQUIRE(v > 0.0);
        REQUIRE_THROWS_AS(relative(1.0, ref, nullptr, nullptr, "bogus"), std::invalid_argument);
    }
}

TEST_CASE("energy spectrum") {
    const std::size_t H = 8, W = 32;
    auto w = lat_weights(default_lats(H));

    SECTION("constant field puts all power in wavenumber 0") {
        Field f(H, W, 2.0);
        auto s = energy_spectrum({&f}, w);
        REQUIRE(s.size() == W / 2 + 1);
        REQUIRE(s[0] > 0.0);
        for (std::size_t k = 1; k < s.size(); ++k) REQUIRE(s[k] < 1e-20 * s[0]);
    }
    SECTION("pure sinusoid peaks at its wavenumber") {
        constexpr double two_pi = 2.0 * 3.14159265358979323846;
        const std::size_t k0 = 5;
        Field f(H, W);
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j)
                f.at(i, j) = std::cos(two_pi * static_cast<double>(k0) * static_cast<double>(j) /
                                      static_cast<double>(W));
        LatWeights uniform;
        uniform.w.assign(H, 1.0);
        auto s = energy_spectrum({&f}, uniform);
        for (std::size_t k = 0; k < s.size(); ++k)
            if (k != k0) REQUIRE(s[k] < 1e-18 * s[k0]);
    }
    SECTION("white noise is flat within 20% after averaging") {
        std::mt19937_64 rng(11);
        std::vector<Field> fields;
        for (int t = 0; t < 100; ++t) fields.push_back(lh::testing::gaussian_field(H, W, rng));
        std::vector<const Field*> ptrs;
        for (const auto& f : fields) ptrs.push_back(&f);
        LatWeights uniform;
        uniform.w.assign(H, 1.0);
        auto s = energy_spectrum(ptrs, uniform);
        // Interior wavenumbers share the same expected power; 0 and Nyquist
        // have half the complex degrees of freedom but the same mean.
        double mean = 0.0;
        for (std::size_t k = 1; k < s.size() - 1; ++k) mean += s[k];
        mean /= static_cast<double>(s.size() - 2);
        for (std::size_t k = 1; k < s.size() - 1; ++k) {
            REQUIRE(s[k] > 0.8 * mean);
            REQUIRE(s[k] < 1.2 * mean);
        }
    }
}

TEST_CASE("patchiness") {
    // Grid large enough that boundary/interior jump statistics are well
    // sampled relative to the smooth fields' wavelengths.
    std::mt19937_64 rng(12);
    const std::size_t H = 32, W = 64, P = 4;

    SECTION("pred == ref gives exactly 1") {
        Field f = lh::testing::smooth_random_field(H, W, rng);
        REQUIRE(patchiness(f, f, P) == 1.0);
    }
    SECTION("piecewise patch-constant prediction is flagged hard") {
        Field ref = lh::testing::smooth_random_field(H, W, rng);
        Field pred(H, W);
        for (std::size_t bi = 0; bi < H / P; ++bi)
            for (std::size_t bj = 0; bj < W / P; ++bj) {
                double m = 0.0;
                for (std::size_t di = 0; di < P; ++di)
                    for (std::size_t dj = 0; dj < P; ++dj) m += ref.at(bi * P + di, bj * P + dj);
                m /= static_cast<double>(P * P);
                for (std::size_t di = 0; di < P; ++di)
                    for (std::size_t dj = 0; dj < P; ++dj) pred.at(bi * P + di, bj * P + dj) = m;
            }
        REQUIRE(patchiness(pred, ref, P) > 2.0);
    }
    SECTION("smooth prediction on smooth reference stays near 1") {
        for (int t = 0; t < 20; ++t) {
            Field ref = lh::testing::smooth_random_field(H, W, rng, 10);
            Field pred = lh::testing::smooth_random_field(H, W, rng, 10);
            const double v = patchiness(pred, ref, P);
            REQUIRE(v > 0.8);
            REQUIRE(v < 1.2);
        }
    }
}

TEST_CASE("masked metrics equal unmasked metrics on extracted pixels") {
    std::mt19937_64 rng(13);
    const std::size_t H = 6, W = 9;
    Field pred = lh::testing::random_field(H, W, rng);
    Field ref = lh::testing::random_field(H, W, rng);
    Mask m = lh::testing::random_mask(H, W, rng);
    auto w = lat_weights(default_lats(H));

    // Extract included pixels into a 1 x n strip with matching weights.
    std::vector<double> pv, rv, wv;
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
            if (m.v[i * W + j]) {
                pv.push_back(pred.at(i, j));
                rv.push_back(ref.at(i, j));
                wv.push_back(w.w[i]);
            }
    Field ps(1, pv.size()), rs(1, rv.size());
    ps.v = pv;
    rs.v = rv;
    LatWeights ws_row;  // all extracted pixels in one row: fold weights into a mask-free mean
    ws_row.w = {1.0};

    // Weighted forms need per-pixel weights, so compare the weighted sums
    // directly via a hand computation.
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < pv.size(); ++k) {
        num += wv[k] * std::abs(pv[k] - rv[k]);
        den += wv[k];
    }
    REQUIRE(mae(pred, ref, &w, &m) == Catch::Approx(num / den).epsilon(1e-13));
    REQUIRE(pcc(pred, ref, &m) == Catch::Approx(pcc(ps, rs)).epsilon(1e-12));
    REQUIRE(w1_fields(pred, ref, &m) == Catch::Approx(w1(pv, rv)).epsilon(1e-12));
}
