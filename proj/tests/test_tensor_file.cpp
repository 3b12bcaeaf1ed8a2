#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "lh/tensor_file.hpp"
#include "testing_util.hpp"

using namespace lh;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("lh_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("tensor file round trip is bit exact") {
    TempDir tmp;
    SECTION("empty dims [0]") {
        write_tensor(tmp.path / "e.lht", {0}, std::vector<float>{});
        auto t = read_tensor(tmp.path / "e.lht");
        REQUIRE(t.dims == std::vector<std::uint64_t>{0});
        REQUIRE(t.f32.empty());
    }
    SECTION("random 3x5x7 f32") {
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<float> d(-100.f, 100.f);
        std::vector<float> data(3 * 5 * 7);
        for (auto& x : data) x = d(rng);
        write_tensor(tmp.path / "r.lht", {3, 5, 7}, data);
        auto t = read_tensor(tmp.path / "r.lht");
        REQUIRE(t.dtype == Dtype::f32);
        REQUIRE(t.dims == std::vector<std::uint64_t>{3, 5, 7});
        REQUIRE(std::memcmp(t.f32.data(), data.data(), data.size() * 4) == 0);
    }
    SECTION("random f64 checkpoint tensor") {
        std::mt19937_64 rng(12);
        std::uniform_real_distribution<double> d(-1.0, 1.0);
        std::vector<double> data(64);
        for (auto& x : data) x = d(rng);
        write_tensor(tmp.path / "d.lht", {8, 8}, data);
        auto t = read_tensor(tmp.path / "d.lht");
        REQUIRE(t.dtype == Dtype::f64);
        REQUIRE(std::memcmp(t.f64.data(), data.data(), data.size() * 8) == 0);
    }
}

TEST_CASE("tensor file rejects corruption") {
    TempDir tmp;
    const fs::path p = tmp.path / "c.lht";
    write_tensor(p, {4}, std::vector<float>{1.f, 2.f, 3.f, 4.f});

    SECTION("flipping one payload byte breaks the checksum") {
        auto bytes = [&] {
            std::ifstream in(p, std::ios::binary);
            return std::vector<char>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
        }();
        bytes[20] ^= 0x40;  // inside the payload (header is 18 bytes for rank 1)
        {
            std::ofstream out(p, std::ios::binary | std::ios::trunc);
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        }
        REQUIRE_THROWS_WITH(read_tensor(p), Catch::Matchers::ContainsSubstring("checksum"));
    }
    SECTION("bad magic is rejected") {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out << "NOTMAGIC00000000";
        out.close();
        REQUIRE_THROWS_WITH(read_tensor(p), Catch::Matchers::ContainsSubstring("magic"));
    }
    SECTION("truncated file is rejected") {
        auto bytes = [&] {
            std::ifstream in(p, std::ios::binary);
            return std::vector<char>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
        }();
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
        out.close();
        REQUIRE_THROWS_AS(read_tensor(p), std::runtime_error);
    }
    SECTION("missing file is an error") {
        REQUIRE_THROWS_AS(read_tensor(tmp.path / "nope.lht"), std::runtime_error);
    }
    SECTION("non-finite payload rejected on write") {
        REQUIRE_THROWS_AS(
            write_tensor(p, {1}, std::vector<float>{std::numeric_limits<float>::infinity()}),
            std::invalid_argument);
    }
}

TEST_CASE("field narrows to f32 on disk and reads back") {
    TempDir tmp;
    std::mt19937_64 rng(5);
    Field f = lh::testing::random_field(6, 10, rng, -5.0, 5.0);
    write_field_f32(tmp.path / "f.lht", f);
    Field g = read_field(tmp.path / "f.lht");
    REQUIRE(g.rows == 6);
    REQUIRE(g.cols == 10);
    for (std::size_t i = 0; i < f.v.size(); ++i)
        REQUIRE(g.v[i] == static_cast<double>(static_cast<float>(f.v[i])));
}
