#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "peav/io.hpp"
#include "peav/numeric.hpp"
#include "peav/prng.hpp"

using namespace peav;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("feature file round-trips") {
    const std::string path = temp_path("peav_io_roundtrip.peav");

    SUBCASE("empty rank-1 tensor") {
        Tensor t = Tensor::zeros({0});
        write_feature_file(path, t);
        Tensor back = read_feature_file(path);
        CHECK(back.shape() == std::vector<std::size_t>{0});
        CHECK(back.size() == 0);
    }

    SUBCASE("2x3 ramp is bit-exact in f32") {
        Tensor t = Tensor::matrix({{0, 1, 2}, {3, 4, 5}});
        write_feature_file(path, t);
        Tensor back = read_feature_file(path);
        CHECK(back.shape() == t.shape());
        CHECK(max_abs_diff(back, t) == 0.0);  // small integers are exact in f32
    }

    SUBCASE("random payload survives to f32 precision") {
        PrngStream rng(8);
        Tensor t = Tensor::zeros({4, 5});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
        write_feature_file(path, t);
        Tensor back = read_feature_file(path);
        for (std::size_t i = 0; i < t.size(); ++i) {
            CHECK(back[i] == doctest::Approx(t[i]).epsilon(1e-6));
            CHECK(back[i] == static_cast<double>(static_cast<float>(t[i])));
        }
    }
}

TEST_CASE("feature file format errors carry byte offsets") {
    const std::string path = temp_path("peav_io_bad.peav");
    Tensor t = Tensor::matrix({{1, 2}, {3, 4}});
    write_feature_file(path, t);
    std::string bytes = read_bytes(path);

    SUBCASE("truncated payload") {
        write_bytes(path, bytes.substr(0, bytes.size() - 5));
        CHECK_THROWS_AS(read_feature_file(path), format_error);
        try {
            read_feature_file(path);
        } catch (const format_error& e) {
            CHECK(e.byte_offset > 0);
        }
    }

    SUBCASE("bad magic") {
        std::string corrupt = bytes;
        corrupt[0] = 'X';
        write_bytes(path, corrupt);
        CHECK_THROWS_AS(read_feature_file(path), format_error);
    }

    SUBCASE("bad version") {
        std::string corrupt = bytes;
        corrupt[4] = 9;
        write_bytes(path, corrupt);
        CHECK_THROWS_AS(read_feature_file(path), format_error);
    }

    SUBCASE("trailing bytes") {
        write_bytes(path, bytes + "zzz");
        CHECK_THROWS_AS(read_feature_file(path), format_error);
    }
}

TEST_CASE("checkpoint round-trips config and tensors in order") {
    const std::string path = temp_path("peav_io_ckpt.bin");
    Checkpoint ckpt;
    ckpt.config_json = R"({"seed": 7, "scale": "TOY"})";
    ckpt.tensors.emplace_back("w1", Tensor::matrix({{1, 2}, {3, 4}}));
    ckpt.tensors.emplace_back("b1", Tensor::vector({0.5, -0.5}));
    write_checkpoint(path, ckpt);

    Checkpoint back = read_checkpoint(path);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].first == "w1");
    CHECK(back.tensors[1].first == "b1");
    CHECK(max_abs_diff(back.tensors[0].second, ckpt.tensors[0].second) == 0.0);
    CHECK(back.config_json.find("\"seed\":7") != std::string::npos);
}
