#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flowmil/nn/checkpoint.hpp"
#include "flowmil/util/io.hpp"
#include "testutil.hpp"

using namespace flowmil;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const auto dir = fs::temp_directory_path() / "flowmil_ckpt_test";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("checkpoint round-trips bitwise") {
    RngStream rng(31);
    auto a = nn::conv_params<float>(4, 3, 3);
    auto b = nn::fc_params<float>(2, 6);
    test::fill_uniform(a.w, rng);
    test::fill_uniform(a.b, rng);
    test::fill_uniform(a.w_acc, rng, 0.0, 1.0);
    test::fill_uniform(b.w, rng);

    const auto path = temp_dir() / "roundtrip.fmnn";
    nn::save_checkpoint(path, {{"conv", &a}, {"head.fc", &b}});
    const auto loaded = nn::load_checkpoint(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].first == "conv");
    CHECK(loaded[1].first == "head.fc");
    const auto& la = nn::find_layer(loaded, "conv");
    REQUIRE(la.w.same_shape(a.w));
    for (std::size_t i = 0; i < a.w.v.size(); ++i) CHECK(la.w.v[i] == a.w.v[i]);
    for (std::size_t i = 0; i < a.w_acc.v.size(); ++i) CHECK(la.w_acc.v[i] == a.w_acc.v[i]);
    const auto& lb = nn::find_layer(loaded, "head.fc");
    for (std::size_t i = 0; i < b.w.v.size(); ++i) CHECK(lb.w.v[i] == b.w.v[i]);

    // byte-identical on re-save
    const auto bytes1 = io::read_file(path);
    nn::LayerParams a2 = la, b2 = lb;
    nn::save_checkpoint(path, {{"conv", &a2}, {"head.fc", &b2}});
    const auto bytes2 = io::read_file(path);
    CHECK(bytes1 == bytes2);
}

TEST_CASE("truncated checkpoint reports expected vs actual byte counts") {
    RngStream rng(32);
    auto a = nn::fc_params<float>(4, 4);
    test::fill_uniform(a.w, rng);
    const auto path = temp_dir() / "trunc.fmnn";
    nn::save_checkpoint(path, {{"fc", &a}});
    auto bytes = io::read_file(path);
    bytes.resize(bytes.size() - 7);
    io::atomic_write_file(path, bytes.data(), bytes.size());
    try {
        nn::load_checkpoint(path);
        FAIL("expected truncation error");
    } catch (const Error& e) {
        CHECK(e.code() == "truncated");
        const std::string msg = e.what();
        CHECK(msg.find("expected at least") != std::string::npos);
        CHECK(msg.find(std::to_string(bytes.size())) != std::string::npos);
    }
}

TEST_CASE("wrong magic is a format error") {
    const auto path = temp_dir() / "badmagic.fmnn";
    io::atomic_write_file(path, std::string("NOPE1234"));
    try {
        nn::load_checkpoint(path);
        FAIL("expected format error");
    } catch (const Error& e) {
        CHECK(e.code() == "format");
    }
}
