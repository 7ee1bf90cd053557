#include <doctest.h>

#include <filesystem>

#include "flowmil/eval/eval.hpp"
#include "flowmil/motion/flow.hpp"
#include "flowmil/motion/generate.hpp"
#include "flowmil/util/io.hpp"
#include "testutil.hpp"

using namespace flowmil;
namespace fs = std::filesystem;

namespace {

motion::Image random_texture(int h, int w, RngStream& rng) {
    motion::Image img(h, w);
    for (auto& p : img.px) p = static_cast<std::uint8_t>(rng.uniform_int(256));
    return img;
}

/// Frames whose content translates rigidly by (dy, dx) per frame, wrapping at
/// the borders so interior motion is exact.
std::vector<motion::Image> translating_frames(const motion::Image& base, int n, int dy, int dx) {
    std::vector<motion::Image> frames;
    for (int t = 0; t < n; ++t) {
        motion::Image f(base.h, base.w);
        for (int y = 0; y < base.h; ++y)
            for (int x = 0; x < base.w; ++x) {
                const int sy = ((y - t * dy) % base.h + base.h) % base.h;
                const int sx = ((x - t * dx) % base.w + base.w) % base.w;
                f.at(y, x) = base.at(sy, sx);
            }
        frames.push_back(std::move(f));
    }
    return frames;
}

fs::path temp_dir() {
    const auto dir = fs::temp_directory_path() / "flowmil_motion_test";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("block matching on identical images is zero flow") {
    RngStream rng(40);
    const auto img = random_texture(32, 32, rng);
    const auto flow = motion::block_matching_flow(img, img, {8, 4});
    for (auto v : flow.v) CHECK(v == 0.0f);
}

TEST_CASE("block matching recovers a rigid shift inside the search radius") {
    RngStream rng(41);
    const auto base = random_texture(48, 48, rng);
    const auto frames = translating_frames(base, 2, 0, 3);
    const auto flow = motion::block_matching_flow(frames[0], frames[1], {8, 4});
    // interior blocks (wrap artifacts live at the borders)
    int checked = 0;
    for (int y = 8; y < 40; ++y)
        for (int x = 8; x < 40; ++x) {
            CHECK(flow(0, y, x) == doctest::Approx(3.0f));  // horizontal
            CHECK(flow(1, y, x) == doctest::Approx(0.0f));  // vertical
            ++checked;
        }
    CHECK(checked > 0);
}

TEST_CASE("block matching on flat images resolves ties to zero") {
    motion::Image flat(24, 24);
    for (auto& p : flat.px) p = 111;
    const auto flow = motion::block_matching_flow(flat, flat, {8, 5});
    for (auto v : flow.v) CHECK(v == 0.0f);
}

TEST_CASE("flow stack wants exactly 16 frames of one size") {
    RngStream rng(42);
    std::vector<motion::Image> frames(15, random_texture(24, 24, rng));
    CHECK_THROWS_AS(motion::build_flow_stack(frames, {8, 4}), Error);
    frames.push_back(random_texture(24, 24, rng));
    CHECK_NOTHROW(motion::build_flow_stack(frames, {8, 4}));
    frames.back() = random_texture(24, 32, rng);
    CHECK_THROWS_AS(motion::build_flow_stack(frames, {8, 4}), Error);
}

TEST_CASE("16 identical frames give an exactly zero stack") {
    RngStream rng(43);
    const std::vector<motion::Image> frames(16, random_texture(32, 32, rng));
    const auto stack = motion::build_flow_stack(frames, {8, 4});
    CHECK(stack.t.dim(0) == 30);
    for (auto v : stack.t.v) CHECK(v == 0.0f);
}

TEST_CASE("a rigidly translating clip recovers the translation on interior pixels") {
    RngStream rng(44);
    const auto base = random_texture(64, 64, rng);
    const auto frames = translating_frames(base, 16, 0, 2);
    const auto stack = motion::build_flow_stack(frames, {8, 7}, "clip", 0);
    for (int pair = 0; pair < 15; ++pair)
        for (int y = 16; y < 48; ++y)
            for (int x = 16; x < 48; ++x) {
                CHECK(std::abs(stack.t(2 * pair, y, x) - 2.0f) <= 0.5f);
                CHECK(std::abs(stack.t(2 * pair + 1, y, x)) <= 0.5f);
            }
}

TEST_CASE("stack normalization clips to +-16 px and lands in [-1, 1]") {
    nn::Tensor raw({30, 2, 2});
    raw.v[0] = 40.0f;
    raw.v[1] = -40.0f;
    raw.v[2] = 8.0f;
    const auto n = motion::normalize_stack(raw);
    CHECK(n.v[0] == 1.0f);
    CHECK(n.v[1] == -1.0f);
    CHECK(n.v[2] == 0.5f);
    for (auto v : n.v) CHECK((v >= -1.0f && v <= 1.0f));
}

TEST_CASE("flow file round-trip is bitwise exact") {
    RngStream rng(45);
    motion::FlowStack stack;
    stack.video_id = "vid7";
    stack.frame_begin = 32;
    stack.t.resize({30, 8, 8});
    test::fill_uniform(stack.t, rng, -12.0, 12.0);
    const auto path = temp_dir() / "stack.fmfl";
    motion::write_flow_file(path, stack);
    const auto loaded = motion::read_flow_file(path);
    CHECK(loaded.video_id == "vid7");
    CHECK(loaded.frame_begin == 32);
    REQUIRE(loaded.t.same_shape(stack.t));
    for (std::size_t i = 0; i < stack.t.v.size(); ++i) CHECK(loaded.t.v[i] == stack.t.v[i]);
}

TEST_CASE("truncated flow file names expected vs actual byte counts") {
    RngStream rng(46);
    motion::FlowStack stack;
    stack.video_id = "t";
    stack.t.resize({30, 4, 4});
    test::fill_uniform(stack.t, rng);
    const auto path = temp_dir() / "trunc.fmfl";
    motion::write_flow_file(path, stack);
    auto bytes = io::read_file(path);
    bytes.resize(bytes.size() / 2);
    io::atomic_write_file(path, bytes.data(), bytes.size());
    try {
        motion::read_flow_file(path);
        FAIL("expected truncation error");
    } catch (const Error& e) {
        CHECK(e.code() == "truncated");
        CHECK(std::string(e.what()).find(std::to_string(bytes.size())) != std::string::npos);
    }
}

TEST_CASE("wrong magic in a flow file is a format error") {
    const auto path = temp_dir() / "bad.fmfl";
    io::atomic_write_file(path, std::string("FMVDxxxxxxxxxxxx"));
    try {
        motion::read_flow_file(path);
        FAIL("expected format error");
    } catch (const Error& e) {
        CHECK(e.code() == "format");
    }
}

TEST_CASE("video file round-trip preserves frames, label and id") {
    motion::GeneratorConfig cfg;
    cfg.normal_count = 1;
    cfg.anomalous_count = 1;
    cfg.frames = 32;
    cfg.height = 32;
    cfg.width = 32;
    cfg.seed = 5;
    const auto videos = motion::generate_dataset(cfg);
    const auto path = temp_dir() / "video.fmvd";
    motion::write_video_file(path, videos[1]);
    const auto loaded = motion::read_video_file(path);
    CHECK(loaded.id == videos[1].id);
    CHECK(loaded.anomalous == videos[1].anomalous);
    REQUIRE(loaded.frames.size() == videos[1].frames.size());
    for (std::size_t i = 0; i < loaded.frames.size(); ++i)
        CHECK(loaded.frames[i].px == videos[1].frames[i].px);
}

TEST_CASE("dataset generation is a pure function of config and seed") {
    motion::GeneratorConfig cfg;
    cfg.normal_count = 3;
    cfg.anomalous_count = 3;
    cfg.frames = 64;
    cfg.height = 48;
    cfg.width = 48;
    cfg.seed = 7;
    const auto a = motion::generate_dataset(cfg);
    const auto b = motion::generate_dataset(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].mask == b[i].mask);
        REQUIRE(a[i].frames.size() == b[i].frames.size());
        for (std::size_t f = 0; f < a[i].frames.size(); ++f)
            CHECK(a[i].frames[f].px == b[i].frames[f].px);
    }
}

TEST_CASE("anomaly masks cover at least 16 frames and at most half") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        motion::GeneratorConfig cfg;
        cfg.normal_count = 1;
        cfg.anomalous_count = 1;
        cfg.frames = seed % 2 == 0 ? 64 : 256;
        cfg.height = 32;
        cfg.width = 32;
        cfg.seed = seed;
        const auto videos = motion::generate_dataset(cfg);
        int covered = 0;
        for (auto m : videos[1].mask) covered += m;
        CHECK(covered >= 16);
        CHECK(covered <= cfg.frames / 2);
        // contiguity: at least one run of >= 16
        int best_run = 0, run = 0;
        for (auto m : videos[1].mask) {
            run = m ? run + 1 : 0;
            best_run = std::max(best_run, run);
        }
        CHECK(best_run >= 16);
        // normal video mask is all zero
        for (auto m : videos[0].mask) CHECK(m == 0);
    }
}

TEST_CASE("generator rejects invalid counts and sizes") {
    motion::GeneratorConfig cfg;
    cfg.normal_count = -1;
    CHECK_THROWS_AS(motion::generate_dataset(cfg), Error);
    cfg.normal_count = 0;
    cfg.anomalous_count = 0;
    CHECK_THROWS_AS(motion::generate_dataset(cfg), Error);
    cfg.anomalous_count = 1;
    cfg.frames = 8;
    CHECK_THROWS_AS(motion::generate_dataset(cfg), Error);
    cfg.frames = 64;
    cfg.height = 4;
    CHECK_THROWS_AS(motion::generate_dataset(cfg), Error);
}

TEST_CASE("dataset manifest round-trips") {
    std::vector<motion::ManifestEntry> entries{{"train_n000", false, 512, "train_n000.fmvd"},
                                               {"train_a000", true, 512, "train_a000.fmvd"}};
    const auto text = motion::format_manifest(entries);
    const auto parsed = motion::parse_manifest(text, "test");
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].id == "train_n000");
    CHECK_FALSE(parsed[0].anomalous);
    CHECK(parsed[1].anomalous);
    CHECK(parsed[1].frame_count == 512);
    CHECK(parsed[1].path == "train_a000.fmvd");
}
