#include <doctest.h>

#include <filesystem>
#include <map>

#include "flowmil/pipeline/pipeline.hpp"
#include "flowmil/util/digest.hpp"
#include "flowmil/util/io.hpp"

using namespace flowmil;
namespace fs = std::filesystem;

namespace {

const char* kMiniConfig = R"(# mini end-to-end configuration
[pipeline]
preset = desk
seed = 11

[generate]
train_normal = 2
train_anomalous = 2
test_normal = 1
test_anomalous = 1
frames = 128
height = 32
width = 32

[tan]
enc_widths = 6,8,10
bottleneck = 16
steps = 30
milestones = 20
batch = 2
pool_per_video = 4

[mil]
segments = 8
regressor_widths = 16,8,1
attention_widths = 12,6,1
bags_per_side = 4
steps = 40
milestones = 25
)";

fs::path fresh_dir(const char* leaf) {
    const auto dir = fs::temp_directory_path() / leaf;
    fs::remove_all(dir);
    return dir;
}

pipeline::PipelineConfig mini_config(const fs::path& out) {
    auto cfg = pipeline::load_config(kMiniConfig, "mini");
    cfg.out_dir = out.string();
    return cfg;
}

std::map<std::string, std::string> artifact_digests(const fs::path& out) {
    std::map<std::string, std::string> digests;
    for (const auto& entry : fs::recursive_directory_iterator(out)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), out).generic_string();
        if (rel == "manifest.json" || rel.ends_with(".lock")) continue;  // timings differ
        digests[rel] = digest_file(entry.path());
    }
    return digests;
}

}  // namespace

TEST_CASE("empty config resolves to the documented defaults") {
    const auto cfg = pipeline::load_config("", "empty");
    CHECK(cfg.preset == "desk");
    CHECK(cfg.mil_cfg.lambda1 == doctest::Approx(8e-5f));
    CHECK(cfg.mil_cfg.m == 32);
    CHECK(cfg.mil_cfg.regressor_widths == std::array<int, 3>{512, 32, 1});
    CHECK(cfg.mil_cfg.attention_widths == std::array<int, 3>{256, 64, 1});
    CHECK(cfg.mil_cfg.schedule.initial_lr == doctest::Approx(0.001));
    CHECK(cfg.tan_cfg.bottleneck_channels == 1024);
    CHECK(cfg.tan_cfg.schedule.initial_lr == doctest::Approx(0.005));
    CHECK(cfg.height == 64);
}

TEST_CASE("config validation rejects contradictions") {
    CHECK_THROWS_AS(pipeline::load_config("[mil]\nlambda1 = -0.5\n", "t"), Error);
    CHECK_THROWS_AS(pipeline::load_config("[mil]\nsegments = 0\n", "t"), Error);
    CHECK_THROWS_AS(pipeline::load_config("[tan]\nsteps = 100\nmilestones = 200\n", "t"), Error);
    CHECK_THROWS_AS(pipeline::load_config("[generate]\nheight = 31\nwidth = 31\n", "t"), Error);
    CHECK_THROWS_AS(pipeline::load_config("[pipeline]\npreset = gpu\n", "t"), Error);
    CHECK_THROWS_AS(pipeline::load_config("[mystery]\nkey = 1\n", "t"), Error);
    CHECK_THROWS_AS(pipeline::load_config("[mil]\nwhatever = 1\n", "t"), Error);
}

TEST_CASE("parse errors are collected, not first-failure") {
    std::vector<std::string> errors;
    pipeline::parse_config_text("[mil]\nsegments = abc\nlambda1 = xyz\n", "t", errors);
    CHECK(errors.size() == 2);
}

TEST_CASE("paper preset restores the published schedules") {
    const auto cfg = pipeline::preset_config("paper");
    CHECK(cfg.height == 112);
    CHECK(cfg.tan_cfg.schedule.total_steps == 50000);
    CHECK(cfg.tan_cfg.schedule.milestones == std::vector<int>{25000, 40000});
    CHECK(cfg.tan_cfg.schedule.batch_size == 50);
    CHECK(cfg.tan_cfg.enc_widths == std::array<int, 3>{64, 128, 256});
    CHECK(cfg.mil_cfg.schedule.total_steps == 10000);
    CHECK(cfg.mil_cfg.schedule.milestones == std::vector<int>{4000, 8000});
}

TEST_CASE("stage seeds differ per stage but are stable") {
    const auto cfg = pipeline::load_config("", "empty");
    CHECK(cfg.stage_seed("generate:train") != cfg.stage_seed("generate:test"));
    CHECK(cfg.stage_seed("train-tan") != cfg.stage_seed("train-mil"));
    CHECK(cfg.stage_seed("train-tan") == cfg.stage_seed("train-tan"));
}

TEST_CASE("mini pipeline runs end to end, deterministically") {
    const auto out1 = fresh_dir("flowmil_pipe_a");
    const auto out2 = fresh_dir("flowmil_pipe_b");
    {
        pipeline::Pipeline p1(mini_config(out1));
        p1.run_all();
        pipeline::Pipeline p2(mini_config(out2));
        p2.run_all();
    }
    CHECK(fs::exists(out1 / "report" / "summary.txt"));
    const auto d1 = artifact_digests(out1);
    const auto d2 = artifact_digests(out2);
    REQUIRE(!d1.empty());
    CHECK(d1 == d2);

    // a stage re-run in isolation reproduces its outputs from persisted artifacts
    const auto before = digest_file(out1 / "report" / "roc_eval.csv");
    pipeline::Pipeline p3(mini_config(out1));
    p3.evaluate();
    CHECK(digest_file(out1 / "report" / "roc_eval.csv") == before);
}

TEST_CASE("missing upstream artifacts name the stage to re-run") {
    const auto out = fresh_dir("flowmil_pipe_missing");
    pipeline::Pipeline pipe(mini_config(out));
    SUBCASE("train-tan before generate") {
        CHECK_THROWS_WITH_AS(pipe.train_tan(),
                             doctest::Contains("stage 'train-tan' needs artifacts from stage "
                                               "'generate'"),
                             Error);
    }
    SUBCASE("deleted features fail train-mil naming extract") {
        pipe.run_all();
        for (const auto& entry : fs::directory_iterator(out / "features"))
            fs::remove(entry.path());
        try {
            pipe.train_mil();
            FAIL("expected missing-stage error");
        } catch (const Error& e) {
            CHECK(e.code() == "missing-stage");
            CHECK(std::string(e.what()).find("extract") != std::string::npos);
        }
    }
    SUBCASE("tampered artifacts refuse to proceed") {
        pipe.generate();
        io::atomic_write_file(out / "data" / "manifest_train.txt", std::string("garbage\t"));
        try {
            pipe.train_tan();
            FAIL("expected digest mismatch");
        } catch (const Error& e) {
            CHECK(e.code() == "digest-mismatch");
        }
    }
}

TEST_CASE("config snapshot mismatch is refused") {
    const auto out = fresh_dir("flowmil_pipe_snapshot");
    auto cfg = mini_config(out);
    pipeline::Pipeline pipe(cfg);
    pipe.generate();
    auto cfg2 = cfg;
    cfg2.mil_cfg.lambda1 = 0.5f;
    pipeline::Pipeline pipe2(cfg2);
    CHECK_THROWS_AS(pipe2.train_tan(), Error);
}

TEST_CASE("the output directory lock is exclusive") {
    const auto out = fresh_dir("flowmil_pipe_lock");
    fs::create_directories(out);
    pipeline::OutputLock lock(out);
    CHECK_THROWS_AS((pipeline::OutputLock{out}), Error);
}

TEST_CASE("config snapshot text parses back to the same config") {
    const auto cfg = mini_config(fresh_dir("flowmil_pipe_text"));
    const auto text = cfg.to_text();
    auto reparsed = pipeline::load_config(text, "snapshot");
    CHECK(reparsed.to_text() == text);
    CHECK(reparsed.seed == cfg.seed);
    CHECK(reparsed.tan_cfg.enc_widths == cfg.tan_cfg.enc_widths);
    CHECK(reparsed.mil_cfg.schedule.total_steps == cfg.mil_cfg.schedule.total_steps);
}
