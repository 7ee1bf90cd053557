#include "flowmil/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "flowmil/eval/eval.hpp"
#include "flowmil/motion/flow.hpp"
#include "flowmil/util/digest.hpp"
#include "flowmil/util/error.hpp"
#include "flowmil/util/io.hpp"

namespace flowmil::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double elapsed_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string history_text(const std::vector<double>& history) {
    std::string out;
    for (std::size_t i = 0; i < history.size(); ++i)
        out += std::to_string(i) + "\t" + io::format_g9(history[i]) + "\n";
    return out;
}

json read_manifest(const fs::path& path) {
    if (!fs::exists(path)) return json::object();
    auto text = io::read_text_file(path);
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw Error("format", path.string() + ": manifest is not valid JSON");
    return j;
}

/// Evenly spaced aligned clip indices; used to subsample training stacks.
std::vector<int> pool_clip_indices(int clip_count, int pool) {
    const int take = std::min(pool, clip_count);
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(take));
    for (int i = 0; i < take; ++i) {
        const int k = static_cast<int>(static_cast<long long>(i) * clip_count / take);
        if (idx.empty() || idx.back() != k) idx.push_back(k);
    }
    return idx;
}

}  // namespace

OutputLock::OutputLock(const fs::path& out_dir) {
    fs::create_directories(out_dir);
    path_ = out_dir / ".flowmil.lock";
    std::error_code ec;
    if (fs::exists(path_))
        throw Error("lock", "output directory " + out_dir.string() +
                                " is locked by another pipeline instance (remove " +
                                path_.string() + " if stale)");
    std::ofstream f(path_);
    if (!f) throw Error("io", "cannot create lock file " + path_.string());
    f << "flowmil " << kToolVersion << "\n";
}

OutputLock::~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

Pipeline::Pipeline(PipelineConfig cfg, bool verbose) : cfg_(std::move(cfg)), verbose_(verbose) {
    cfg_.validate();
}

const std::vector<std::string>& Pipeline::stage_names() {
    static const std::vector<std::string> names{"generate",  "train-tan", "extract", "build-bags",
                                                "train-mil", "eval",      "compare"};
    return names;
}

void Pipeline::log(const std::string& msg) const {
    if (verbose_) std::cerr << "[flowmil] " << msg << "\n";
}

void Pipeline::run_stage(const std::string& name) {
    if (name == "generate") generate();
    else if (name == "train-tan") train_tan();
    else if (name == "extract") extract();
    else if (name == "build-bags") build_bags();
    else if (name == "train-mil") train_mil();
    else if (name == "eval") evaluate();
    else if (name == "compare") compare();
    else if (name == "run-all") run_all();
    else throw Error("usage", "unknown stage '" + name + "'");
}

void Pipeline::run_all() {
    generate();
    train_tan();
    extract();
    build_bags();
    train_mil();
    evaluate();
}

void Pipeline::check_config_snapshot() {
    const fs::path snap = fs::path(cfg_.out_dir) / "config_resolved.txt";
    const std::string current = cfg_.to_text();
    if (fs::exists(snap)) {
        if (io::read_text_file(snap) != current)
            throw Error("config-mismatch",
                        "config differs from the one recorded in " + snap.string() +
                            "; use a fresh output directory or restore the config");
    } else {
        io::atomic_write_file(snap, current);
    }
}

void Pipeline::finish_stage(const std::string& name, const std::vector<fs::path>& artifacts,
                            double seconds) {
    const fs::path mpath = fs::path(cfg_.out_dir) / "manifest.json";
    json manifest = read_manifest(mpath);
    manifest["tool_version"] = kToolVersion;
    manifest["config_digest"] = digest_hex(fnv1a64(cfg_.to_text()));
    json arts = json::array();
    for (const auto& p : artifacts) {
        const auto rel = fs::relative(p, cfg_.out_dir).generic_string();
        arts.push_back({{"path", rel}, {"digest", digest_file(p)}});
    }
    manifest["stages"][name] = {{"seconds", seconds}, {"artifacts", arts}};
    io::atomic_write_file(mpath, manifest.dump(2) + "\n");
    log(name + " done in " + io::format_g9(seconds) + "s (" +
        std::to_string(artifacts.size()) + " artifacts)");
}

void Pipeline::require_stage(const std::string& current, const std::string& upstream) const {
    const fs::path mpath = fs::path(cfg_.out_dir) / "manifest.json";
    const json manifest = read_manifest(mpath);
    if (!manifest.contains("stages") || !manifest["stages"].contains(upstream))
        throw Error("missing-stage", "stage '" + current + "' needs artifacts from stage '" +
                                         upstream + "'; run " + upstream + " first");
    for (const auto& art : manifest["stages"][upstream]["artifacts"]) {
        const fs::path p = fs::path(cfg_.out_dir) / art["path"].get<std::string>();
        if (!fs::exists(p))
            throw Error("missing-stage", "stage '" + current + "' needs artifacts from stage '" +
                                             upstream + "': " + p.string() +
                                             " is missing; re-run " + upstream);
        if (digest_file(p) != art["digest"].get<std::string>())
            throw Error("digest-mismatch",
                        p.string() + " does not match the digest recorded by stage '" + upstream +
                            "'; refusing to proceed");
    }
}

std::vector<motion::SyntheticVideo> Pipeline::load_videos(const std::string& which) const {
    const fs::path dir = fs::path(cfg_.out_dir) / "data";
    const auto entries = motion::parse_manifest(
        io::read_text_file(dir / ("manifest_" + which + ".txt")), "manifest_" + which + ".txt");
    std::vector<motion::SyntheticVideo> videos;
    videos.reserve(entries.size());
    for (const auto& e : entries) videos.push_back(motion::read_video_file(dir / e.path));
    return videos;
}

void Pipeline::generate() {
    check_config_snapshot();
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::path(cfg_.out_dir) / "data";
    fs::create_directories(dir);

    auto make = [&](const std::string& which, int normal, int anomalous) {
        motion::GeneratorConfig g;
        g.normal_count = normal;
        g.anomalous_count = anomalous;
        g.frames = cfg_.frames;
        g.height = cfg_.height;
        g.width = cfg_.width;
        g.kinds = cfg_.kinds;
        g.seed = cfg_.stage_seed("generate:" + which);
        g.id_prefix = which + "_";
        return motion::generate_dataset(g);
    };

    std::vector<fs::path> artifacts;
    eval::FrameMasks masks;
    for (const std::string which : {"train", "test"}) {
        const auto videos = make(which, which == "train" ? cfg_.train_normal : cfg_.test_normal,
                                 which == "train" ? cfg_.train_anomalous : cfg_.test_anomalous);
        std::vector<motion::ManifestEntry> entries;
        for (const auto& v : videos) {
            const std::string file = v.id + ".fmvd";
            motion::write_video_file(dir / file, v);
            artifacts.push_back(dir / file);
            entries.push_back({v.id, v.anomalous, v.frame_count(), file});
            masks[v.id] = v.mask;
        }
        const fs::path mpath = dir / ("manifest_" + which + ".txt");
        io::atomic_write_file(mpath, motion::format_manifest(entries));
        artifacts.push_back(mpath);
    }
    // ground truth lives in its own evaluator-only file
    const fs::path masks_path = dir / "masks.txt";
    eval::write_masks_file(masks_path, masks);
    artifacts.push_back(masks_path);

    finish_stage("generate", artifacts, elapsed_since(t0));
}

void Pipeline::train_tan() {
    check_config_snapshot();
    require_stage("train-tan", "generate");
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::path(cfg_.out_dir) / "tan";
    fs::create_directories(dir);

    std::vector<nn::Tensor> pool;
    for (const auto& video : load_videos("train")) {
        const int clips = video.frame_count() / motion::kClipFrames;
        for (int k : pool_clip_indices(clips, cfg_.tan_pool_per_video)) {
            const int begin = k * motion::kClipFrames;
            std::vector<motion::Image> frames(video.frames.begin() + begin,
                                              video.frames.begin() + begin + motion::kClipFrames);
            const auto stack = motion::build_flow_stack(frames, cfg_.block_match, video.id, begin);
            pool.push_back(motion::normalize_stack(stack.t));
        }
    }
    log("train-tan: pool of " + std::to_string(pool.size()) + " stacks");

    tan::TanConfig tcfg = cfg_.tan_cfg;
    tcfg.schedule.seed = cfg_.stage_seed("train-tan");
    tan::TrainOptions opts;
    opts.checkpoint_dir = dir;
    auto result = tan::train_tan(pool, tcfg, opts);

    const fs::path hist = dir / "loss_history.txt";
    io::atomic_write_file(hist, history_text(result.loss_history));

    std::vector<fs::path> artifacts{dir / "checkpoint.fmnn", hist};
    for (int m : tcfg.schedule.milestones)
        artifacts.push_back(dir / ("checkpoint_step_" + std::to_string(m) + ".fmnn"));
    finish_stage("train-tan", artifacts, elapsed_since(t0));
}

void Pipeline::extract() {
    check_config_snapshot();
    require_stage("extract", "generate");
    require_stage("extract", "train-tan");
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::path(cfg_.out_dir) / "features";
    fs::create_directories(dir);

    tan::TanNet net = tan::load_tan_checkpoint(fs::path(cfg_.out_dir) / "tan" / "checkpoint.fmnn");
    std::vector<fs::path> artifacts;
    for (const std::string which : {"train", "test"}) {
        for (const auto& video : load_videos(which)) {
            const int clips = video.frame_count() / motion::kClipFrames;
            if (clips == 0)
                throw Error("data", "video " + video.id + " is shorter than one clip");
            std::vector<tan::MotionFeature> features;
            features.reserve(static_cast<std::size_t>(clips));
            for (int k = 0; k < clips; ++k) {
                const int begin = k * motion::kClipFrames;
                std::vector<motion::Image> frames(
                    video.frames.begin() + begin,
                    video.frames.begin() + begin + motion::kClipFrames);
                const auto stack =
                    motion::build_flow_stack(frames, cfg_.block_match, video.id, begin);
                features.push_back(
                    {stack.clip_id(), tan::extract_feature(motion::normalize_stack(stack.t), net)});
            }
            const fs::path fpath = dir / (video.id + ".fmft");
            tan::write_feature_file(fpath, features);
            artifacts.push_back(fpath);
        }
    }
    finish_stage("extract", artifacts, elapsed_since(t0));
}

void Pipeline::build_bags() {
    check_config_snapshot();
    require_stage("build-bags", "generate");
    require_stage("build-bags", "extract");
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::path(cfg_.out_dir) / "bags";
    fs::create_directories(dir);

    std::vector<fs::path> artifacts;
    for (const std::string which : {"train", "test"}) {
        const auto entries = motion::parse_manifest(
            io::read_text_file(fs::path(cfg_.out_dir) / "data" / ("manifest_" + which + ".txt")),
            "manifest_" + which + ".txt");
        std::string out;
        for (const auto& e : entries) {
            const std::string fpath = "features/" + e.id + ".fmft";
            if (!fs::exists(fs::path(cfg_.out_dir) / fpath))
                throw Error("missing-stage", "feature file " + fpath + " missing; re-run extract");
            out += e.id + "\t" + (e.anomalous ? "anomalous" : "normal") + "\t" + fpath + "\n";
        }
        const fs::path bpath = dir / ("bags_" + which + ".txt");
        io::atomic_write_file(bpath, out);
        artifacts.push_back(bpath);
    }
    finish_stage("build-bags", artifacts, elapsed_since(t0));
}

std::vector<mil::Bag> Pipeline::load_bags(const std::string& which) const {
    const fs::path bpath = fs::path(cfg_.out_dir) / "bags" / ("bags_" + which + ".txt");
    if (!fs::exists(bpath))
        throw Error("missing-stage",
                    bpath.string() + " missing; run build-bags first");
    std::vector<mil::Bag> bags;
    std::istringstream in(io::read_text_file(bpath));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, label, fpath;
        if (!std::getline(ls, id, '\t') || !std::getline(ls, label, '\t') ||
            !std::getline(ls, fpath))
            throw Error("format", bpath.string() + ": malformed bag line");
        const fs::path full = fs::path(cfg_.out_dir) / fpath;
        if (!fs::exists(full))
            throw Error("missing-stage", "stage 'train-mil' needs artifacts from stage 'extract': " +
                                             full.string() + " is missing; re-run extract");
        const auto features = tan::read_feature_file(full);
        std::vector<std::vector<float>> clip_features;
        clip_features.reserve(features.size());
        for (const auto& f : features) clip_features.push_back(f.values);
        mil::Bag bag;
        bag.video_id = id;
        bag.positive = label == "anomalous";
        bag.features = mil::build_bag(clip_features, cfg_.mil_cfg.m);
        bags.push_back(std::move(bag));
    }
    return bags;
}

void Pipeline::train_mil() {
    check_config_snapshot();
    require_stage("train-mil", "build-bags");
    require_stage("train-mil", "extract");
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::path(cfg_.out_dir) / "mil";
    fs::create_directories(dir);

    const auto bags = load_bags("train");
    mil::MilConfig mcfg = cfg_.mil_cfg;
    mcfg.schedule.seed = cfg_.stage_seed("train-mil");
    auto result = mil::train_mil(bags, mcfg);
    mil::save_mil_checkpoint(dir / "checkpoint.fmnn", result.model);
    const fs::path hist = dir / "loss_history.txt";
    io::atomic_write_file(hist, history_text(result.loss_history));

    finish_stage("train-mil", {dir / "checkpoint.fmnn", hist}, elapsed_since(t0));
}

void Pipeline::evaluate() {
    check_config_snapshot();
    require_stage("eval", "generate");
    require_stage("eval", "build-bags");
    require_stage("eval", "train-mil");
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::path(cfg_.out_dir) / "report";
    fs::create_directories(dir);

    mil::MilModel model =
        mil::load_mil_checkpoint(fs::path(cfg_.out_dir) / "mil" / "checkpoint.fmnn");
    model.cfg = cfg_.mil_cfg;

    eval::EvalSet set;
    set.bags = load_bags("test");
    const auto entries = motion::parse_manifest(
        io::read_text_file(fs::path(cfg_.out_dir) / "data" / "manifest_test.txt"),
        "manifest_test.txt");
    for (const auto& e : entries) set.frame_counts[e.id] = e.frame_count;
    set.masks = eval::read_masks_file(fs::path(cfg_.out_dir) / "data" / "masks.txt");

    std::vector<eval::FrameScores> frame_scores;
    for (const auto& bag : set.bags) {
        const auto seg = mil::score_segments(bag.features, model);
        frame_scores.push_back(
            {bag.video_id, eval::expand_scores(seg, set.frame_counts.at(bag.video_id))});
    }
    const fs::path scores_path = dir / "frame_scores.csv";
    io::atomic_write_file(scores_path, eval::format_frame_scores(frame_scores));

    const auto roc = eval::evaluate_model(model, set);
    eval::emit_report({{"eval", roc}}, dir);
    std::cout << "eval\tauc\t" << io::format_g9(roc.auc) << "\n";

    finish_stage("eval",
                 {scores_path, dir / "roc_eval.csv", dir / "summary.txt", dir / "roc.svg"},
                 elapsed_since(t0));
}

void Pipeline::compare() {
    check_config_snapshot();
    require_stage("compare", "generate");
    require_stage("compare", "build-bags");
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::path(cfg_.out_dir) / "compare";
    fs::create_directories(dir);

    const auto train = load_bags("train");
    eval::EvalSet set;
    set.bags = load_bags("test");
    const auto entries = motion::parse_manifest(
        io::read_text_file(fs::path(cfg_.out_dir) / "data" / "manifest_test.txt"),
        "manifest_test.txt");
    for (const auto& e : entries) set.frame_counts[e.id] = e.frame_count;
    set.masks = eval::read_masks_file(fs::path(cfg_.out_dir) / "data" / "masks.txt");

    mil::MilConfig base = cfg_.mil_cfg;
    base.schedule.seed = cfg_.stage_seed("compare");
    mil::MilConfig max_cfg = base;
    max_cfg.mode = mil::Mode::max;
    mil::MilConfig attn_cfg = base;
    attn_cfg.mode = mil::Mode::attention;
    const auto rows =
        eval::compare_modes(train, set, {{"max", max_cfg}, {"attention", attn_cfg}});

    std::string table;
    for (const auto& r : rows) table += r.name + "\t" + io::format_g9(r.roc.auc) + "\n";
    table += "delta(attention-max)\t" + io::format_g9(rows[1].roc.auc - rows[0].roc.auc) + "\n";
    io::atomic_write_file(dir / "comparison.txt", table);
    std::vector<eval::RunResult> results;
    for (const auto& r : rows) results.push_back({r.name, r.roc});
    io::atomic_write_file(dir / "roc.svg", eval::render_roc_svg(results));
    std::cout << table;

    finish_stage("compare", {dir / "comparison.txt", dir / "roc.svg"}, elapsed_since(t0));
}

}  // namespace flowmil::pipeline
