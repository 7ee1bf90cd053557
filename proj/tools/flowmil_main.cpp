#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flowmil/eval/eval.hpp"
#include "flowmil/pipeline/pipeline.hpp"
#include "flowmil/util/error.hpp"
#include "flowmil/util/io.hpp"

namespace fs = std::filesystem;
using namespace flowmil;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

pipeline::PipelineConfig resolve_config(const GlobalArgs& args) {
    pipeline::PipelineConfig cfg;
    if (!args.config_path.empty()) {
        std::vector<std::string> errors;
        cfg = pipeline::parse_config_text(io::read_text_file(args.config_path), args.config_path,
                                          errors);
        if (!errors.empty()) {
            std::string msg = "invalid config:";
            for (const auto& e : errors) msg += "\n  - " + e;
            throw Error("config", msg);
        }
    } else if (!args.preset.empty()) {
        cfg = pipeline::preset_config(args.preset);
    } else {
        cfg = pipeline::preset_config("desk");
    }
    if (!args.preset.empty() && !args.config_path.empty() && cfg.preset != args.preset)
        throw Error("config", "--preset disagrees with the preset in " + args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    return cfg;
}

int run_roc_only(const std::string& scores_path, const std::string& truth_path,
                 const std::string& out_dir) {
    const auto scores =
        eval::parse_frame_scores(io::read_text_file(scores_path), scores_path);
    const auto masks = eval::read_masks_file(truth_path);
    std::vector<float> pooled;
    std::vector<std::uint8_t> truth;
    for (const auto& fs_ : scores) {
        const auto it = masks.find(fs_.video_id);
        if (it == masks.end())
            throw Error("data", "no ground-truth mask for video " + fs_.video_id);
        if (it->second.size() != fs_.scores.size())
            throw Error("data", "mask/scores length mismatch for video " + fs_.video_id);
        pooled.insert(pooled.end(), fs_.scores.begin(), fs_.scores.end());
        truth.insert(truth.end(), it->second.begin(), it->second.end());
    }
    const auto roc = eval::roc_auc(pooled, truth);
    eval::emit_report({{"eval", roc}}, out_dir);
    std::cout << "eval\tauc\t" << io::format_g9(roc.auc) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowmil: motion-aware video anomaly detection pipeline"};
    app.require_subcommand(1);

    GlobalArgs args;
    app.add_option("--config", args.config_path, "pipeline config file");
    app.add_option("--preset", args.preset, "baseline preset: desk or paper");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "global seed");
    app.add_option("--out-dir", args.out_dir, "pipeline output directory");

    std::string eval_scores, eval_truth, eval_out;
    std::string mil_mode;
    double mil_lambda1 = -1.0;
    int mil_segments = 0;
    int tan_steps = 0;

    auto* c_generate = app.add_subcommand("generate", "generate the synthetic dataset");
    auto* c_train_tan = app.add_subcommand("train-tan", "train the flow autoencoder");
    c_train_tan->add_option("--steps", tan_steps, "override training steps");
    auto* c_extract = app.add_subcommand("extract", "extract motion-aware features");
    auto* c_build_bags = app.add_subcommand("build-bags", "assemble bag manifests");
    auto* c_train_mil = app.add_subcommand("train-mil", "train the MIL ranking model");
    c_train_mil->add_option("--mode", mil_mode, "ranking mode: max or attention");
    c_train_mil->add_option("--lambda1", mil_lambda1, "sparsity weight");
    c_train_mil->add_option("--segments", mil_segments, "segments per bag");
    auto* c_eval = app.add_subcommand("eval", "frame-level ROC/AUC evaluation");
    c_eval->add_option("--scores", eval_scores, "standalone mode: frame scores CSV");
    c_eval->add_option("--truth", eval_truth, "standalone mode: ground-truth masks file");
    c_eval->add_option("--out-dir", eval_out, "standalone mode: report directory");
    auto* c_compare = app.add_subcommand("compare", "max vs attention comparison");
    auto* c_run_all = app.add_subcommand("run-all", "generate through eval");

    CLI11_PARSE(app, argc, argv);
    if (seed_opt->count() > 0) args.seed = seed_value;

    try {
        if (c_eval->parsed() && !eval_scores.empty()) {
            if (eval_truth.empty())
                throw Error("usage", "eval --scores needs --truth");
            return run_roc_only(eval_scores, eval_truth,
                                eval_out.empty() ? "roc_report" : eval_out);
        }

        pipeline::PipelineConfig cfg = resolve_config(args);
        if (c_train_tan->parsed() && tan_steps > 0) {
            cfg.tan_cfg.schedule.total_steps = tan_steps;
            cfg.tan_cfg.schedule.milestones.erase(
                std::remove_if(cfg.tan_cfg.schedule.milestones.begin(),
                               cfg.tan_cfg.schedule.milestones.end(),
                               [&](int m) { return m >= tan_steps; }),
                cfg.tan_cfg.schedule.milestones.end());
        }
        if (c_train_mil->parsed()) {
            if (!mil_mode.empty()) cfg.mil_cfg.mode = mil::mode_from_string(mil_mode);
            if (mil_lambda1 >= 0.0) cfg.mil_cfg.lambda1 = static_cast<float>(mil_lambda1);
            if (mil_segments > 0) cfg.mil_cfg.m = mil_segments;
        }

        pipeline::OutputLock lock(cfg.out_dir);
        pipeline::Pipeline pipe(std::move(cfg), /*verbose=*/true);
        if (c_generate->parsed()) pipe.generate();
        else if (c_train_tan->parsed()) pipe.train_tan();
        else if (c_extract->parsed()) pipe.extract();
        else if (c_build_bags->parsed()) pipe.build_bags();
        else if (c_train_mil->parsed()) pipe.train_mil();
        else if (c_eval->parsed()) pipe.evaluate();
        else if (c_compare->parsed()) pipe.compare();
        else if (c_run_all->parsed()) pipe.run_all();
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
        return e.code() == "usage" || e.code() == "config" ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 2;
    }
}
