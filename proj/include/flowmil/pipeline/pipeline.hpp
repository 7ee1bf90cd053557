#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "flowmil/pipeline/config.hpp"

namespace flowmil::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exclusive ownership of an output directory via a lock file.
class OutputLock {
public:
    explicit OutputLock(const std::filesystem::path& out_dir);
    ~OutputLock();
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    std::filesystem::path path_;
};

/// Runs pipeline stages against an output directory, recording artifact
/// digests in manifest.json and validating upstream artifacts before each
/// stage. Stage names: generate, train-tan, extract, build-bags, train-mil,
/// eval, compare; run-all chains generate through eval.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg, bool verbose = false);

    void run_stage(const std::string& name);
    void run_all();

    void generate();
    void train_tan();
    void extract();
    void build_bags();
    void train_mil();
    void evaluate();
    void compare();

    const PipelineConfig& config() const { return cfg_; }
    std::filesystem::path out_dir() const { return cfg_.out_dir; }

    static const std::vector<std::string>& stage_names();

private:
    struct StageRun;

    void require_stage(const std::string& current, const std::string& upstream) const;
    void finish_stage(const std::string& name, const std::vector<std::filesystem::path>& artifacts,
                      double seconds);
    void check_config_snapshot();
    void log(const std::string& msg) const;

    std::vector<motion::SyntheticVideo> load_videos(const std::string& which) const;
    std::vector<mil::Bag> load_bags(const std::string& which) const;

    PipelineConfig cfg_;
    bool verbose_;
};

}  // namespace flowmil::pipeline
