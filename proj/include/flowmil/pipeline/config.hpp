#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowmil/mil/mil.hpp"
#include "flowmil/motion/flow.hpp"
#include "flowmil/motion/generate.hpp"
#include "flowmil/tan/tan.hpp"

namespace flowmil::pipeline {

/// Resolved configuration for the whole pipeline. Defaults mirror the "desk"
/// preset; the "paper" preset restores the published schedules and 112x112
/// inputs. See docs/config.md for the file grammar.
struct PipelineConfig {
    std::string preset = "desk";
    std::uint64_t seed = 7;
    std::string out_dir = "out";

    // [generate]
    int train_normal = 20;
    int train_anomalous = 20;
    int test_normal = 10;
    int test_anomalous = 10;
    int frames = 512;
    int height = 64;
    int width = 64;
    std::vector<motion::AnomalyKind> kinds{motion::AnomalyKind::burst,
                                           motion::AnomalyKind::reversal,
                                           motion::AnomalyKind::scatter};

    // [flow]
    motion::BlockMatchConfig block_match;

    // [tan]
    tan::TanConfig tan_cfg;
    int tan_pool_per_video = 8;  // aligned clips sampled per video for training

    // [mil]
    mil::MilConfig mil_cfg;

    void validate() const;

    /// Stage seeds derive from the global seed and the stage name.
    std::uint64_t stage_seed(const std::string& stage) const;

    /// Canonical text form; written next to the manifest so a run can be
    /// reproduced from its artifacts alone.
    std::string to_text() const;
};

/// Baseline config for a named preset ("desk" or "paper").
PipelineConfig preset_config(const std::string& preset);

/// Parses the sectioned key=value grammar over a preset baseline. Collects
/// every problem instead of stopping at the first.
PipelineConfig parse_config_text(const std::string& text, const std::string& source,
                                 std::vector<std::string>& errors);

/// parse + validate; throws with the full error list on failure.
PipelineConfig load_config(const std::string& text, const std::string& source);

}  // namespace flowmil::pipeline
