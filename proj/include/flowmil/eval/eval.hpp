#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "flowmil/mil/mil.hpp"

namespace flowmil::eval {

struct FrameScores {
    std::string video_id;
    std::vector<float> scores;  // one per frame, in [0, 1]
};

struct RocCurve {
    std::vector<std::pair<double, double>> points;  // (fpr, tpr), (0,0) .. (1,1)
    double auc = 0.0;
};

/// Frame j receives the score of segment floor(j * m / frame_count). The
/// partition is exhaustive and non-overlapping for any frame count >= m >= 1.
std::vector<float> expand_scores(const std::vector<float>& segment_scores, int frame_count);

/// Threshold sweep over the distinct scores; equal scores are processed as one
/// step, so the trapezoidal AUC matches pair counting with half credit for
/// ties. Throws when labels are single-class.
RocCurve roc_auc(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels);

/// Ground-truth frame masks, written by the generator and readable only here:
/// training code has no API to these.
using FrameMasks = std::map<std::string, std::vector<std::uint8_t>>;

std::string format_masks(const FrameMasks& masks);
FrameMasks parse_masks(const std::string& text, const std::string& source);
void write_masks_file(const std::filesystem::path& path, const FrameMasks& masks);
FrameMasks read_masks_file(const std::filesystem::path& path);

/// Frame scores CSV: header "video_id,frame,score", 9 significant digits.
std::string format_frame_scores(const std::vector<FrameScores>& scores);
std::vector<FrameScores> parse_frame_scores(const std::string& text, const std::string& source);

/// One evaluated run: a named ROC curve.
struct RunResult {
    std::string name;
    RocCurve roc;
};

/// Writes roc_<name>.csv per run, summary.txt (name<TAB>auc) and roc.svg into
/// out_dir. All writes are atomic; empty results are an error and leave no
/// partial files.
void emit_report(const std::vector<RunResult>& results, const std::filesystem::path& out_dir);

std::string format_roc_csv(const RocCurve& roc);
RocCurve parse_roc_csv(const std::string& text, const std::string& source);

/// Self-contained SVG line plot of one or more ROC curves with a legend.
std::string render_roc_svg(const std::vector<RunResult>& results);

/// A labelled evaluation set: test bags plus per-video frame counts and
/// ground-truth masks.
struct EvalSet {
    std::vector<mil::Bag> bags;
    std::map<std::string, int> frame_counts;
    FrameMasks masks;
};

/// Pools frame scores over every video in the set and computes one curve.
RocCurve evaluate_model(const mil::MilModel& model, const EvalSet& set);

struct CompareRow {
    std::string name;
    RocCurve roc;
};

/// Trains one model per named config on identical data, evaluates each, and
/// reports per-config curves. Row order follows the config order.
std::vector<CompareRow> compare_modes(const std::vector<mil::Bag>& train_bags, const EvalSet& set,
                                      const std::vector<std::pair<std::string, mil::MilConfig>>& configs);

}  // namespace flowmil::eval
