#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "flowmil/motion/video.hpp"
#include "flowmil/nn/tensor.hpp"

namespace flowmil::motion {

inline constexpr int kClipFrames = 16;
inline constexpr int kFlowChannels = 2 * (kClipFrames - 1);  // 30

/// Flow clipping/scaling applied before the autoencoder sees a stack: values
/// are clipped to +-kFlowClip pixels and divided by it, landing in [-1, 1].
inline constexpr float kFlowClip = 16.0f;

struct BlockMatchConfig {
    int block = 8;
    int radius = 7;
};

/// One 16-frame clip's motion input: 15 two-channel flow maps stacked into a
/// (30, h, w) tensor. Channel 2i is horizontal displacement of frame pair i,
/// channel 2i+1 vertical, in pixels per frame.
struct FlowStack {
    std::string video_id;
    int frame_begin = 0;
    nn::Tensor t;

    std::string clip_id() const { return video_id + "#" + std::to_string(frame_begin); }
};

/// Per-block integer displacement minimizing the sum of absolute differences,
/// broadcast to pixels. Ties break by smallest displacement magnitude, then
/// lexicographic (dy, dx). Returns a (2, h, w) tensor: horizontal channel
/// first.
nn::Tensor block_matching_flow(const Image& prev, const Image& next, const BlockMatchConfig& cfg);

/// Stacks the 15 adjacent-pair flow maps of exactly 16 same-sized frames.
FlowStack build_flow_stack(const std::vector<Image>& frames, const BlockMatchConfig& cfg,
                           const std::string& video_id = "", int frame_begin = 0);

/// Clips to +-kFlowClip px and scales into [-1, 1] for the autoencoder.
nn::Tensor normalize_stack(const nn::Tensor& raw);

/// FMFL flow file (see docs/formats.md). Round-trips are bitwise exact.
void write_flow_file(const std::filesystem::path& path, const FlowStack& stack);
FlowStack read_flow_file(const std::filesystem::path& path);

}  // namespace flowmil::motion
