#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace flowmil::motion {

/// 8-bit grayscale frame.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> px;

    Image() = default;
    Image(int height, int width) : h(height), w(width), px(static_cast<std::size_t>(height) * width, 0) {}

    std::uint8_t& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
};

struct SyntheticVideo {
    std::string id;
    bool anomalous = false;
    std::vector<Image> frames;
    /// Per-frame ground truth (1 = anomalous frame). Generator-internal; the
    /// training path never reads it — only the evaluator does, via the
    /// separate masks file.
    std::vector<std::uint8_t> mask;

    int frame_count() const { return static_cast<int>(frames.size()); }
    int height() const { return frames.empty() ? 0 : frames[0].h; }
    int width() const { return frames.empty() ? 0 : frames[0].w; }
};

/// FMVD video container (see docs/formats.md).
void write_video_file(const std::filesystem::path& path, const SyntheticVideo& video);
SyntheticVideo read_video_file(const std::filesystem::path& path);

struct ManifestEntry {
    std::string id;
    bool anomalous = false;
    int frame_count = 0;
    std::string path;
};

/// Line-oriented dataset manifest: id <TAB> label <TAB> frame_count <TAB> path.
std::string format_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::string& source);

}  // namespace flowmil::motion
