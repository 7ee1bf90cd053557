#include "flowmil/motion/video.hpp"

#include <sstream>

#include "flowmil/util/error.hpp"
#include "flowmil/util/io.hpp"

namespace flowmil::motion {

namespace {
constexpr char kMagic[4] = {'F', 'M', 'V', 'D'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

void write_video_file(const std::filesystem::path& path, const SyntheticVideo& video) {
    io::ByteWriter w;
    w.bytes(kMagic, 4);
    w.u16(kVersion);
    w.str(video.id);
    w.u8(video.anomalous ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(video.frames.size()));
    w.u32(static_cast<std::uint32_t>(video.height()));
    w.u32(static_cast<std::uint32_t>(video.width()));
    for (const auto& f : video.frames) w.bytes(f.px.data(), f.px.size());
    io::atomic_write_file(path, w);
}

SyntheticVideo read_video_file(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes.data(), bytes.size(), path.string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(kMagic, 4))
        throw Error("format", path.string() + ": not a FMVD video file (bad magic)");
    if (r.u16() != kVersion) throw Error("format", path.string() + ": unsupported FMVD version");
    SyntheticVideo v;
    v.id = r.str();
    v.anomalous = r.u8() != 0;
    const int n = static_cast<int>(r.u32());
    const int h = static_cast<int>(r.u32());
    const int w = static_cast<int>(r.u32());
    v.frames.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Image f(h, w);
        r.bytes(f.px.data(), f.px.size());
        v.frames.push_back(std::move(f));
    }
    if (!r.at_end()) throw Error("format", path.string() + ": trailing bytes");
    return v;
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
    std::string out;
    for (const auto& e : entries) {
        out += e.id;
        out += '\t';
        out += e.anomalous ? "anomalous" : "normal";
        out += '\t';
        out += std::to_string(e.frame_count);
        out += '\t';
        out += e.path;
        out += '\n';
    }
    return out;
}

std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::string& source) {
    std::vector<ManifestEntry> entries;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string label, count;
        if (!std::getline(ls, e.id, '\t') || !std::getline(ls, label, '\t') ||
            !std::getline(ls, count, '\t') || !std::getline(ls, e.path))
            throw Error("format", source + ":" + std::to_string(lineno) + ": malformed manifest line");
        if (label != "normal" && label != "anomalous")
            throw Error("format", source + ":" + std::to_string(lineno) + ": bad label '" + label + "'");
        e.anomalous = label == "anomalous";
        e.frame_count = std::stoi(count);
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace flowmil::motion
