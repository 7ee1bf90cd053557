#include "flowmil/motion/flow.hpp"

#include <algorithm>
#include <cstdint>

#include "flowmil/util/error.hpp"
#include "flowmil/util/io.hpp"

namespace flowmil::motion {

namespace {

constexpr char kMagic[4] = {'F', 'M', 'F', 'L'};
constexpr std::uint16_t kVersion = 1;

std::uint32_t block_sad(const Image& prev, const Image& next, int y0, int x0, int bh, int bw,
                        int dy, int dx) {
    std::uint32_t sad = 0;
    for (int y = 0; y < bh; ++y) {
        const std::uint8_t* a = prev.px.data() + static_cast<std::size_t>(y0 + y) * prev.w + x0;
        const std::uint8_t* b =
            next.px.data() + static_cast<std::size_t>(y0 + y + dy) * next.w + x0 + dx;
        for (int x = 0; x < bw; ++x) {
            const int d = static_cast<int>(a[x]) - static_cast<int>(b[x]);
            sad += static_cast<std::uint32_t>(d < 0 ? -d : d);
        }
    }
    return sad;
}

}  // namespace

nn::Tensor block_matching_flow(const Image& prev, const Image& next, const BlockMatchConfig& cfg) {
    if (prev.h != next.h || prev.w != next.w)
        throw Error("shape", "block matching: image sizes differ (" + std::to_string(prev.h) +
                                 "x" + std::to_string(prev.w) + " vs " + std::to_string(next.h) +
                                 "x" + std::to_string(next.w) + ")");
    if (cfg.block <= 0 || cfg.radius < 0) throw Error("config", "invalid block matching config");
    const int h = prev.h, w = prev.w;
    nn::Tensor flow({2, h, w});
    for (int y0 = 0; y0 < h; y0 += cfg.block) {
        const int bh = std::min(cfg.block, h - y0);
        for (int x0 = 0; x0 < w; x0 += cfg.block) {
            const int bw = std::min(cfg.block, w - x0);
            int best_dy = 0, best_dx = 0, best_mag = 0;
            std::uint32_t best_sad = block_sad(prev, next, y0, x0, bh, bw, 0, 0);
            for (int dy = -cfg.radius; dy <= cfg.radius; ++dy) {
                if (y0 + dy < 0 || y0 + dy + bh > h) continue;
                for (int dx = -cfg.radius; dx <= cfg.radius; ++dx) {
                    if (x0 + dx < 0 || x0 + dx + bw > w) continue;
                    if (dy == 0 && dx == 0) continue;
                    const std::uint32_t sad = block_sad(prev, next, y0, x0, bh, bw, dy, dx);
                    const int mag = dy * dy + dx * dx;
                    const bool better =
                        sad < best_sad ||
                        (sad == best_sad &&
                         (mag < best_mag ||
                          (mag == best_mag &&
                           (dy < best_dy || (dy == best_dy && dx < best_dx)))));
                    if (better) {
                        best_sad = sad;
                        best_dy = dy;
                        best_dx = dx;
                        best_mag = mag;
                    }
                }
            }
            for (int y = y0; y < y0 + bh; ++y)
                for (int x = x0; x < x0 + bw; ++x) {
                    flow(0, y, x) = static_cast<float>(best_dx);
                    flow(1, y, x) = static_cast<float>(best_dy);
                }
        }
    }
    return flow;
}

FlowStack build_flow_stack(const std::vector<Image>& frames, const BlockMatchConfig& cfg,
                           const std::string& video_id, int frame_begin) {
    if (static_cast<int>(frames.size()) != kClipFrames)
        throw Error("shape", "flow stack needs exactly " + std::to_string(kClipFrames) +
                                 " frames, got " + std::to_string(frames.size()));
    const int h = frames[0].h, w = frames[0].w;
    for (const auto& f : frames)
        if (f.h != h || f.w != w) throw Error("shape", "flow stack frames have mixed sizes");
    FlowStack stack;
    stack.video_id = video_id;
    stack.frame_begin = frame_begin;
    stack.t.resize({kFlowChannels, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i + 1 < kClipFrames; ++i) {
        const nn::Tensor f = block_matching_flow(frames[static_cast<std::size_t>(i)],
                                                 frames[static_cast<std::size_t>(i + 1)], cfg);
        std::copy(f.v.begin(), f.v.begin() + static_cast<std::ptrdiff_t>(plane),
                  stack.t.v.begin() + static_cast<std::ptrdiff_t>(2 * i * plane));
        std::copy(f.v.begin() + static_cast<std::ptrdiff_t>(plane), f.v.end(),
                  stack.t.v.begin() + static_cast<std::ptrdiff_t>((2 * i + 1) * plane));
    }
    return stack;
}

nn::Tensor normalize_stack(const nn::Tensor& raw) {
    nn::Tensor out = raw;
    for (auto& v : out.v) v = std::clamp(v, -kFlowClip, kFlowClip) / kFlowClip;
    return out;
}

void write_flow_file(const std::filesystem::path& path, const FlowStack& stack) {
    io::ByteWriter w;
    w.bytes(kMagic, 4);
    w.u16(kVersion);
    w.str(stack.clip_id());
    w.u32(static_cast<std::uint32_t>(stack.t.dim(0)));
    w.u32(static_cast<std::uint32_t>(stack.t.dim(1)));
    w.u32(static_cast<std::uint32_t>(stack.t.dim(2)));
    w.f32_array(stack.t.data(), stack.t.v.size());
    io::atomic_write_file(path, w);
}

FlowStack read_flow_file(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes.data(), bytes.size(), path.string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(kMagic, 4))
        throw Error("format", path.string() + ": not a FMFL flow file (bad magic)");
    if (r.u16() != kVersion) throw Error("format", path.string() + ": unsupported FMFL version");
    const std::string clip_id = r.str();
    const int c = static_cast<int>(r.u32());
    const int h = static_cast<int>(r.u32());
    const int w = static_cast<int>(r.u32());
    FlowStack stack;
    const auto hash = clip_id.rfind('#');
    if (hash == std::string::npos) {
        stack.video_id = clip_id;
        stack.frame_begin = 0;
    } else {
        stack.video_id = clip_id.substr(0, hash);
        stack.frame_begin = std::stoi(clip_id.substr(hash + 1));
    }
    stack.t.resize({c, h, w});
    r.f32_array(stack.t.data(), stack.t.v.size());
    if (!r.at_end()) throw Error("format", path.string() + ": trailing bytes");
    return stack;
}

}  // namespace flowmil::motion
