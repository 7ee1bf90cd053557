#include "flowmil/motion/generate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "flowmil/util/error.hpp"
#include "flowmil/util/rng.hpp"

namespace flowmil::motion {

namespace {

constexpr double kTau = 6.283185307179586;

struct MovingObject {
    Image texture;
    double x = 0, y = 0;    // top-left corner, sub-pixel
    double vx = 0, vy = 0;  // pixels per frame
    double normal_speed = 1.0;
    bool transient = false;  // scatter objects live only inside their interval
};

struct Interval {
    int begin = 0;
    int end = 0;  // exclusive
    AnomalyKind kind = AnomalyKind::burst;
};

Image make_background(int h, int w, RngStream& rng) {
    struct Wave {
        double fx, fy, phase, amp;
    };
    Wave waves[3];
    for (auto& wv : waves) {
        wv.fx = rng.uniform(0.01, 0.05);
        wv.fy = rng.uniform(0.01, 0.05);
        wv.phase = rng.uniform(0.0, kTau);
        wv.amp = rng.uniform(8.0, 16.0);
    }
    Image bg(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 118.0;
            for (const auto& wv : waves)
                v += wv.amp * std::sin(kTau * (wv.fx * x + wv.fy * y) + wv.phase);
            v += rng.uniform(-20.0, 20.0);
            bg.at(y, x) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    return bg;
}

MovingObject make_object(int h, int w, RngStream& rng, int min_size, int max_size) {
    MovingObject o;
    const int s = min_size + static_cast<int>(rng.uniform_int(
                                 static_cast<std::uint64_t>(max_size - min_size + 1)));
    o.texture = Image(s, s);
    for (auto& p : o.texture.px) p = static_cast<std::uint8_t>(rng.uniform_int(256));
    o.x = rng.uniform(0.0, static_cast<double>(w - s));
    o.y = rng.uniform(0.0, static_cast<double>(h - s));
    const double angle = rng.uniform(0.0, kTau);
    o.normal_speed = rng.uniform(0.5, 1.25);
    o.vx = std::cos(angle) * o.normal_speed;
    o.vy = std::sin(angle) * o.normal_speed;
    return o;
}

void bounce(MovingObject& o, int h, int w) {
    const int s = o.texture.h;
    if (o.x < 0) {
        o.x = -o.x;
        o.vx = -o.vx;
    }
    if (o.x > w - s) {
        o.x = 2.0 * (w - s) - o.x;
        o.vx = -o.vx;
    }
    if (o.y < 0) {
        o.y = -o.y;
        o.vy = -o.vy;
    }
    if (o.y > h - s) {
        o.y = 2.0 * (h - s) - o.y;
        o.vy = -o.vy;
    }
    o.x = std::clamp(o.x, 0.0, static_cast<double>(w - s));
    o.y = std::clamp(o.y, 0.0, static_cast<double>(h - s));
}

void blit(Image& frame, const MovingObject& o) {
    const int px = static_cast<int>(std::lround(o.x));
    const int py = static_cast<int>(std::lround(o.y));
    for (int y = 0; y < o.texture.h; ++y) {
        const int fy = py + y;
        if (fy < 0 || fy >= frame.h) continue;
        for (int x = 0; x < o.texture.w; ++x) {
            const int fx = px + x;
            if (fx < 0 || fx >= frame.w) continue;
            frame.at(fy, fx) = o.texture.at(y, x);
        }
    }
}

std::vector<Interval> plan_intervals(const GeneratorConfig& cfg, RngStream& rng) {
    const int frames = cfg.frames;
    // at least two full clips long, so most anomalous frames sit in clips that
    // are anomalous end to end
    const int min_len = frames >= 128 ? 32 : 16;
    const int max_len = std::max(min_len, frames / 4);
    const int gap = 16;
    const bool two = frames >= 160 && rng.bernoulli(0.7);
    auto pick_kind = [&] { return cfg.kinds[rng.uniform_int(cfg.kinds.size())]; };
    std::vector<Interval> out;
    if (!two) {
        const int len =
            min_len + static_cast<int>(rng.uniform_int(
                          static_cast<std::uint64_t>(std::min(max_len, frames / 2) - min_len + 1)));
        const int begin = static_cast<int>(rng.uniform_int(
            static_cast<std::uint64_t>(frames - len + 1)));
        out.push_back({begin, begin + len, pick_kind()});
        return out;
    }
    int len1 = min_len + static_cast<int>(rng.uniform_int(
                             static_cast<std::uint64_t>(max_len - min_len + 1)));
    int len2 = min_len + static_cast<int>(rng.uniform_int(
                             static_cast<std::uint64_t>(max_len - min_len + 1)));
    if (len1 + len2 > frames / 2) len2 = std::max(min_len, frames / 2 - len1);
    const int slack = frames - len1 - len2 - gap;
    const int begin1 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(slack + 1)));
    const int lo2 = begin1 + len1 + gap;
    const int begin2 =
        lo2 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(frames - len2 - lo2 + 1)));
    out.push_back({begin1, begin1 + len1, pick_kind()});
    out.push_back({begin2, begin2 + len2, pick_kind()});
    return out;
}

SyntheticVideo generate_video(const GeneratorConfig& cfg, const std::string& id, bool anomalous,
                              std::uint64_t seed) {
    RngStream rng(seed);
    const int h = cfg.height, w = cfg.width;
    SyntheticVideo video;
    video.id = id;
    video.anomalous = anomalous;
    video.mask.assign(static_cast<std::size_t>(cfg.frames), 0);

    const Image bg = make_background(h, w, rng);
    // the whole scene pans slowly (toroidal), so normal motion is a smooth
    // coherent texture rather than a static field
    const double pan_angle = rng.uniform(0.0, kTau);
    const double pan_speed = rng.uniform(0.4, 0.9);
    const double pan_vx = std::cos(pan_angle) * pan_speed;
    const double pan_vy = std::sin(pan_angle) * pan_speed;

    std::vector<MovingObject> objects;
    const int n_objects = 2 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < n_objects; ++i) objects.push_back(make_object(h, w, rng, 10, 16));

    std::vector<Interval> intervals;
    if (anomalous) {
        intervals = plan_intervals(cfg, rng);
        for (const auto& iv : intervals)
            for (int t = iv.begin; t < iv.end; ++t) video.mask[static_cast<std::size_t>(t)] = 1;
    }

    auto interval_at = [&](int t) -> const Interval* {
        for (const auto& iv : intervals)
            if (t >= iv.begin && t < iv.end) return &iv;
        return nullptr;
    };

    const Interval* active = nullptr;
    video.frames.reserve(static_cast<std::size_t>(cfg.frames));
    for (int t = 0; t < cfg.frames; ++t) {
        const Interval* iv = interval_at(t);
        if (iv != active) {
            if (iv == nullptr) {
                // interval ended: transient objects vanish, the rest resume drift
                objects.erase(std::remove_if(objects.begin(), objects.end(),
                                             [](const MovingObject& o) { return o.transient; }),
                              objects.end());
                for (auto& o : objects) {
                    const double n = std::hypot(o.vx, o.vy);
                    if (n > 1e-9) {
                        o.vx *= o.normal_speed / n;
                        o.vy *= o.normal_speed / n;
                    }
                }
            } else {
                switch (iv->kind) {
                    case AnomalyKind::burst:
                    case AnomalyKind::reversal: {
                        const double lo = iv->kind == AnomalyKind::burst ? 5.5 : 4.0;
                        const double hi = iv->kind == AnomalyKind::burst ? 7.0 : 6.0;
                        for (auto& o : objects) {
                            const double speed = rng.uniform(lo, hi);
                            const double angle =
                                std::atan2(o.vy, o.vx) + rng.uniform(-0.5, 0.5);
                            o.vx = std::cos(angle) * speed;
                            o.vy = std::sin(angle) * speed;
                        }
                        break;
                    }
                    case AnomalyKind::scatter: {
                        const double cx = rng.uniform(0.25 * w, 0.75 * w);
                        const double cy = rng.uniform(0.25 * h, 0.75 * h);
                        for (int j = 0; j < 8; ++j) {
                            MovingObject o = make_object(h, w, rng, 8, 10);
                            o.transient = true;
                            o.x = std::clamp(cx + rng.uniform(-6.0, 6.0), 0.0,
                                             static_cast<double>(w - o.texture.w));
                            o.y = std::clamp(cy + rng.uniform(-6.0, 6.0), 0.0,
                                             static_cast<double>(h - o.texture.h));
                            const double angle = kTau * j / 8.0 + rng.uniform(-0.2, 0.2);
                            const double speed = rng.uniform(4.5, 6.5);
                            o.vx = std::cos(angle) * speed;
                            o.vy = std::sin(angle) * speed;
                            objects.push_back(std::move(o));
                        }
                        break;
                    }
                }
            }
            active = iv;
        }

        if (iv != nullptr && iv->kind == AnomalyKind::reversal && (t - iv->begin) % 4 == 0 &&
            t != iv->begin) {
            for (auto& o : objects) {
                o.vx = -o.vx;
                o.vy = -o.vy;
            }
        }

        const int oy = static_cast<int>(std::lround(pan_vy * t));
        const int ox = static_cast<int>(std::lround(pan_vx * t));
        Image frame(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                frame.at(y, x) = bg.at(((y - oy) % h + h) % h, ((x - ox) % w + w) % w);
        for (const auto& o : objects) blit(frame, o);
        video.frames.push_back(std::move(frame));

        for (auto& o : objects) {
            if (iv == nullptr) {
                // slow coherent drift with slight heading jitter
                const double angle = std::atan2(o.vy, o.vx) + rng.uniform(-0.03, 0.03);
                const double speed = std::hypot(o.vx, o.vy);
                o.vx = std::cos(angle) * speed;
                o.vy = std::sin(angle) * speed;
            }
            o.x += o.vx;
            o.y += o.vy;
            bounce(o, h, w);
        }
    }
    return video;
}

}  // namespace

AnomalyKind anomaly_kind_from_string(const std::string& s) {
    if (s == "burst") return AnomalyKind::burst;
    if (s == "reversal") return AnomalyKind::reversal;
    if (s == "scatter") return AnomalyKind::scatter;
    throw Error("config", "unknown anomaly kind '" + s + "'");
}

std::string to_string(AnomalyKind k) {
    switch (k) {
        case AnomalyKind::burst: return "burst";
        case AnomalyKind::reversal: return "reversal";
        case AnomalyKind::scatter: return "scatter";
    }
    return "?";
}

void GeneratorConfig::validate() const {
    if (normal_count < 0 || anomalous_count < 0 || normal_count + anomalous_count == 0)
        throw Error("config", "generator: video counts must be non-negative and total positive");
    if (frames < 16) throw Error("config", "generator: frame count must be at least 16");
    if (anomalous_count > 0 && frames < 32)
        throw Error("config", "generator: anomalous videos need at least 32 frames");
    if (height < 24 || width < 24)
        throw Error("config", "generator: frame size must be at least 24x24");
    if (anomalous_count > 0 && kinds.empty())
        throw Error("config", "generator: at least one anomaly kind required");
}

std::vector<SyntheticVideo> generate_dataset(const GeneratorConfig& cfg) {
    cfg.validate();
    std::vector<SyntheticVideo> out;
    out.reserve(static_cast<std::size_t>(cfg.normal_count + cfg.anomalous_count));
    char buf[16];
    for (int i = 0; i < cfg.normal_count; ++i) {
        std::snprintf(buf, sizeof(buf), "n%03d", i);
        out.push_back(generate_video(cfg, cfg.id_prefix + buf, false,
                                     splitmix64(cfg.seed + static_cast<std::uint64_t>(i))));
    }
    for (int i = 0; i < cfg.anomalous_count; ++i) {
        std::snprintf(buf, sizeof(buf), "a%03d", i);
        out.push_back(generate_video(
            cfg, cfg.id_prefix + buf, true,
            splitmix64(cfg.seed + 0x10000ull + static_cast<std::uint64_t>(i))));
    }
    return out;
}

}  // namespace flowmil::motion
