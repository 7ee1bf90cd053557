#include "flowmil/tan/tan.hpp"

#include "flowmil/util/error.hpp"
#include "flowmil/util/io.hpp"

namespace flowmil::tan {

namespace {
constexpr char kFeatureMagic[4] = {'F', 'M', 'F', 'T'};
constexpr std::uint16_t kFeatureVersion = 1;
}  // namespace

void TanConfig::validate() const {
    if (in_channels <= 0) throw Error("config", "tan: input channels must be positive");
    if (height < 8 || width < 8 || height % 8 != 0 || width % 8 != 0)
        throw Error("config", "tan: spatial size must be a positive multiple of 8, got " +
                                  std::to_string(height) + "x" + std::to_string(width));
    for (int w : enc_widths)
        if (w <= 0) throw Error("config", "tan: encoder widths must be positive");
    if (bottleneck_channels <= 0) throw Error("config", "tan: bottleneck width must be positive");
    if (enc_kernel < 1 || enc_kernel % 2 == 0)
        throw Error("config", "tan: encoder kernel must be odd");
    if (dec_kernel < 2 || dec_kernel % 2 != 0)
        throw Error("config", "tan: decoder kernel must be even");
    schedule.validate();
}

TrainResult train_tan(const std::vector<nn::Tensor>& stacks, const TanConfig& cfg,
                      const TrainOptions& opts) {
    cfg.validate();
    if (stacks.empty()) throw Error("data", "train_tan: empty dataset");
    for (const auto& s : stacks)
        if (s.rank != 3 || s.dim(0) != cfg.in_channels || s.dim(1) != cfg.height ||
            s.dim(2) != cfg.width)
            throw Error("shape", "train_tan: stack " + s.shape_str() + " does not match config");

    TrainResult result;
    result.net.cfg = cfg;
    RngStream init_rng(splitmix64(cfg.schedule.seed ^ 0x7a6e5d4c3b2a1908ull));
    result.net.init(init_rng);
    RngStream sample_rng(splitmix64(cfg.schedule.seed ^ 0x1f2e3d4c5b6a7988ull));

    const int batch = cfg.schedule.batch_size;
    nn::Tensor batch_in({batch, cfg.in_channels, cfg.height, cfg.width});
    const std::size_t sample = static_cast<std::size_t>(cfg.in_channels) * cfg.height * cfg.width;

    for (int step = 0; step < cfg.schedule.total_steps; ++step) {
        for (int b = 0; b < batch; ++b) {
            const auto idx = sample_rng.uniform_int(stacks.size());
            std::copy(stacks[idx].v.begin(), stacks[idx].v.end(),
                      batch_in.v.begin() + static_cast<std::ptrdiff_t>(b * sample));
        }
        auto acts = result.net.forward(batch_in);
        const double loss = recon_loss(batch_in, acts.recon);
        auto drecon = recon_loss_backward(batch_in, acts.recon);
        auto grads = result.net.backward(acts, drecon);

        const auto lr = static_cast<float>(cfg.schedule.lr_at(step));
        auto update = [&](nn::LayerParams& p, const nn::LayerGradsT<float>& g) {
            nn::adagrad_step(p, g, lr);
        };
        for (int i = 0; i < 3; ++i) {
            update(result.net.enc[static_cast<std::size_t>(i)], grads.enc[static_cast<std::size_t>(i)]);
            update(result.net.dec[static_cast<std::size_t>(i)], grads.dec[static_cast<std::size_t>(i)]);
        }
        update(result.net.bottleneck, grads.bottleneck);

        result.loss_history.push_back(loss);
        if (opts.on_step) opts.on_step(step, loss);
        if (!opts.checkpoint_dir.empty()) {
            for (int m : cfg.schedule.milestones) {
                if (step + 1 == m)
                    save_tan_checkpoint(opts.checkpoint_dir /
                                            ("checkpoint_step_" + std::to_string(m) + ".fmnn"),
                                        result.net);
            }
        }
        if (opts.stop_below > 0.0 && loss < opts.stop_below) break;
    }
    if (!opts.checkpoint_dir.empty())
        save_tan_checkpoint(opts.checkpoint_dir / "checkpoint.fmnn", result.net);
    return result;
}

void save_tan_checkpoint(const std::filesystem::path& path, TanNet& net) {
    std::vector<std::pair<std::string, const nn::LayerParams*>> layers;
    for (auto& [name, p] : net.layers()) layers.emplace_back(name, p);
    nn::save_checkpoint(path, layers);
}

TanNet load_tan_checkpoint(const std::filesystem::path& path) {
    const auto layers = nn::load_checkpoint(path);
    TanNet net;
    net.enc[0] = nn::find_layer(layers, "enc1");
    net.enc[1] = nn::find_layer(layers, "enc2");
    net.enc[2] = nn::find_layer(layers, "enc3");
    net.bottleneck = nn::find_layer(layers, "bottleneck");
    net.dec[0] = nn::find_layer(layers, "dec1");
    net.dec[1] = nn::find_layer(layers, "dec2");
    net.dec[2] = nn::find_layer(layers, "dec3");
    // geometry comes from the stored shapes; spatial size is free
    net.cfg.in_channels = net.enc[0].w.dim(1);
    net.cfg.enc_widths = {net.enc[0].w.dim(0), net.enc[1].w.dim(0), net.enc[2].w.dim(0)};
    net.cfg.bottleneck_channels = net.bottleneck.w.dim(0);
    net.cfg.enc_kernel = net.enc[0].w.dim(2);
    net.cfg.dec_kernel = net.dec[0].w.dim(2);
    net.cfg.height = 0;
    net.cfg.width = 0;
    return net;
}

void write_feature_file(const std::filesystem::path& path,
                        const std::vector<MotionFeature>& features) {
    io::ByteWriter w;
    w.bytes(kFeatureMagic, 4);
    w.u16(kFeatureVersion);
    for (const auto& f : features) {
        w.str(f.clip_id);
        w.u32(static_cast<std::uint32_t>(f.values.size()));
        w.f32_array(f.values.data(), f.values.size());
    }
    io::atomic_write_file(path, w);
}

std::vector<MotionFeature> read_feature_file(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes.data(), bytes.size(), path.string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(kFeatureMagic, 4))
        throw Error("format", path.string() + ": not a FMFT feature file (bad magic)");
    if (r.u16() != kFeatureVersion)
        throw Error("format", path.string() + ": unsupported FMFT version");
    std::vector<MotionFeature> out;
    while (!r.at_end()) {
        MotionFeature f;
        f.clip_id = r.str();
        f.values.resize(r.u32());
        r.f32_array(f.values.data(), f.values.size());
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace flowmil::tan
