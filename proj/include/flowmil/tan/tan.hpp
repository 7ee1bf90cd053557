#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "flowmil/nn/checkpoint.hpp"
#include "flowmil/nn/layers.hpp"

namespace flowmil::tan {

/// Seven-layer flow autoencoder: 3 stride-2 encoder convs, 1 stride-1
/// bottleneck conv, 3 stride-2 transposed decoder convs. All layers are
/// followed by ReLU except the last decoder layer, which is identity so the
/// reconstruction can match signed flow targets.
struct TanConfig {
    int in_channels = 30;
    int height = 64;
    int width = 64;
    std::array<int, 3> enc_widths{64, 128, 256};
    int bottleneck_channels = 1024;
    int enc_kernel = 3;  // stride 2, padding 1 in the encoder; stride 1 at the bottleneck
    int dec_kernel = 4;  // stride 2, padding 1: exactly doubles resolution
    /// Hidden decoder activation. ReLU decoders can die wholesale on sparse
    /// integer flow (every unit stuck at zero with no gradient); tanh has no
    /// absorbing state, so the desk preset uses it.
    nn::Act dec_hidden_act = nn::Act::relu;
    /// Encoder/bottleneck ReLU biases start here; slightly positive keeps
    /// units alive early on mostly-zero inputs.
    float relu_bias_init = 0.0f;
    nn::TrainSchedule schedule{0.005, 5000, {2500, 4000}, 8, 1};

    void validate() const;
    int bottleneck_h() const { return height / 8; }
    int bottleneck_w() const { return width / 8; }
    int enc_pad() const { return enc_kernel / 2; }        // preserves size up to stride
    int dec_pad() const { return (dec_kernel - 2) / 2; }  // exact doubling at stride 2
};

template <typename T>
struct TanNetT {
    TanConfig cfg;
    std::array<nn::LayerParamsT<T>, 3> enc;
    nn::LayerParamsT<T> bottleneck;
    std::array<nn::LayerParamsT<T>, 3> dec;

    /// Post-activation values kept for the backward pass.
    struct Acts {
        nn::TensorT<T> input;
        std::array<nn::TensorT<T>, 3> e;
        nn::TensorT<T> bn;
        std::array<nn::TensorT<T>, 2> d;
        nn::TensorT<T> recon;
    };

    void init(RngStream& rng) {
        const int k = cfg.enc_kernel, dk = cfg.dec_kernel;
        int c = cfg.in_channels;
        for (int i = 0; i < 3; ++i) {
            enc[static_cast<std::size_t>(i)] = nn::conv_params<T>(cfg.enc_widths[static_cast<std::size_t>(i)], c, k);
            nn::init_glorot(enc[static_cast<std::size_t>(i)], c * k * k,
                            cfg.enc_widths[static_cast<std::size_t>(i)] * k * k, rng);
            c = cfg.enc_widths[static_cast<std::size_t>(i)];
        }
        bottleneck = nn::conv_params<T>(cfg.bottleneck_channels, c, k);
        nn::init_glorot(bottleneck, c * k * k, cfg.bottleneck_channels * k * k, rng);
        const std::array<int, 3> dec_out{cfg.enc_widths[1], cfg.enc_widths[0], cfg.in_channels};
        c = cfg.bottleneck_channels;
        for (int i = 0; i < 3; ++i) {
            dec[static_cast<std::size_t>(i)] = nn::deconv_params<T>(c, dec_out[static_cast<std::size_t>(i)], dk);
            nn::init_glorot(dec[static_cast<std::size_t>(i)], c * dk * dk,
                            dec_out[static_cast<std::size_t>(i)] * dk * dk, rng);
            c = dec_out[static_cast<std::size_t>(i)];
        }
        if (cfg.relu_bias_init != 0.0f) {
            for (auto* layer : {&enc[0], &enc[1], &enc[2], &bottleneck})
                std::fill(layer->b.v.begin(), layer->b.v.end(), static_cast<T>(cfg.relu_bias_init));
        }
    }

    void check_input(const nn::TensorT<T>& x) const {
        const int rank_off = x.rank == 4 ? 1 : 0;
        const bool spatial_ok =
            cfg.height == 0 ||
            (x.dim(rank_off + 1) == cfg.height && x.dim(rank_off + 2) == cfg.width);
        if ((x.rank != 3 && x.rank != 4) || x.dim(rank_off) != cfg.in_channels || !spatial_ok)
            throw Error("shape", "tan: input " + x.shape_str() + " does not match config (" +
                                     std::to_string(cfg.in_channels) + "x" +
                                     std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                                     ")");
    }

    /// Encoder and bottleneck only; what feature extraction runs.
    nn::TensorT<T> bottleneck_forward(const nn::TensorT<T>& x) const {
        check_input(x);
        nn::TensorT<T> a = x;
        for (const auto& layer : enc)
            a = nn::activation(nn::conv2d_forward(a, layer, 2, cfg.enc_pad()), nn::Act::relu);
        return nn::activation(nn::conv2d_forward(a, bottleneck, 1, cfg.enc_pad()), nn::Act::relu);
    }

    Acts forward(const nn::TensorT<T>& x) const {
        check_input(x);
        Acts acts;
        acts.input = x;
        nn::TensorT<T> a = x;
        for (int i = 0; i < 3; ++i) {
            a = nn::activation(
                nn::conv2d_forward(a, enc[static_cast<std::size_t>(i)], 2, cfg.enc_pad()),
                nn::Act::relu);
            acts.e[static_cast<std::size_t>(i)] = a;
        }
        a = nn::activation(nn::conv2d_forward(a, bottleneck, 1, cfg.enc_pad()), nn::Act::relu);
        acts.bn = a;
        for (int i = 0; i < 2; ++i) {
            a = nn::activation(
                nn::deconv2d_forward(a, dec[static_cast<std::size_t>(i)], 2, cfg.dec_pad()),
                cfg.dec_hidden_act);
            acts.d[static_cast<std::size_t>(i)] = a;
        }
        acts.recon = nn::deconv2d_forward(a, dec[2], 2, cfg.dec_pad());  // identity output
        return acts;
    }

    struct Grads {
        std::array<nn::LayerGradsT<T>, 3> enc;
        nn::LayerGradsT<T> bottleneck;
        std::array<nn::LayerGradsT<T>, 3> dec;

        void zero_like(const TanNetT& net) {
            for (int i = 0; i < 3; ++i) {
                enc[static_cast<std::size_t>(i)].zero_like(net.enc[static_cast<std::size_t>(i)]);
                dec[static_cast<std::size_t>(i)].zero_like(net.dec[static_cast<std::size_t>(i)]);
            }
            bottleneck.zero_like(net.bottleneck);
        }

        void accumulate(const Grads& o) {
            auto add = [](nn::LayerGradsT<T>& a, const nn::LayerGradsT<T>& b) {
                for (std::size_t i = 0; i < a.dw.v.size(); ++i) a.dw.v[i] += b.dw.v[i];
                for (std::size_t i = 0; i < a.db.v.size(); ++i) a.db.v[i] += b.db.v[i];
            };
            for (int i = 0; i < 3; ++i) {
                add(enc[static_cast<std::size_t>(i)], o.enc[static_cast<std::size_t>(i)]);
                add(dec[static_cast<std::size_t>(i)], o.dec[static_cast<std::size_t>(i)]);
            }
            add(bottleneck, o.bottleneck);
        }

        void scale(T s) {
            auto mul = [s](nn::LayerGradsT<T>& a) {
                for (auto& v : a.dw.v) v *= s;
                for (auto& v : a.db.v) v *= s;
            };
            for (int i = 0; i < 3; ++i) {
                mul(enc[static_cast<std::size_t>(i)]);
                mul(dec[static_cast<std::size_t>(i)]);
            }
            mul(bottleneck);
        }
    };

    Grads backward(const Acts& acts, const nn::TensorT<T>& drecon) const {
        const int ep = cfg.enc_pad(), dp = cfg.dec_pad();
        Grads g;
        auto back = nn::deconv2d_backward(acts.d[1], dec[2], 2, dp, drecon);
        g.dec[2] = back.grads;
        nn::TensorT<T> da = nn::activation_backward(acts.d[1], back.dx, cfg.dec_hidden_act);
        back = nn::deconv2d_backward(acts.d[0], dec[1], 2, dp, da);
        g.dec[1] = back.grads;
        da = nn::activation_backward(acts.d[0], back.dx, cfg.dec_hidden_act);
        back = nn::deconv2d_backward(acts.bn, dec[0], 2, dp, da);
        g.dec[0] = back.grads;
        da = nn::activation_backward(acts.bn, back.dx, nn::Act::relu);
        back = nn::conv2d_backward(acts.e[2], bottleneck, 1, ep, da);
        g.bottleneck = back.grads;
        da = nn::activation_backward(acts.e[2], back.dx, nn::Act::relu);
        back = nn::conv2d_backward(acts.e[1], enc[2], 2, ep, da);
        g.enc[2] = back.grads;
        da = nn::activation_backward(acts.e[1], back.dx, nn::Act::relu);
        back = nn::conv2d_backward(acts.e[0], enc[1], 2, ep, da);
        g.enc[1] = back.grads;
        da = nn::activation_backward(acts.e[0], back.dx, nn::Act::relu);
        back = nn::conv2d_backward(acts.input, enc[0], 2, ep, da);
        g.enc[0] = back.grads;
        return g;
    }

    std::vector<std::pair<std::string, nn::LayerParamsT<T>*>> layers() {
        return {{"enc1", &enc[0]},       {"enc2", &enc[1]}, {"enc3", &enc[2]},
                {"bottleneck", &bottleneck}, {"dec1", &dec[0]}, {"dec2", &dec[1]},
                {"dec3", &dec[2]}};
    }
};

using TanNet = TanNetT<float>;

/// Mean absolute error between input and reconstruction, accumulated in
/// double.
template <typename T>
double recon_loss(const nn::TensorT<T>& input, const nn::TensorT<T>& recon) {
    nn::check_same_shape(input, recon, "recon_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < input.v.size(); ++i)
        acc += std::abs(static_cast<double>(recon.v[i]) - static_cast<double>(input.v[i]));
    return acc / static_cast<double>(input.v.size());
}

/// d recon_loss / d recon: sign(recon - input) / numel.
template <typename T>
nn::TensorT<T> recon_loss_backward(const nn::TensorT<T>& input, const nn::TensorT<T>& recon) {
    nn::check_same_shape(input, recon, "recon_loss backward");
    nn::TensorT<T> d = recon;
    const T scale = T(1) / static_cast<T>(input.v.size());
    for (std::size_t i = 0; i < d.v.size(); ++i) {
        const T diff = recon.v[i] - input.v[i];
        d.v[i] = diff > T(0) ? scale : (diff < T(0) ? -scale : T(0));
    }
    return d;
}

/// (reconstruction, bottleneck activations) for one stack.
template <typename T>
std::pair<nn::TensorT<T>, nn::TensorT<T>> tan_forward(const nn::TensorT<T>& stack,
                                                      const TanNetT<T>& net) {
    auto acts = net.forward(stack);
    return {std::move(acts.recon), std::move(acts.bn)};
}

/// GAP of the bottleneck activations; never touches the decoder.
template <typename T>
std::vector<T> extract_feature(const nn::TensorT<T>& stack, const TanNetT<T>& net) {
    const auto pooled = nn::global_average_pool(net.bottleneck_forward(stack));
    return pooled.v;
}

struct MotionFeature {
    std::string clip_id;
    std::vector<float> values;
};

struct TrainResult {
    TanNet net;
    std::vector<double> loss_history;
};

struct TrainOptions {
    /// When set, checkpoints are written here at each milestone and at the end.
    std::filesystem::path checkpoint_dir;
    std::function<void(int, double)> on_step;  // optional progress hook
    /// Stop early once the running loss drops below this (0 disables).
    double stop_below = 0.0;
};

/// Trains the autoencoder on normalized stacks with Adagrad; deterministic
/// under the schedule seed.
TrainResult train_tan(const std::vector<nn::Tensor>& stacks, const TanConfig& cfg,
                      const TrainOptions& opts = {});

void save_tan_checkpoint(const std::filesystem::path& path, TanNet& net);
TanNet load_tan_checkpoint(const std::filesystem::path& path);

/// FMFT feature file (see docs/formats.md).
void write_feature_file(const std::filesystem::path& path,
                        const std::vector<MotionFeature>& features);
std::vector<MotionFeature> read_feature_file(const std::filesystem::path& path);

}  // namespace flowmil::tan
