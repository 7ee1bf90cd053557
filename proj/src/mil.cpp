#include "flowmil/mil/mil.hpp"

#include "flowmil/util/error.hpp"

namespace flowmil::mil {

Mode mode_from_string(const std::string& s) {
    if (s == "max") return Mode::max;
    if (s == "attention") return Mode::attention;
    throw Error("config", "unknown MIL mode '" + s + "' (expected max or attention)");
}

std::string to_string(Mode m) { return m == Mode::max ? "max" : "attention"; }

void MilConfig::validate() const {
    if (m <= 0) throw Error("config", "mil: segment count m must be positive");
    if (lambda1 < 0.0f) throw Error("config", "mil: lambda1 must be non-negative");
    if (regressor_widths.back() != 1 || attention_widths.back() != 1)
        throw Error("config", "mil: regressor and attention widths must end in 1");
    for (int w : regressor_widths)
        if (w <= 0) throw Error("config", "mil: regressor widths must be positive");
    for (int w : attention_widths)
        if (w <= 0) throw Error("config", "mil: attention widths must be positive");
    if (dropout_rate < 0.0f || dropout_rate >= 1.0f)
        throw Error("config", "mil: dropout rate must be in [0, 1)");
    if (bags_per_side <= 0) throw Error("config", "mil: bags per side must be positive");
    schedule.validate();
}

nn::Tensor build_bag(const std::vector<std::vector<float>>& clip_features, int m) {
    if (clip_features.empty()) throw Error("data", "build_bag: no clip features");
    if (m <= 0) throw Error("config", "build_bag: m must be positive");
    const int n = static_cast<int>(clip_features.size());
    const int d = static_cast<int>(clip_features[0].size());
    for (const auto& f : clip_features)
        if (static_cast<int>(f.size()) != d)
            throw Error("shape", "build_bag: clip features have mixed dimensions");

    nn::Tensor bag({m, d});
    for (int g = 0; g < m; ++g) {
        std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
        int count = 0;
        if (n >= m) {
            const int lo = static_cast<int>(static_cast<long long>(g) * n / m);
            const int hi = static_cast<int>(static_cast<long long>(g + 1) * n / m);
            for (int i = lo; i < hi; ++i) {
                for (int j = 0; j < d; ++j)
                    acc[static_cast<std::size_t>(j)] += clip_features[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                ++count;
            }
        } else {
            // cyclic duplication: segment g holds clip g mod n
            const auto& src = clip_features[static_cast<std::size_t>(g % n)];
            for (int j = 0; j < d; ++j) acc[static_cast<std::size_t>(j)] = src[static_cast<std::size_t>(j)];
            count = 1;
        }
        double norm = 0.0;
        for (int j = 0; j < d; ++j) {
            acc[static_cast<std::size_t>(j)] /= count;
            norm += acc[static_cast<std::size_t>(j)] * acc[static_cast<std::size_t>(j)];
        }
        norm = std::sqrt(norm);
        const double inv = norm > 1e-12 ? 1.0 / norm : 0.0;
        for (int j = 0; j < d; ++j)
            bag(g, j) = static_cast<float>(acc[static_cast<std::size_t>(j)] * inv);
    }
    return bag;
}

std::vector<float> fuse_features(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.empty() && b.empty()) throw Error("data", "fuse_features: both inputs empty");
    std::vector<float> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    double norm = 0.0;
    for (float v : out) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    if (norm > 1e-12)
        for (auto& v : out) v = static_cast<float>(v / norm);
    return out;
}

MilTrainResult train_mil(const std::vector<Bag>& bags, const MilConfig& cfg,
                         const MilTrainOptions& opts) {
    cfg.validate();
    std::vector<int> pos_idx, neg_idx;
    for (int i = 0; i < static_cast<int>(bags.size()); ++i)
        (bags[static_cast<std::size_t>(i)].positive ? pos_idx : neg_idx).push_back(i);
    if (pos_idx.empty()) throw Error("data", "train_mil: no positive bags");
    if (neg_idx.empty()) throw Error("data", "train_mil: no negative bags");
    const int d = bags[0].d();
    for (const auto& b : bags) {
        if (b.m() != cfg.m)
            throw Error("shape", "train_mil: bag " + b.video_id + " has m=" +
                                     std::to_string(b.m()) + ", config says " +
                                     std::to_string(cfg.m));
        if (b.d() != d) throw Error("shape", "train_mil: bags have mixed feature dimensions");
    }

    MilTrainResult result;
    result.model.cfg = cfg;
    RngStream init_rng(splitmix64(cfg.schedule.seed ^ 0x5c4d3e2f1a0b9788ull));
    result.model.init(d, init_rng);
    RngStream sample_rng(splitmix64(cfg.schedule.seed ^ 0x8899aabbccddeeffull));
    RngStream dropout_rng(splitmix64(cfg.schedule.seed ^ 0x0f1e2d3c4b5a6978ull));

    const int per_side = cfg.bags_per_side;
    MilGradsT<float> grads;
    for (int step = 0; step < cfg.schedule.total_steps; ++step) {
        grads.zero_like(result.model);
        std::vector<int> ps(static_cast<std::size_t>(per_side)), ns(static_cast<std::size_t>(per_side));
        for (auto& i : ps) i = pos_idx[sample_rng.uniform_int(pos_idx.size())];
        for (auto& i : ns) i = neg_idx[sample_rng.uniform_int(neg_idx.size())];
        double loss = 0.0;
        for (int k = 0; k < per_side; ++k) {
            loss += pair_loss_and_grads(bags[static_cast<std::size_t>(ps[static_cast<std::size_t>(k)])].features,
                                        bags[static_cast<std::size_t>(ns[static_cast<std::size_t>(k)])].features,
                                        result.model, grads, /*training=*/true, &dropout_rng);
        }
        loss /= per_side;
        grads.scale(1.0f / static_cast<float>(per_side));
        const auto lr = static_cast<float>(cfg.schedule.lr_at(step));
        nn::adagrad_step(result.model.reg1, grads.reg1, lr);
        nn::adagrad_step(result.model.reg2, grads.reg2, lr);
        nn::adagrad_step(result.model.reg3, grads.reg3, lr);
        nn::adagrad_step(result.model.att1, grads.att1, lr);
        nn::adagrad_step(result.model.att2, grads.att2, lr);
        nn::adagrad_step(result.model.att3, grads.att3, lr);
        result.loss_history.push_back(loss);
        if (opts.on_step) opts.on_step(step, loss);
    }
    return result;
}

void save_mil_checkpoint(const std::filesystem::path& path, MilModel& model) {
    std::vector<std::pair<std::string, const nn::LayerParams*>> layers;
    for (auto& [name, p] : model.layers()) layers.emplace_back(name, p);
    nn::save_checkpoint(path, layers);
}

MilModel load_mil_checkpoint(const std::filesystem::path& path) {
    const auto layers = nn::load_checkpoint(path);
    MilModel model;
    model.reg1 = nn::find_layer(layers, "regressor.fc1");
    model.reg2 = nn::find_layer(layers, "regressor.fc2");
    model.reg3 = nn::find_layer(layers, "regressor.fc3");
    model.att1 = nn::find_layer(layers, "attention.fc1");
    model.att2 = nn::find_layer(layers, "attention.fc2");
    model.att3 = nn::find_layer(layers, "attention.fc3");
    model.cfg.regressor_widths = {model.reg1.w.dim(0), model.reg2.w.dim(0), model.reg3.w.dim(0)};
    model.cfg.attention_widths = {model.att1.w.dim(0), model.att2.w.dim(0), model.att3.w.dim(0)};
    return model;
}

}  // namespace flowmil::mil
