#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "flowmil/nn/checkpoint.hpp"
#include "flowmil/nn/layers.hpp"

namespace flowmil::mil {

enum class Mode { max, attention };
enum class AttentionNorm { softmax, sigmoid };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode m);

struct MilConfig {
    int m = 32;
    float lambda1 = 8e-5f;
    Mode mode = Mode::attention;
    std::array<int, 3> regressor_widths{512, 32, 1};
    std::array<int, 3> attention_widths{256, 64, 1};
    float dropout_rate = 0.6f;
    /// softmax keeps the weighted bag sums in [0, 1] so the unit hinge margin
    /// is meaningful; the unnormalized sigmoid variant exists for ablation.
    AttentionNorm attention_norm = AttentionNorm::softmax;
    int bags_per_side = 30;
    nn::TrainSchedule schedule{0.001, 10000, {4000, 8000}, 1, 1};

    void validate() const;
};

/// One video as m L2-normalized segment feature rows plus its video label.
struct Bag {
    std::string video_id;
    bool positive = false;
    nn::Tensor features;  // m x d

    int m() const { return features.dim(0); }
    int d() const { return features.dim(1); }
};

/// Partitions ordered clip features into m contiguous near-equal groups and
/// averages each, then L2-normalizes every row. Fewer clips than m are
/// extended cyclically so each segment still holds one clip.
nn::Tensor build_bag(const std::vector<std::vector<float>>& clip_features, int m);

/// Concatenation followed by L2 normalization.
std::vector<float> fuse_features(const std::vector<float>& a, const std::vector<float>& b);

template <typename T>
struct MilModelT {
    MilConfig cfg;
    nn::LayerParamsT<T> reg1, reg2, reg3;
    nn::LayerParamsT<T> att1, att2, att3;

    void init(int input_dim, RngStream& rng) {
        const auto& rw = cfg.regressor_widths;
        const auto& aw = cfg.attention_widths;
        reg1 = nn::fc_params<T>(rw[0], input_dim);
        reg2 = nn::fc_params<T>(rw[1], rw[0]);
        reg3 = nn::fc_params<T>(rw[2], rw[1]);
        att1 = nn::fc_params<T>(aw[0], input_dim);
        att2 = nn::fc_params<T>(aw[1], aw[0]);
        att3 = nn::fc_params<T>(aw[2], aw[1]);
        nn::init_glorot(reg1, input_dim, rw[0], rng);
        nn::init_glorot(reg2, rw[0], rw[1], rng);
        nn::init_glorot(reg3, rw[1], rw[2], rng);
        nn::init_glorot(att1, input_dim, aw[0], rng);
        nn::init_glorot(att2, aw[0], aw[1], rng);
        nn::init_glorot(att3, aw[1], aw[2], rng);
    }

    std::vector<std::pair<std::string, nn::LayerParamsT<T>*>> layers() {
        return {{"regressor.fc1", &reg1}, {"regressor.fc2", &reg2}, {"regressor.fc3", &reg3},
                {"attention.fc1", &att1}, {"attention.fc2", &att2}, {"attention.fc3", &att3}};
    }
};

using MilModel = MilModelT<float>;

template <typename T>
struct MilGradsT {
    nn::LayerGradsT<T> reg1, reg2, reg3, att1, att2, att3;

    void zero_like(const MilModelT<T>& m) {
        reg1.zero_like(m.reg1);
        reg2.zero_like(m.reg2);
        reg3.zero_like(m.reg3);
        att1.zero_like(m.att1);
        att2.zero_like(m.att2);
        att3.zero_like(m.att3);
    }

    void scale(T s) {
        for (auto* g : {&reg1, &reg2, &reg3, &att1, &att2, &att3}) {
            for (auto& v : g->dw.v) v *= s;
            for (auto& v : g->db.v) v *= s;
        }
    }
};

namespace detail {

/// Intermediates of one bag's forward pass, kept for backprop.
template <typename T>
struct BagActsT {
    nn::TensorT<T> input;            // m x d
    nn::TensorT<T> a1, y1, z2, y2;   // regressor chain
    std::vector<std::uint8_t> keep1, keep2;
    nn::TensorT<T> scores2d;         // m x 1, post-sigmoid
    nn::TensorT<T> scores;           // rank-1 view of the above
    nn::TensorT<T> t1, t2;           // attention chain
    nn::TensorT<T> logits, weights;  // rank-1, length m
};

template <typename T>
nn::TensorT<T> to_rank1(const nn::TensorT<T>& col) {
    nn::TensorT<T> v;
    v.resize({col.dim(0)});
    for (int i = 0; i < col.dim(0); ++i) v(i) = col(i, 0);
    return v;
}

template <typename T>
void regressor_forward(const nn::TensorT<T>& features, const MilModelT<T>& model, bool training,
                       RngStream* rng, BagActsT<T>& acts) {
    acts.input = features;
    acts.a1 = nn::activation(nn::fc_forward(features, model.reg1), nn::Act::relu);
    if (training) {
        auto d1 = nn::dropout_forward(acts.a1, model.cfg.dropout_rate, true, *rng);
        acts.y1 = std::move(d1.y);
        acts.keep1 = std::move(d1.keep);
    } else {
        acts.y1 = acts.a1;
    }
    acts.z2 = nn::fc_forward(acts.y1, model.reg2);
    if (training) {
        auto d2 = nn::dropout_forward(acts.z2, model.cfg.dropout_rate, true, *rng);
        acts.y2 = std::move(d2.y);
        acts.keep2 = std::move(d2.keep);
    } else {
        acts.y2 = acts.z2;
    }
    acts.scores2d = nn::activation(nn::fc_forward(acts.y2, model.reg3), nn::Act::sigmoid);
    acts.scores = to_rank1(acts.scores2d);
}

template <typename T>
void attention_forward(const nn::TensorT<T>& features, const MilModelT<T>& model,
                       BagActsT<T>& acts) {
    acts.t1 = nn::activation(nn::fc_forward(features, model.att1), nn::Act::tanh);
    acts.t2 = nn::activation(nn::fc_forward(acts.t1, model.att2), nn::Act::tanh);
    acts.logits = to_rank1(nn::fc_forward(acts.t2, model.att3));
    if (model.cfg.attention_norm == AttentionNorm::softmax)
        acts.weights = nn::softmax(acts.logits);
    else
        acts.weights = nn::activation(acts.logits, nn::Act::sigmoid);
}

template <typename T>
void add_grads(nn::LayerGradsT<T>& into, const nn::LayerGradsT<T>& from) {
    for (std::size_t i = 0; i < into.dw.v.size(); ++i) into.dw.v[i] += from.dw.v[i];
    for (std::size_t i = 0; i < into.db.v.size(); ++i) into.db.v[i] += from.db.v[i];
}

/// Backprop one bag given d/dscores and (optionally) d/dweights.
template <typename T>
void bag_backward(const BagActsT<T>& acts, const MilModelT<T>& model,
                  const nn::TensorT<T>& dscores, const nn::TensorT<T>* dweights,
                  MilGradsT<T>& grads) {
    const int m = acts.input.dim(0);
    // regressor
    nn::TensorT<T> dcol;
    dcol.resize({m, 1});
    for (int i = 0; i < m; ++i) dcol(i, 0) = dscores(i);
    dcol = nn::activation_backward(acts.scores2d, dcol, nn::Act::sigmoid);
    auto b3 = nn::fc_backward(acts.y2, model.reg3, dcol);
    add_grads(grads.reg3, b3.grads);
    nn::TensorT<T> dy = nn::dropout_backward(acts.keep2, model.cfg.dropout_rate, b3.dx);
    auto b2 = nn::fc_backward(acts.y1, model.reg2, dy);
    add_grads(grads.reg2, b2.grads);
    dy = nn::dropout_backward(acts.keep1, model.cfg.dropout_rate, b2.dx);
    dy = nn::activation_backward(acts.a1, dy, nn::Act::relu);
    auto b1 = nn::fc_backward(acts.input, model.reg1, dy);
    add_grads(grads.reg1, b1.grads);
    // attention
    if (dweights != nullptr) {
        nn::TensorT<T> dlogits;
        if (model.cfg.attention_norm == AttentionNorm::softmax)
            dlogits = nn::softmax_backward(acts.weights, *dweights);
        else
            dlogits = nn::activation_backward(acts.weights, *dweights, nn::Act::sigmoid);
        nn::TensorT<T> dl2;
        dl2.resize({m, 1});
        for (int i = 0; i < m; ++i) dl2(i, 0) = dlogits(i);
        auto a3 = nn::fc_backward(acts.t2, model.att3, dl2);
        add_grads(grads.att3, a3.grads);
        nn::TensorT<T> da = nn::activation_backward(acts.t2, a3.dx, nn::Act::tanh);
        auto a2 = nn::fc_backward(acts.t1, model.att2, da);
        add_grads(grads.att2, a2.grads);
        da = nn::activation_backward(acts.t1, a2.dx, nn::Act::tanh);
        auto a1g = nn::fc_backward(acts.input, model.att1, da);
        add_grads(grads.att1, a1g.grads);
    }
}

}  // namespace detail

/// Per-segment anomaly scores in (0, 1); row-wise FC(512)+ReLU+dropout,
/// FC(32)+dropout, FC(1)+sigmoid. Dropout fires only when training.
template <typename T>
std::vector<T> score_segments(const nn::TensorT<T>& features, const MilModelT<T>& model,
                              bool training = false, RngStream* rng = nullptr) {
    if (training && rng == nullptr)
        throw Error("config", "score_segments: training mode needs an RNG");
    detail::BagActsT<T> acts;
    detail::regressor_forward(features, model, training, rng, acts);
    return acts.scores.v;
}

/// Learned per-segment attention weights; softmax-normalized over the bag by
/// default so they sum to 1.
template <typename T>
std::vector<T> attention_weights(const nn::TensorT<T>& features, const MilModelT<T>& model) {
    detail::BagActsT<T> acts;
    detail::attention_forward(features, model, acts);
    return acts.weights.v;
}

/// Eq-style max hinge: max(0, 1 - max(pos) + max(neg)).
template <typename T>
double max_hinge_loss(const std::vector<T>& pos_scores, const std::vector<T>& neg_scores) {
    if (pos_scores.empty() || neg_scores.empty())
        throw Error("data", "max_hinge_loss: empty score vector");
    const double mp = *std::max_element(pos_scores.begin(), pos_scores.end());
    const double mn = *std::max_element(neg_scores.begin(), neg_scores.end());
    return std::max(0.0, 1.0 - mp + mn);
}

/// Attention-weighted hinge: max(0, 1 - sum(wp*sp) + sum(wn*sn)); each bag
/// weighs its own segments.
template <typename T>
double attention_hinge_loss(const std::vector<T>& pos_scores, const std::vector<T>& pos_weights,
                            const std::vector<T>& neg_scores, const std::vector<T>& neg_weights) {
    if (pos_scores.size() != pos_weights.size() || neg_scores.size() != neg_weights.size())
        throw Error("shape", "attention_hinge_loss: scores/weights length mismatch");
    double sp = 0.0, sn = 0.0;
    for (std::size_t i = 0; i < pos_scores.size(); ++i)
        sp += static_cast<double>(pos_weights[i]) * static_cast<double>(pos_scores[i]);
    for (std::size_t i = 0; i < neg_scores.size(); ++i)
        sn += static_cast<double>(neg_weights[i]) * static_cast<double>(neg_scores[i]);
    return std::max(0.0, 1.0 - sp + sn);
}

/// Ranking loss plus the sparsity term over the positive bag. In max mode the
/// sparsity term uses uniform weights 1/m.
template <typename T>
double total_loss(const std::vector<T>& pos_scores, const std::vector<T>& pos_weights,
                  const std::vector<T>& neg_scores, const std::vector<T>& neg_weights,
                  double lambda1, Mode mode) {
    if (lambda1 < 0.0) throw Error("config", "lambda1 must be non-negative");
    if (mode == Mode::max) {
        double sum = 0.0;
        for (T s : pos_scores) sum += static_cast<double>(s);
        return max_hinge_loss(pos_scores, neg_scores) +
               lambda1 * sum / static_cast<double>(pos_scores.size());
    }
    double sparsity = 0.0;
    for (std::size_t i = 0; i < pos_scores.size(); ++i)
        sparsity += static_cast<double>(pos_weights[i]) * static_cast<double>(pos_scores[i]);
    return attention_hinge_loss(pos_scores, pos_weights, neg_scores, neg_weights) +
           lambda1 * sparsity;
}

/// Bag-level anomaly score: attention-weighted sum, or the max in max mode.
template <typename T>
double bag_score(const nn::TensorT<T>& features, const MilModelT<T>& model) {
    const auto scores = score_segments(features, model);
    if (model.cfg.mode == Mode::max)
        return static_cast<double>(*std::max_element(scores.begin(), scores.end()));
    const auto w = attention_weights(features, model);
    double s = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        s += static_cast<double>(w[i]) * static_cast<double>(scores[i]);
    return s;
}

/// Loss and parameter gradients for one positive/negative bag pair.
/// `training` controls dropout; gradient checks run with it off.
template <typename T>
double pair_loss_and_grads(const nn::TensorT<T>& pos_features, const nn::TensorT<T>& neg_features,
                           const MilModelT<T>& model, MilGradsT<T>& grads, bool training = false,
                           RngStream* rng = nullptr) {
    const MilConfig& cfg = model.cfg;
    detail::BagActsT<T> pos, neg;
    detail::regressor_forward(pos_features, model, training, rng, pos);
    if (cfg.mode == Mode::attention) detail::attention_forward(pos_features, model, pos);
    detail::regressor_forward(neg_features, model, training, rng, neg);
    if (cfg.mode == Mode::attention) detail::attention_forward(neg_features, model, neg);

    const int mp = pos.scores.dim(0), mn = neg.scores.dim(0);
    nn::TensorT<T> dsp, dsn;
    dsp.resize({mp});
    dsn.resize({mn});
    double loss;
    if (cfg.mode == Mode::max) {
        loss = total_loss(pos.scores.v, {}, neg.scores.v, {}, cfg.lambda1, Mode::max);
        const int ip = static_cast<int>(std::max_element(pos.scores.v.begin(), pos.scores.v.end()) -
                                        pos.scores.v.begin());
        const int in = static_cast<int>(std::max_element(neg.scores.v.begin(), neg.scores.v.end()) -
                                        neg.scores.v.begin());
        const bool active = 1.0 - pos.scores(ip) + neg.scores(in) > 0.0;
        const T lam = static_cast<T>(cfg.lambda1) / static_cast<T>(mp);
        for (int i = 0; i < mp; ++i) dsp(i) = lam;
        if (active) {
            dsp(ip) += T(-1);
            dsn(in) += T(1);
        }
        detail::bag_backward<T>(pos, model, dsp, nullptr, grads);
        detail::bag_backward<T>(neg, model, dsn, nullptr, grads);
        return loss;
    }

    loss = total_loss(pos.scores.v, pos.weights.v, neg.scores.v, neg.weights.v, cfg.lambda1,
                      Mode::attention);
    double sp = 0.0, sn = 0.0;
    for (int i = 0; i < mp; ++i) sp += static_cast<double>(pos.weights(i)) * pos.scores(i);
    for (int i = 0; i < mn; ++i) sn += static_cast<double>(neg.weights(i)) * neg.scores(i);
    const bool active = 1.0 - sp + sn > 0.0;
    const T pos_coef = (active ? T(-1) : T(0)) + static_cast<T>(cfg.lambda1);
    const T neg_coef = active ? T(1) : T(0);
    nn::TensorT<T> dwp, dwn;
    dwp.resize({mp});
    dwn.resize({mn});
    for (int i = 0; i < mp; ++i) {
        dsp(i) = pos_coef * pos.weights(i);
        dwp(i) = pos_coef * pos.scores(i);
    }
    for (int i = 0; i < mn; ++i) {
        dsn(i) = neg_coef * neg.weights(i);
        dwn(i) = neg_coef * neg.scores(i);
    }
    detail::bag_backward(pos, model, dsp, &dwp, grads);
    detail::bag_backward(neg, model, dsn, &dwn, grads);
    return loss;
}

struct MilTrainResult {
    MilModel model;
    std::vector<double> loss_history;
};

struct MilTrainOptions {
    std::function<void(int, double)> on_step;
};

/// Weakly supervised training: each step samples bags_per_side positive and
/// negative bags (with replacement), pairs them index-wise, and averages the
/// pair losses. Deterministic under the schedule seed.
MilTrainResult train_mil(const std::vector<Bag>& bags, const MilConfig& cfg,
                         const MilTrainOptions& opts = {});

void save_mil_checkpoint(const std::filesystem::path& path, MilModel& model);
MilModel load_mil_checkpoint(const std::filesystem::path& path);

}  // namespace flowmil::mil
