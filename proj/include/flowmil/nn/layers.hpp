#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <vector>

#include "flowmil/nn/gemm.hpp"
#include "flowmil/nn/tensor.hpp"
#include "flowmil/util/rng.hpp"

namespace flowmil::nn {

enum class Act { identity, relu, tanh, sigmoid };

/// One layer's parameters plus the Adagrad squared-gradient accumulators.
template <typename T>
struct LayerParamsT {
    TensorT<T> w;
    TensorT<T> b;
    TensorT<T> w_acc;
    TensorT<T> b_acc;

    void reset_accumulators() {
        w_acc = w;
        b_acc = b;
        std::fill(w_acc.v.begin(), w_acc.v.end(), T(0));
        std::fill(b_acc.v.begin(), b_acc.v.end(), T(0));
    }
};

using LayerParams = LayerParamsT<float>;

template <typename T>
struct LayerGradsT {
    TensorT<T> dw;
    TensorT<T> db;

    void zero_like(const LayerParamsT<T>& p) {
        dw = p.w;
        db = p.b;
        std::fill(dw.v.begin(), dw.v.end(), T(0));
        std::fill(db.v.begin(), db.v.end(), T(0));
    }
};

/// Conv weights are (c_out, c_in, k, k).
template <typename T>
LayerParamsT<T> conv_params(int c_out, int c_in, int k) {
    LayerParamsT<T> p;
    p.w.resize({c_out, c_in, k, k});
    p.b.resize({c_out});
    p.reset_accumulators();
    return p;
}

/// Deconv weights are (c_in, c_out, k, k): a deconv with the weights of a
/// conv (c_out, c_in, k, k) maps c_out channels back to c_in and acts as the
/// conv's adjoint under the same stride/padding.
template <typename T>
LayerParamsT<T> deconv_params(int c_in, int c_out, int k) {
    LayerParamsT<T> p;
    p.w.resize({c_in, c_out, k, k});
    p.b.resize({c_out});
    p.reset_accumulators();
    return p;
}

template <typename T>
LayerParamsT<T> fc_params(int out, int in) {
    LayerParamsT<T> p;
    p.w.resize({out, in});
    p.b.resize({out});
    p.reset_accumulators();
    return p;
}

/// Uniform init in +-sqrt(6 / (fan_in + fan_out)); biases stay zero.
template <typename T>
void init_glorot(LayerParamsT<T>& p, int fan_in, int fan_out, RngStream& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& x : p.w.v) x = static_cast<T>(rng.uniform(-limit, limit));
    std::fill(p.b.v.begin(), p.b.v.end(), T(0));
}

namespace detail {

inline int conv_out_size(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

inline int deconv_out_size(int in, int k, int stride, int pad) {
    return (in - 1) * stride - 2 * pad + k;
}

// col has C*k*k rows and out_h*out_w columns; row (c, ky, kx) holds the input
// value under kernel tap (ky, kx) for every output position, zero where the
// tap falls into padding.
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, T* col) {
    const int oh = conv_out_size(H, k, stride, pad);
    const int ow = conv_out_size(W, k, stride, pad);
    const std::size_t pos = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < C; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * pos;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    T* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = xc + static_cast<std::size_t>(iy) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds col entries back into the image.
template <typename T>
void col2im_add(const T* col, int C, int H, int W, int k, int stride, int pad, T* x) {
    const int oh = conv_out_size(H, k, stride, pad);
    const int ow = conv_out_size(W, k, stride, pad);
    const std::size_t pos = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < C; ++c) {
        T* xc = x + static_cast<std::size_t>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * pos;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = xc + static_cast<std::size_t>(iy) * W;
                    const T* src = row + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
std::unique_ptr<T[]> scratch(std::size_t n) {
    return std::make_unique_for_overwrite<T[]>(n);
}

// Views a rank-3 tensor as a single-sample batch.
template <typename T>
struct BatchView {
    const T* data;
    int n, c, h, w;
    explicit BatchView(const TensorT<T>& t) {
        if (t.rank == 3) {
            n = 1;
            c = t.dim(0);
            h = t.dim(1);
            w = t.dim(2);
        } else if (t.rank == 4) {
            n = t.dim(0);
            c = t.dim(1);
            h = t.dim(2);
            w = t.dim(3);
        } else {
            throw Error("shape", "expected rank-3 or rank-4 tensor, got " + t.shape_str());
        }
        data = t.data();
    }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
};

template <typename T>
TensorT<T> make_like_batch(int n, int c, int h, int w, int rank) {
    TensorT<T> t;
    if (rank == 3)
        t.resize({c, h, w});
    else
        t.resize({n, c, h, w});
    return t;
}

}  // namespace detail

template <typename T>
struct ConvGradsT {
    TensorT<T> dx;
    LayerGradsT<T> grads;
};

/// 2D convolution. Input is (c_in, h, w) or (n, c_in, h, w); output spatial
/// size is floor((in + 2*pad - k) / stride) + 1.
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const LayerParamsT<T>& p, int stride, int pad) {
    detail::BatchView<T> in(x);
    const int co = p.w.dim(0), ci = p.w.dim(1), k = p.w.dim(2);
    if (in.c != ci)
        throw Error("shape", "conv2d: input channels " + x.shape_str() + " vs weights " +
                                 p.w.shape_str());
    const int oh = detail::conv_out_size(in.h, k, stride, pad);
    const int ow = detail::conv_out_size(in.w, k, stride, pad);
    if (oh <= 0 || ow <= 0)
        throw Error("shape", "conv2d: kernel " + std::to_string(k) + " too large for input " +
                                 x.shape_str());
    TensorT<T> y = detail::make_like_batch<T>(in.n, co, oh, ow, x.rank);
    const std::size_t pos = static_cast<std::size_t>(oh) * ow;
    const int kk = ci * k * k;
    auto col = detail::scratch<T>(static_cast<std::size_t>(kk) * pos);
    for (int s = 0; s < in.n; ++s) {
        detail::im2col(in.data + s * in.sample_size(), ci, in.h, in.w, k, stride, pad, col.get());
        T* ym = y.data() + static_cast<std::size_t>(s) * co * pos;
        for (int c = 0; c < co; ++c) std::fill(ym + c * pos, ym + (c + 1) * pos, p.b(c));
        gemm_nn(co, static_cast<int>(pos), kk, p.w.data(), col.get(), ym);
    }
    return y;
}

template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& x, const LayerParamsT<T>& p, int stride, int pad,
                              const TensorT<T>& dy) {
    detail::BatchView<T> in(x);
    detail::BatchView<T> dout(dy);
    const int co = p.w.dim(0), ci = p.w.dim(1), k = p.w.dim(2);
    const int oh = detail::conv_out_size(in.h, k, stride, pad);
    const int ow = detail::conv_out_size(in.w, k, stride, pad);
    if (dout.c != co || dout.h != oh || dout.w != ow || dout.n != in.n)
        throw Error("shape", "conv2d backward: upstream gradient " + dy.shape_str() +
                                 " does not match forward output");
    ConvGradsT<T> out;
    out.dx = detail::make_like_batch<T>(in.n, ci, in.h, in.w, x.rank);
    out.grads.zero_like(p);
    const std::size_t pos = static_cast<std::size_t>(oh) * ow;
    const int kk = ci * k * k;
    auto col = detail::scratch<T>(static_cast<std::size_t>(kk) * pos);
    auto dcol = detail::scratch<T>(static_cast<std::size_t>(kk) * pos);
    for (int s = 0; s < in.n; ++s) {
        const T* xs = in.data + s * in.sample_size();
        const T* dys = dout.data + s * dout.sample_size();
        detail::im2col(xs, ci, in.h, in.w, k, stride, pad, col.get());
        // db
        for (int c = 0; c < co; ++c) {
            T acc = T(0);
            const T* row = dys + static_cast<std::size_t>(c) * pos;
            for (std::size_t j = 0; j < pos; ++j) acc += row[j];
            out.grads.db(c) += acc;
        }
        // dW += dy * col^T
        gemm_nt(co, kk, static_cast<int>(pos), dys, col.get(), out.grads.dw.data());
        // dcol = W^T * dy, then scatter back to dx
        std::fill(dcol.get(), dcol.get() + static_cast<std::size_t>(kk) * pos, T(0));
        gemm_tn(co, static_cast<int>(pos), kk, p.w.data(), dys, dcol.get());
        detail::col2im_add(dcol.get(), ci, in.h, in.w, k, stride, pad,
                           out.dx.data() + s * in.sample_size());
    }
    return out;
}

/// Transposed convolution; adjoint of conv2d with the same geometry. Output
/// spatial size is (in - 1)*stride - 2*pad + k.
template <typename T>
TensorT<T> deconv2d_forward(const TensorT<T>& x, const LayerParamsT<T>& p, int stride, int pad) {
    detail::BatchView<T> in(x);
    const int ci = p.w.dim(0), co = p.w.dim(1), k = p.w.dim(2);
    if (in.c != ci)
        throw Error("shape", "deconv2d: input channels " + x.shape_str() + " vs weights " +
                                 p.w.shape_str());
    const int oh = detail::deconv_out_size(in.h, k, stride, pad);
    const int ow = detail::deconv_out_size(in.w, k, stride, pad);
    if (oh <= 0 || ow <= 0)
        throw Error("shape", "deconv2d: invalid output size for input " + x.shape_str());
    TensorT<T> y = detail::make_like_batch<T>(in.n, co, oh, ow, x.rank);
    const std::size_t pos = static_cast<std::size_t>(in.h) * in.w;
    const int kk = co * k * k;
    auto dcol = detail::scratch<T>(static_cast<std::size_t>(kk) * pos);
    for (int s = 0; s < in.n; ++s) {
        const T* xs = in.data + s * in.sample_size();
        std::fill(dcol.get(), dcol.get() + static_cast<std::size_t>(kk) * pos, T(0));
        gemm_tn(ci, static_cast<int>(pos), kk, p.w.data(), xs, dcol.get());
        T* ys = y.data() + static_cast<std::size_t>(s) * co * oh * ow;
        for (int c = 0; c < co; ++c)
            std::fill(ys + static_cast<std::size_t>(c) * oh * ow,
                      ys + static_cast<std::size_t>(c + 1) * oh * ow, p.b(c));
        detail::col2im_add(dcol.get(), co, oh, ow, k, stride, pad, ys);
    }
    return y;
}

template <typename T>
ConvGradsT<T> deconv2d_backward(const TensorT<T>& x, const LayerParamsT<T>& p, int stride, int pad,
                                const TensorT<T>& dy) {
    detail::BatchView<T> in(x);
    detail::BatchView<T> dout(dy);
    const int ci = p.w.dim(0), co = p.w.dim(1), k = p.w.dim(2);
    const int oh = detail::deconv_out_size(in.h, k, stride, pad);
    const int ow = detail::deconv_out_size(in.w, k, stride, pad);
    if (dout.c != co || dout.h != oh || dout.w != ow || dout.n != in.n)
        throw Error("shape", "deconv2d backward: upstream gradient " + dy.shape_str() +
                                 " does not match forward output");
    ConvGradsT<T> out;
    out.dx = detail::make_like_batch<T>(in.n, ci, in.h, in.w, x.rank);
    out.grads.zero_like(p);
    const std::size_t pos = static_cast<std::size_t>(in.h) * in.w;
    const int kk = co * k * k;
    auto col = detail::scratch<T>(static_cast<std::size_t>(kk) * pos);
    for (int s = 0; s < in.n; ++s) {
        const T* xs = in.data + s * in.sample_size();
        const T* dys = dout.data + s * dout.sample_size();
        detail::im2col(dys, co, oh, ow, k, stride, pad, col.get());
        for (int c = 0; c < co; ++c) {
            T acc = T(0);
            const T* row = dys + static_cast<std::size_t>(c) * oh * ow;
            const std::size_t n = static_cast<std::size_t>(oh) * ow;
            for (std::size_t j = 0; j < n; ++j) acc += row[j];
            out.grads.db(c) += acc;
        }
        // dx = conv(dy, w); dW += x * im2col(dy)^T
        gemm_nn(ci, static_cast<int>(pos), kk, p.w.data(), col.get(),
                out.dx.data() + s * in.sample_size());
        gemm_nt(ci, kk, static_cast<int>(pos), xs, col.get(), out.grads.dw.data());
    }
    return out;
}

/// Fully connected layer: y = W x + b. Input is (in) or (n, in).
template <typename T>
TensorT<T> fc_forward(const TensorT<T>& x, const LayerParamsT<T>& p) {
    const int out = p.w.dim(0), in = p.w.dim(1);
    const int n = x.rank == 2 ? x.dim(0) : 1;
    const int xin = x.rank == 2 ? x.dim(1) : x.dim(0);
    if (x.rank > 2 || xin != in)
        throw Error("shape",
                    "fc: input " + x.shape_str() + " vs weights " + p.w.shape_str());
    TensorT<T> y;
    if (x.rank == 2)
        y.resize({n, out});
    else
        y.resize({out});
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < out; ++o) y.v[static_cast<std::size_t>(i) * out + o] = p.b(o);
    gemm_nt(n, out, in, x.data(), p.w.data(), y.data());
    return y;
}

template <typename T>
ConvGradsT<T> fc_backward(const TensorT<T>& x, const LayerParamsT<T>& p, const TensorT<T>& dy) {
    const int out = p.w.dim(0), in = p.w.dim(1);
    const int n = x.rank == 2 ? x.dim(0) : 1;
    ConvGradsT<T> g;
    g.dx = x;
    std::fill(g.dx.v.begin(), g.dx.v.end(), T(0));
    g.grads.zero_like(p);
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < out; ++o) g.grads.db(o) += dy.v[static_cast<std::size_t>(i) * out + o];
    gemm_tn(n, in, out, dy.data(), x.data(), g.grads.dw.data());
    gemm_nn(n, in, out, dy.data(), p.w.data(), g.dx.data());
    return g;
}

template <typename T>
TensorT<T> activation(const TensorT<T>& x, Act act) {
    TensorT<T> y = x;
    switch (act) {
        case Act::identity:
            break;
        case Act::relu:
            for (auto& v : y.v) v = v > T(0) ? v : T(0);
            break;
        case Act::tanh:
            for (auto& v : y.v) v = std::tanh(v);
            break;
        case Act::sigmoid:
            for (auto& v : y.v) v = T(1) / (T(1) + std::exp(-v));
            break;
    }
    return y;
}

/// Backward through activation given the forward *output* y.
template <typename T>
TensorT<T> activation_backward(const TensorT<T>& y, const TensorT<T>& dy, Act act) {
    check_same_shape(y, dy, "activation backward");
    TensorT<T> dx = dy;
    switch (act) {
        case Act::identity:
            break;
        case Act::relu:
            for (std::size_t i = 0; i < dx.v.size(); ++i)
                if (y.v[i] <= T(0)) dx.v[i] = T(0);
            break;
        case Act::tanh:
            for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= T(1) - y.v[i] * y.v[i];
            break;
        case Act::sigmoid:
            for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= y.v[i] * (T(1) - y.v[i]);
            break;
    }
    return dx;
}

/// Per-channel spatial mean: (c,h,w) -> (c), (n,c,h,w) -> (n,c).
template <typename T>
TensorT<T> global_average_pool(const TensorT<T>& x) {
    detail::BatchView<T> in(x);
    TensorT<T> y;
    if (x.rank == 3)
        y.resize({in.c});
    else
        y.resize({in.n, in.c});
    const std::size_t hw = static_cast<std::size_t>(in.h) * in.w;
    for (int s = 0; s < in.n; ++s)
        for (int c = 0; c < in.c; ++c) {
            const T* p = in.data + s * in.sample_size() + c * hw;
            T acc = T(0);
            for (std::size_t j = 0; j < hw; ++j) acc += p[j];
            y.v[static_cast<std::size_t>(s) * in.c + c] = acc / static_cast<T>(hw);
        }
    return y;
}

/// Gradient distributes 1/(h*w) of each channel gradient to every location.
template <typename T>
TensorT<T> global_average_pool_backward(const TensorT<T>& x_like, const TensorT<T>& dy) {
    detail::BatchView<T> in(x_like);
    TensorT<T> dx = x_like;
    const std::size_t hw = static_cast<std::size_t>(in.h) * in.w;
    const T scale = T(1) / static_cast<T>(hw);
    for (int s = 0; s < in.n; ++s)
        for (int c = 0; c < in.c; ++c) {
            const T g = dy.v[static_cast<std::size_t>(s) * in.c + c] * scale;
            T* p = dx.data() + s * in.sample_size() + c * hw;
            for (std::size_t j = 0; j < hw; ++j) p[j] = g;
        }
    return dx;
}

template <typename T>
struct DropoutResult {
    TensorT<T> y;
    std::vector<std::uint8_t> keep;  // empty when dropout was a no-op
};

/// Inverted dropout: survivors are scaled by 1/(1-rate) so inference is identity.
template <typename T>
DropoutResult<T> dropout_forward(const TensorT<T>& x, double rate, bool training,
                                 RngStream& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw Error("config", "dropout rate must be in [0, 1), got " + std::to_string(rate));
    DropoutResult<T> r;
    r.y = x;
    if (!training || rate == 0.0) return r;
    const T scale = T(1.0 / (1.0 - rate));
    r.keep.resize(x.v.size());
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        const bool keep = rng.uniform() >= rate;
        r.keep[i] = keep ? 1 : 0;
        r.y.v[i] = keep ? x.v[i] * scale : T(0);
    }
    return r;
}

template <typename T>
TensorT<T> dropout_backward(const std::vector<std::uint8_t>& keep, double rate,
                            const TensorT<T>& dy) {
    TensorT<T> dx = dy;
    if (keep.empty()) return dx;
    const T scale = T(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] = keep[i] ? dx.v[i] * scale : T(0);
    return dx;
}

/// Numerically stabilized softmax over a rank-1 tensor.
template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
    TensorT<T> y = logits;
    T mx = logits.v[0];
    for (T v : logits.v) mx = std::max(mx, v);
    T sum = T(0);
    for (std::size_t i = 0; i < y.v.size(); ++i) {
        y.v[i] = std::exp(logits.v[i] - mx);
        sum += y.v[i];
    }
    for (auto& v : y.v) v /= sum;
    return y;
}

template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& y, const TensorT<T>& dy) {
    check_same_shape(y, dy, "softmax backward");
    T dot = T(0);
    for (std::size_t i = 0; i < y.v.size(); ++i) dot += dy.v[i] * y.v[i];
    TensorT<T> dx = y;
    for (std::size_t i = 0; i < y.v.size(); ++i) dx.v[i] = y.v[i] * (dy.v[i] - dot);
    return dx;
}

/// Adagrad: acc += g^2; p -= lr * g / (sqrt(acc) + eps).
template <typename T>
void adagrad_step(LayerParamsT<T>& p, const LayerGradsT<T>& g, T lr, T eps = T(1e-8)) {
    check_same_shape(p.w, g.dw, "adagrad weights");
    check_same_shape(p.b, g.db, "adagrad biases");
    for (std::size_t i = 0; i < p.w.v.size(); ++i) {
        const T gv = g.dw.v[i];
        p.w_acc.v[i] += gv * gv;
        p.w.v[i] -= lr * gv / (std::sqrt(p.w_acc.v[i]) + eps);
    }
    for (std::size_t i = 0; i < p.b.v.size(); ++i) {
        const T gv = g.db.v[i];
        p.b_acc.v[i] += gv * gv;
        p.b.v[i] -= lr * gv / (std::sqrt(p.b_acc.v[i]) + eps);
    }
}

/// Learning-rate schedule: the rate halves at each milestone iteration. An
/// optional linear warmup ramps from a tenth of the rate, which keeps early
/// Adagrad steps from knocking out ReLU units while the network is small.
struct TrainSchedule {
    double initial_lr = 0.005;
    int total_steps = 5000;
    std::vector<int> milestones{2500, 4000};
    int batch_size = 8;
    std::uint64_t seed = 1;
    int warmup_steps = 0;

    void validate() const {
        if (initial_lr <= 0) throw Error("config", "learning rate must be positive");
        if (total_steps <= 0) throw Error("config", "total steps must be positive");
        if (batch_size <= 0) throw Error("config", "batch size must be positive");
        if (warmup_steps < 0 || warmup_steps >= total_steps)
            throw Error("config", "warmup must be non-negative and below total steps");
        int prev = 0;
        for (int m : milestones) {
            if (m <= prev)
                throw Error("config", "milestones must be positive and strictly increasing");
            if (m >= total_steps)
                throw Error("config", "milestone " + std::to_string(m) +
                                          " must be below total steps " +
                                          std::to_string(total_steps));
            prev = m;
        }
    }

    double lr_at(int step) const {
        if (step < warmup_steps)
            return initial_lr * (0.1 + 0.9 * static_cast<double>(step) / warmup_steps);
        double lr = initial_lr;
        for (int m : milestones)
            if (step >= m) lr *= 0.5;
        return lr;
    }
};

}  // namespace flowmil::nn
