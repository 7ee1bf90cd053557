#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "flowmil/util/error.hpp"

namespace flowmil::nn {

/// Dense row-major tensor with up to 4 axes (batch, channels, height, width).
/// The production dtype is float; gradient-check tests instantiate double.
template <typename T>
struct TensorT {
    std::array<int, 4> dims{1, 1, 1, 1};
    int rank = 0;
    std::vector<T> v;

    TensorT() = default;

    explicit TensorT(std::initializer_list<int> shape) { resize(shape); }

    void resize(std::initializer_list<int> shape) {
        resize(std::vector<int>(shape.begin(), shape.end()));
    }

    void resize(const std::vector<int>& shape) {
        if (shape.empty() || shape.size() > 4)
            throw Error("shape", "tensor rank must be 1..4, got " + std::to_string(shape.size()));
        dims = {1, 1, 1, 1};
        rank = static_cast<int>(shape.size());
        std::size_t n = 1;
        for (int i = 0; i < rank; ++i) {
            if (shape[static_cast<std::size_t>(i)] <= 0)
                throw Error("shape", "tensor dims must be positive");
            dims[static_cast<std::size_t>(i)] = shape[static_cast<std::size_t>(i)];
            n *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
        }
        v.assign(n, T(0));
    }

    static TensorT zeros(std::initializer_list<int> shape) { return TensorT(shape); }

    static TensorT full(std::initializer_list<int> shape, T value) {
        TensorT t(shape);
        for (auto& x : t.v) x = value;
        return t;
    }

    static TensorT from(std::initializer_list<int> shape, std::initializer_list<T> values) {
        TensorT t(shape);
        if (t.v.size() != values.size())
            throw Error("shape", "value count does not match shape");
        std::size_t i = 0;
        for (T x : values) t.v[i++] = x;
        return t;
    }

    int numel() const { return static_cast<int>(v.size()); }
    int dim(int i) const { return dims[static_cast<std::size_t>(i)]; }
    bool empty() const { return v.empty(); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& operator()(int a) { return v[static_cast<std::size_t>(a)]; }
    T operator()(int a) const { return v[static_cast<std::size_t>(a)]; }
    T& operator()(int a, int b) { return v[static_cast<std::size_t>(a) * dims[1] + b]; }
    T operator()(int a, int b) const { return v[static_cast<std::size_t>(a) * dims[1] + b]; }
    T& operator()(int a, int b, int c) {
        return v[(static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c];
    }
    T operator()(int a, int b, int c) const {
        return v[(static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c];
    }
    T& operator()(int a, int b, int c, int d) {
        return v[((static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c) * dims[3] + d];
    }
    T operator()(int a, int b, int c, int d) const {
        return v[((static_cast<std::size_t>(a) * dims[1] + b) * dims[2] + c) * dims[3] + d];
    }

    bool same_shape(const TensorT& o) const { return rank == o.rank && dims == o.dims; }

    std::string shape_str() const {
        std::string s = "(";
        for (int i = 0; i < rank; ++i) {
            if (i) s += "x";
            s += std::to_string(dims[static_cast<std::size_t>(i)]);
        }
        return s + ")";
    }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.dims = dims;
        out.rank = rank;
        out.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using Tensor = TensorT<float>;

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw Error("shape", std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                                 b.shape_str());
}

}  // namespace flowmil::nn
