#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "flowmil/nn/tensor.hpp"
#include "flowmil/util/rng.hpp"

namespace flowmil::test {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

template <typename T>
void fill_uniform(nn::TensorT<T>& t, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& v : t.v) v = static_cast<T>(rng.uniform(lo, hi));
}

/// Central finite differences against an analytic gradient for `checks`
/// randomly chosen entries of `param`. `loss` re-runs the forward pass using
/// the current contents of `param`.
template <typename T>
void check_gradient(nn::TensorT<T>& param, const nn::TensorT<T>& analytic,
                    const std::function<double()>& loss, RngStream& pick, int checks,
                    double h = 1e-3, double tol = 1e-3) {
    REQUIRE(param.numel() == analytic.numel());
    for (int c = 0; c < checks; ++c) {
        const auto i = static_cast<std::size_t>(pick.uniform_int(param.v.size()));
        const T saved = param.v[i];
        param.v[i] = saved + static_cast<T>(h);
        const double up = loss();
        param.v[i] = saved - static_cast<T>(h);
        const double down = loss();
        param.v[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = static_cast<double>(analytic.v[i]);
        INFO("entry ", i, ": analytic ", a, " vs numeric ", numeric);
        CHECK(rel_err(a, numeric) < tol);
    }
}

}  // namespace flowmil::test
