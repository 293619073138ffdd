#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "balf/tensor.hpp"

namespace balf {

/// Optimizer state: one first/second-moment buffer per parameter, plus the
/// shared step counter. Buffers are allocated zeroed on the first step.
template <typename T>
struct AdamStateT {
    std::vector<std::vector<T>> m, v;
    std::int64_t t = 0;
};

using AdamState = AdamStateT<float>;

/// Standard bias-corrected Adam update, reading each parameter's
/// accumulated gradient. Any non-finite gradient rejects the whole step
/// before any state is touched.
template <typename T>
void adam_step(std::vector<TensorT<T>>& params, AdamStateT<T>& state, T lr,
               T beta1 = static_cast<T>(0.9), T beta2 = static_cast<T>(0.999),
               T eps = static_cast<T>(1e-8)) {
    for (auto& p : params) {
        if (!p.requires_grad()) throw Error("adam_step: parameter does not require grad");
        for (T gv : p.grad())
            if (!std::isfinite(static_cast<double>(gv)))
                throw Error("adam_step: non-finite gradient, step rejected");
    }
    if (state.t == 0 && state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), T(0));
            state.v[i].assign(params[i].numel(), T(0));
        }
    }
    if (state.m.size() != params.size())
        throw Error("adam_step: state was initialized for a different parameter list");

    state.t += 1;
    const double c1 = 1.0 / (1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(state.t)));
    const double c2 = 1.0 / (1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(state.t)));

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto pd = params[i].data();
        auto gd = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != pd.size())
            throw Error("adam_step: parameter shape changed under the optimizer");
        for (std::size_t k = 0; k < pd.size(); ++k) {
            const T gk = gd[k];
            m[k] = beta1 * m[k] + (T(1) - beta1) * gk;
            v[k] = beta2 * v[k] + (T(1) - beta2) * gk * gk;
            const T mhat = static_cast<T>(m[k] * c1);
            const T vhat = static_cast<T>(v[k] * c2);
            pd[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace balf
