#pragma once

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

#include "balf/graph.hpp"
#include "balf/ops.hpp"
#include "balf/tensor.hpp"

namespace balf {

/// Function under test for gradient verification. Runs in double precision:
/// central finite differences are unusable in single precision.
using GradcheckFn =
    std::function<TensorT<double>(GraphT<double>*, const std::vector<TensorT<double>>&)>;

struct GradcheckOpts {
    double lo = -2.0, hi = 2.0;
    double step = 1e-5;
    // Optional fixup applied to the drawn inputs before checking, e.g. to
    // enforce distinct entries for argmax-style ops.
    std::function<void(std::vector<TensorT<double>>&)> adjust;
    // Additional differentiable leaves the function captures (block
    // parameters); their gradients are finite-difference-checked too.
    std::vector<TensorT<double>> leaves;
};

/// Compares analytic gradients of a random linear functional of f's output
/// against central finite differences. Returns the worst relative error
/// |a-n| / max(1e-6, |a|+|n|) over all input elements; the floor keeps
/// FD round-off noise (~1e-11 at step 1e-5) from dominating elements whose
/// true gradient is negligible.
inline double gradcheck(const GradcheckFn& f, const std::vector<Shape>& shapes, std::uint64_t seed,
                        const GradcheckOpts& opts = {}) {
    std::mt19937_64 rng(seed);
    std::vector<TensorT<double>> inputs;
    inputs.reserve(shapes.size());
    for (const auto& s : shapes) inputs.push_back(uniform<double>(s, rng, opts.lo, opts.hi, true));
    if (opts.adjust) opts.adjust(inputs);

    // A fixed random functional of the output; a plain sum would have zero
    // gradient through normalizing ops like softmax.
    TensorT<double> probe = f(nullptr, inputs);
    TensorT<double> w = uniform<double>(probe.shape(), rng, -1.0, 1.0, false);

    auto eval = [&]() {
        TensorT<double> y = f(nullptr, inputs);
        double acc = 0.0;
        auto yd = y.data();
        auto wd = w.data();
        for (std::size_t i = 0; i < yd.size(); ++i) acc += yd[i] * wd[i];
        return acc;
    };

    std::vector<TensorT<double>> checked = inputs;
    for (const auto& p : opts.leaves) checked.push_back(p);
    for (auto& t : checked) t.zero_grad();

    GraphT<double> g;
    TensorT<double> y = f(&g, inputs);
    TensorT<double> loss = sum_all(&g, mul(&g, y, w));
    g.backward(loss);

    std::vector<std::vector<double>> analytic;
    for (auto& t : checked) analytic.emplace_back(t.grad().begin(), t.grad().end());

    double worst = 0.0;
    const double h = opts.step;
    for (std::size_t i = 0; i < checked.size(); ++i) {
        auto xd = checked[i].data();
        for (std::size_t k = 0; k < xd.size(); ++k) {
            const double orig = xd[k];
            xd[k] = orig + h;
            const double fp = eval();
            xd[k] = orig - h;
            const double fm = eval();
            xd[k] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i][k];
            const double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace balf
