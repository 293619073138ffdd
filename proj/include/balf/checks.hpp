#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "balf/blocks.hpp"
#include "balf/gradcheck.hpp"

namespace balf {
namespace checks {

struct BlockCheck {
    std::string name;
    double worst = 0.0;  // max relative error across seeds and elements
};

namespace detail {

// Parameters are re-drawn from a generic range so the check does not run at
// a special point (fresh spatial-mix weights are nearly zero, for example).
inline void refill(std::vector<TensorT<double>> tensors, std::mt19937_64& rng,
                   double mag = 0.6) {
    std::uniform_real_distribution<double> d(-mag, mag);
    for (auto& t : tensors)
        for (auto& v : t.data()) v = d(rng);
}

inline double check_over_seeds(const GradcheckFn& f, const std::vector<Shape>& shapes,
                               int seeds, const GradcheckOpts& opts = {}) {
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) worst = std::max(worst, gradcheck(f, shapes, 1000 + s, opts));
    return worst;
}

}  // namespace detail

/// Finite-difference verification of every differentiable block, in double
/// precision, over small shapes. Each entry's `worst` should stay below 1e-4.
inline std::vector<BlockCheck> run_gradient_suite(int seeds = 5) {
    using D = TensorT<double>;
    using G = GraphT<double>;
    std::vector<BlockCheck> out;
    auto push = [&](const std::string& name, double worst) { out.push_back({name, worst}); };

    push("dense_channels",
         detail::check_over_seeds(
             [](G* g, const std::vector<D>& in) { return dense_channels(g, in[0], in[1], in[2]); },
             {Shape(3, 4, 5), Shape(5, 6), Shape(6)}, seeds));

    push("gelu", detail::check_over_seeds(
                     [](G* g, const std::vector<D>& in) { return gelu(g, in[0]); },
                     {Shape(4, 4, 3)}, seeds));

    push("layer_norm",
         detail::check_over_seeds(
             [](G* g, const std::vector<D>& in) { return layer_norm(g, in[0], in[1], in[2]); },
             {Shape(3, 4, 6), Shape(6), Shape(6)}, seeds));

    push("softmax_channels", detail::check_over_seeds(
                                 [](G* g, const std::vector<D>& in) {
                                     return softmax_channels(g, in[0]);
                                 },
                                 {Shape(4, 4, 8)}, seeds));

    {
        // The argmax must not flip under the FD probe: snap values to a
        // 0.01 grid, then separate the four window positions by 0.003 each,
        // leaving a minimum gap of 1e-3 between entries of any 2x2 window.
        GradcheckOpts opts;
        opts.adjust = [](std::vector<D>& in) {
            D& x = in[0];
            for (int i = 0; i < x.dim(0); ++i)
                for (int j = 0; j < x.dim(1); ++j)
                    for (int c = 0; c < x.dim(2); ++c) {
                        double v = std::round(x.at(i, j, c) * 100.0) / 100.0;
                        x.at(i, j, c) = v + 0.003 * ((i % 2) * 2 + (j % 2));
                    }
        };
        push("maxpool2", detail::check_over_seeds(
                             [](G* g, const std::vector<D>& in) { return maxpool2(g, in[0]); },
                             {Shape(6, 6, 3)}, seeds, opts));
    }

    {
        double worst = 0.0;
        for (int s = 0; s < seeds; ++s) {
            std::mt19937_64 rng(50 + s);
            ParamStoreT<double> ps;
            auto p = blocks::make_gated_spatial_mlp(ps, "g", 4, 4, rng);
            detail::refill(ps.tensors(), rng);
            GradcheckOpts opts;
            opts.leaves = ps.tensors();
            worst = std::max(
                worst, gradcheck([&p](G* g, const std::vector<D>& in) {
                                     return blocks::gated_spatial_mlp(g, in[0], p);
                                 },
                                 {Shape(2, 4, 4)}, 1000 + s, opts));
        }
        push("gated_spatial_mlp", worst);
    }

    {
        // The deepest composite: stacked layer norms and the gating product
        // amplify FD round-off, so it runs at a slightly larger step and
        // tamer parameter draws (verified against step scaling: the error
        // falls ~1/h, the signature of noise rather than a gradient defect).
        double worst = 0.0;
        for (int s = 0; s < seeds; ++s) {
            std::mt19937_64 rng(60 + s);
            ParamStoreT<double> ps;
            auto p = blocks::make_multi_axis_gmlp(ps, "m", 4, 2, 2, rng);
            detail::refill(ps.tensors(), rng, 0.4);
            GradcheckOpts opts;
            opts.leaves = ps.tensors();
            opts.step = 5e-5;
            worst = std::max(
                worst, gradcheck([&p](G* g, const std::vector<D>& in) {
                                     return blocks::multi_axis_gmlp(g, in[0], p);
                                 },
                                 {Shape(4, 4, 4)}, 1000 + s, opts));
        }
        push("multi_axis_gmlp", worst);
    }

    {
        double worst = 0.0;
        for (int s = 0; s < seeds; ++s) {
            std::mt19937_64 rng(70 + s);
            ParamStoreT<double> ps;
            auto p = blocks::make_se(ps, "s", 8, 4, rng);
            detail::refill(ps.tensors(), rng);
            GradcheckOpts opts;
            opts.leaves = ps.tensors();
            worst = std::max(worst, gradcheck([&p](G* g, const std::vector<D>& in) {
                                                  return blocks::se_block(g, in[0], p);
                                              },
                                              {Shape(4, 4, 8)}, 1000 + s, opts));
        }
        push("se_block", worst);
    }

    {
        double worst = 0.0;
        for (int s = 0; s < seeds; ++s) {
            std::mt19937_64 rng(80 + s);
            ParamStoreT<double> ps;
            auto p = blocks::make_rmab(ps, "r", 4, 2, 2, rng);
            detail::refill(ps.tensors(), rng);
            GradcheckOpts opts;
            opts.leaves = ps.tensors();
            worst = std::max(worst, gradcheck([&p](G* g, const std::vector<D>& in) {
                                                  return blocks::rmab(g, in[0], p);
                                              },
                                              {Shape(4, 4, 4)}, 1000 + s, opts));
        }
        push("rmab", worst);
    }

    {
        // Detection head at pyramid depth 1: dense -> GELU -> dense to 4
        // response channels, per-cell softmax, then the 2x2 rearrangement.
        // Moderate draws keep the softmax away from saturation, where true
        // gradients vanish below what finite differences can resolve.
        GradcheckOpts opts;
        opts.lo = -0.8;
        opts.hi = 0.8;
        push("detection_head",
             detail::check_over_seeds(
                 [](G* g, const std::vector<D>& in) {
                     D h = dense_channels(g, in[0], in[1], in[2]);
                     h = gelu(g, h);
                     h = dense_channels(g, h, in[3], in[4]);
                     h = softmax_channels(g, h);
                     return depth_to_space(g, h, 1);
                 },
                 {Shape(2, 2, 6), Shape(6, 8), Shape(8), Shape(8, 4), Shape(4)}, seeds, opts));
    }

    push("mse_loss", detail::check_over_seeds(
                         [](G* g, const std::vector<D>& in) { return mse_loss(g, in[0], in[1]); },
                         {Shape(4, 4, 2), Shape(4, 4, 2)}, seeds));

    return out;
}

}  // namespace checks
}  // namespace balf
