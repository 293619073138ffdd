#pragma once

#include <array>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "balf/tensor.hpp"

namespace balf {
namespace blur {

/// Normalized motion-blur point spread function on an odd k x k grid,
/// row-major, non-negative, summing to 1, center of mass at the center.
struct BlurKernel {
    int k = 1;
    std::vector<double> weights;

    double at(int i, int j) const { return weights[static_cast<std::size_t>(i) * k + j]; }
};

struct BlurLevel {
    std::string name;
    int max_kernel = 0;   // odd upper bound on the PSF side
    double curvature = 0; // per-step heading noise (radians std)
    int steps = 0;        // trajectory sample count
};

const BlurLevel& level_easy();
const BlurLevel& level_hard();
const BlurLevel& level_tough();
const BlurLevel& level_by_name(const std::string& name);  // "easy" | "hard" | "tough"

/// Random 2D walk: uniform initial heading, unit steps, heading perturbed
/// per step by N(0, curvature). Scaled down only when the bounding-box
/// extent exceeds max_kernel - 2, then recentered on the centroid.
std::vector<std::array<double, 2>> sample_trajectory(std::mt19937_64& rng, const BlurLevel& level);

/// Deposits the polyline at uniform arc-length samples with bilinear
/// splatting, recentered so the center of mass lands exactly mid-kernel.
BlurKernel rasterize_psf(const std::vector<std::array<double, 2>>& traj, int k);

/// 2D correlation with reflect borders, no clamping. Exposed separately so
/// linearity in the image can be tested before the [0,1] clamp.
Tensor correlate_reflect(const Tensor& image, const BlurKernel& kern);

/// correlate_reflect followed by a clamp to [0,1].
Tensor apply_blur(const Tensor& image, const BlurKernel& kern);

/// Trajectory -> PSF (side max_kernel) -> blurred image, returning the
/// kernel for reproducibility.
std::pair<Tensor, BlurKernel> synth_pair(const Tensor& sharp, const BlurLevel& level,
                                         std::mt19937_64& rng);

/// Mean absolute 5-point Laplacian; a simple sharpness statistic.
double mean_abs_laplacian(const Tensor& image);

}  // namespace blur
}  // namespace balf
