#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "balf/keypoint.hpp"
#include "balf/model.hpp"
#include "balf/tensor.hpp"

namespace balf {
namespace sup {

/// A sharp/blurred pair sharing ground-truth keypoint locations; the
/// keypoints are defined on the sharp image and inherited by the blurred one.
struct TrainingSample {
    Tensor sharp;
    Tensor blurred;
    Keypoints gt;
};

struct Range {
    double lo = 0.0, hi = 0.0;
};

struct AugmentConfig {
    Range rotation_deg{-30.0, 30.0};
    Range scale{0.7, 1.4};
    Range skew_deg{-10.0, 10.0};
    double perspective = 0.05;  // bottom-row jitter as a fraction of the crop side
    Range brightness{-0.2, 0.2};
    Range contrast{0.8, 1.25};
    Range gamma{0.8, 1.25};
    double noise_sigma = 0.02;
    int crop = 256;

    /// Geometric and photometric jitter disabled: a pure random crop.
    static AugmentConfig identity(int crop_size) {
        AugmentConfig c;
        c.rotation_deg = c.skew_deg = c.brightness = {0.0, 0.0};
        c.scale = c.contrast = c.gamma = {1.0, 1.0};
        c.perspective = 0.0;
        c.noise_sigma = 0.0;
        c.crop = crop_size;
        return c;
    }
};

struct TrainConfig {
    int batch = 4;
    int epochs = 50;
    double lr_initial = 1e-4;
    double lr_final = 1e-6;
    int decay_start = 20;   // constant lr through this epoch, then linear decay
    double sigma_gt = 0.5;  // std (px) of the rendered ground-truth Gaussians
    std::uint64_t seed = 0;
    double mix_sharp = 0.5;  // probability of training a step on the sharp image
};

/// Built-in corner detector standing in for an external keypoint source:
/// Shi-Tomasi minimum eigenvalue of the 3x3-windowed structure tensor after
/// a sigma=1 Gaussian pre-smooth, non-maximum suppression over a Chebyshev
/// radius of 4 px, scores normalized to a max of 1, top max_k.
Keypoints detect_reference_keypoints(const Tensor& sharp, int max_k);

/// Gaussian peak of height 1 at every keypoint, combined by max, truncated
/// beyond 3 sigma.
Tensor render_heatmap(const Keypoints& kpts, int h, int w, double sigma = 2.0);

/// Constant lr_initial through decay_start, then linear to lr_final at the
/// last epoch. Epochs are 1-based; out-of-range epochs are an error.
double lr_schedule(int epoch, const TrainConfig& tc);

/// One random crop + rotation/scale/skew/perspective applied identically to
/// both images and the keypoint coordinates, then independent photometric
/// jitter per image. Keypoints landing outside the crop are dropped.
TrainingSample augment(const TrainingSample& s, const AugmentConfig& cfg, std::mt19937_64& rng);

struct TrainLog {
    std::vector<double> epoch_loss;  // mean batch loss per epoch
    std::vector<double> step_loss;   // batch-mean loss per optimizer step
};

/// Heatmap-regression training: per epoch, shuffle, augment, forward the
/// score map on the blurred (or, with probability mix_sharp, sharp) crop,
/// mean-squared-error against the rendered ground truth, Adam update.
TrainLog train(const std::vector<TrainingSample>& dataset, const TrainConfig& tc,
               const AugmentConfig& ac, Model& model);

}  // namespace sup
}  // namespace balf
