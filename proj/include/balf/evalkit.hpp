#pragma once

#include <array>
#include <vector>

#include "balf/keypoint.hpp"

namespace balf {
namespace ev {

/// Row-major 3x3 projective transform mapping (x, y) in the reference
/// image to the target image. Kept normalized with m[8] == 1 when nonzero.
struct Homography {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Homography identity() { return {}; }
    static Homography translation(double tx, double ty) {
        return {{1, 0, tx, 0, 1, ty, 0, 0, 1}};
    }

    double det() const;
    Homography inverse() const;  // error when |det| <= 1e-12
    void normalize();            // divide through by m[8] when nonzero
};

struct ImageDims {
    int h = 0, w = 0;
};

/// Projective map with perspective division; |denominator| <= 1e-12 is an
/// error (point at infinity).
std::array<double, 2> warp_point(const Homography& hm, double x, double y);

/// sqrt(|det J|) of the homography's 2x2 Jacobian at (x, y): the local
/// area scale factor, used to size warped keypoint regions.
double jacobian_scale(const Homography& hm, double x, double y);

/// Keypoints are modeled as axis-aligned squares of half-side rho; the
/// reference square is warped (center mapped, side Jacobian-scaled) and
/// the result is 1 - IoU of the two squares.
double region_overlap_error(const Keypoint& ref, const Keypoint& tgt, const Homography& hm,
                            double rho);

/// Keeps a reference keypoint iff its warped center lies within the target
/// bounds inset by rho (inclusive); symmetrically for target keypoints
/// through the inverse map. Points that warp to infinity are dropped.
std::pair<Keypoints, Keypoints> shared_region_filter(const Keypoints& ref, const Keypoints& tgt,
                                                     const Homography& hm, ImageDims ref_dims,
                                                     ImageDims tgt_dims, double rho);

struct Match {
    int ref = 0, tgt = 0;
    double err = 0.0;
};

/// Greedy one-to-one matching: candidate pairs with error strictly below
/// eps, taken in ascending (error, ref index, target index) order, each
/// index used at most once.
std::vector<Match> match_one_to_one(const std::vector<std::vector<double>>& errors, double eps);

struct MatchResult {
    Keypoints filtered_ref, filtered_tgt;  // post top-k, post shared-region filter
    std::vector<Match> matches;            // indices into the filtered lists
    double repeatability = 0.0;            // |matches| / min(filtered counts); 0 when min is 0
};

/// The full protocol: top_k per side by score, shared-region filter,
/// pairwise overlap errors, greedy matching.
MatchResult repeatability(const Keypoints& ref, const Keypoints& tgt, const Homography& hm,
                          ImageDims ref_dims, ImageDims tgt_dims, int top_k = 1000,
                          double eps = 0.4, double rho = 4.0);

}  // namespace ev
}  // namespace balf
