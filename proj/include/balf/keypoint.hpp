#pragma once

#include <vector>

namespace balf {

/// Sub-image location: x = column, y = row, origin top-left. Detection
/// emits integer coordinates; imported or warped keypoints may be
/// fractional. Score lies in [0,1].
struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    double score = 1.0;
};

using Keypoints = std::vector<Keypoint>;

/// Ordering used everywhere a ranked list is needed: descending score,
/// ties broken by smaller y then smaller x.
inline bool score_order(const Keypoint& a, const Keypoint& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
}

}  // namespace balf
