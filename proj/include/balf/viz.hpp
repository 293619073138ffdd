#pragma once

#include <string>

#include "balf/evalkit.hpp"
#include "balf/tensor.hpp"

namespace balf {
namespace viz {

/// Side-by-side figure: both grayscale images, filtered keypoints as red
/// crosses, matched pairs joined by green lines. Written as binary PPM.
void draw_matches(const std::string& path, const Tensor& ref_img, const Tensor& tgt_img,
                  const ev::MatchResult& result);

}  // namespace viz
}  // namespace balf
