#pragma once

// Shared synthetic-data generators for tests and the acceptance runner.

#include <random>

#include "balf/keypoint.hpp"
#include "balf/tensor.hpp"

namespace balf {
namespace testutil {

struct CornerImage {
    Tensor image;  // [size, size, 1]
    Keypoints gt;  // cell intersections, fractional coordinates
};

/// Checkerboard of pitch x pitch cells with jittered dark/light values, so
/// every cell intersection is a strong corner with known sub-pixel
/// location. The grid offset is 4 mod 8, which centers each corner inside
/// one 8x8 cell of the detector's response grid (x = offset - 0.5 + k*pitch
/// is 3.5 mod 8).
inline CornerImage make_corner_image(std::mt19937_64& rng, int size = 256, int pitch = 16) {
    std::uniform_real_distribution<double> dark(0.05, 0.30), light(0.70, 0.95);
    std::uniform_int_distribution<int> off_pick(0, 1);
    const int off_x = off_pick(rng) ? 4 : 12;
    const int off_y = off_pick(rng) ? 4 : 12;

    // Cell values drawn once per (row, col) cell index, checkerboard parity.
    const int cells = size / pitch + 2;
    std::vector<float> value(static_cast<std::size_t>(cells) * cells);
    for (int a = 0; a < cells; ++a)
        for (int b = 0; b < cells; ++b)
            value[a * cells + b] = static_cast<float>((a + b) % 2 ? light(rng) : dark(rng));

    CornerImage out;
    out.image = Tensor::zeros(Shape(size, size, 1));
    for (int i = 0; i < size; ++i) {
        const int a = (i - off_y + pitch) / pitch;  // +pitch keeps the index non-negative
        for (int j = 0; j < size; ++j) {
            const int b = (j - off_x + pitch) / pitch;
            out.image.at(i, j, 0) = value[a * cells + b];
        }
    }
    for (int ky = 0;; ++ky) {
        const double y = off_y + ky * pitch - 0.5;
        if (y > size - 1) break;
        for (int kx = 0;; ++kx) {
            const double x = off_x + kx * pitch - 0.5;
            if (x > size - 1) break;
            out.gt.push_back({x, y, 1.0});
        }
    }
    return out;
}

/// Smooth multi-octave value noise in [0,1]: a stand-in for natural image
/// content (gradients everywhere, structure at several scales).
inline Tensor make_noise_image(std::mt19937_64& rng, int size = 256) {
    Tensor img = Tensor::zeros(Shape(size, size, 1));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int grids[3] = {32, 16, 8};
    const double weights[3] = {0.5, 0.3, 0.2};
    for (int o = 0; o < 3; ++o) {
        const int cell = grids[o];
        const int n = size / cell + 2;
        std::vector<double> lattice(static_cast<std::size_t>(n) * n);
        for (auto& v : lattice) v = u(rng);
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                const double fy = static_cast<double>(i) / cell;
                const double fx = static_cast<double>(j) / cell;
                const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
                const double ty = fy - y0, tx = fx - x0;
                const double v = (1 - ty) * ((1 - tx) * lattice[y0 * n + x0] +
                                             tx * lattice[y0 * n + x0 + 1]) +
                                 ty * ((1 - tx) * lattice[(y0 + 1) * n + x0] +
                                       tx * lattice[(y0 + 1) * n + x0 + 1]);
                img.at(i, j, 0) += static_cast<float>(weights[o] * v);
            }
    }
    return img;
}

}  // namespace testutil
}  // namespace balf
