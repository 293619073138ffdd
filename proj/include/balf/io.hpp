#pragma once

#include <string>
#include <vector>

#include "balf/blursynth.hpp"
#include "balf/evalkit.hpp"
#include "balf/keypoint.hpp"
#include "balf/model.hpp"
#include "balf/supervision.hpp"
#include "balf/tensor.hpp"

namespace balf {
namespace io {

/// PGM (P5) or PPM (P6, converted to luma), maxval 255 or 65535, scaled to
/// [0,1]. Returns [H,W,1].
Tensor read_image(const std::string& path);

/// Binary PGM; values clamped to [0,1] and quantized to 8 or 16 bits
/// (16-bit samples are big-endian per the format).
void write_image_pgm(const std::string& path, const Tensor& image, bool sixteen_bit = false);

/// Binary PPM from an interleaved RGB byte buffer of size h*w*3.
void write_image_ppm(const std::string& path, int h, int w,
                     const std::vector<unsigned char>& rgb);

/// Text lines `x,y,score` (score optional, default 1.0); `#` comments and
/// blank lines ignored. Malformed lines report their line number.
Keypoints read_keypoints(const std::string& path);
void write_keypoints(const std::string& path, const Keypoints& kpts);  // 6 decimals

/// Nine whitespace-separated reals, row-major, normalized so m[2][2] = 1
/// when nonzero. Singular matrices are rejected.
ev::Homography read_homography(const std::string& path);

/// Binary model container: magic, format version, config block, then every
/// parameter (name, shape, raw 32-bit floats) in canonical order.
void save_model(const std::string& path, const Model& m);
Model load_model(const std::string& path);

struct ManifestEntry {
    std::string sharp;
    std::string blurred;
    std::string keypoints;  // empty = derive with the built-in detector
};

/// Line-oriented dataset index: `sharp blurred [keypoints]` per line,
/// paths resolved relative to the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);

/// Reads every manifest entry, checking that paired images share
/// dimensions; entries without a keypoint file fall back to the built-in
/// reference detector with gt_max_k keypoints.
std::vector<sup::TrainingSample> load_dataset(const std::string& manifest_path,
                                              int gt_max_k = 1000);

/// Plain-text matrix: k rows of k weights.
void write_kernel(const std::string& path, const blur::BlurKernel& kern);

}  // namespace io
}  // namespace balf
