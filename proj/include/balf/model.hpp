#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "balf/blocks.hpp"
#include "balf/keypoint.hpp"

namespace balf {

struct ModelConfig {
    int n = 3;                                  // pyramid depth; downsample 2^n
    std::vector<int> stage_channels{24, 48, 176};
    int block_size = 8;                         // local mixing axis b
    int grid_size = 8;                          // global mixing axis g
    int head_hidden = 128;
    int se_reduction = 4;
    int expansion = 2;
    bool use_rmab = true;
    int in_channels = 1;

    int downsample() const { return 1 << n; }
    int response_channels() const { return 1 << (2 * n); }  // 4^n
    int c_last() const { return stage_channels.back(); }
    // Input extents are reflect-padded up to this multiple so every stage's
    // partitions and pools divide evenly.
    int pad_multiple() const { return (1 << n) * std::lcm(block_size, grid_size); }

    void validate() const;
};

struct Stage {
    blocks::ChannelMlpP<float> cmlp;
    blocks::MultiAxisGmlpP<float> gmlp;
    std::optional<blocks::RmabP<float>> rmab;
};

/// The full detector: stem dense, N stages of {channel MLP, multi-axis
/// gated MLP, RMAB, maxpool2}, then the detection head. `params` shares
/// storage with the typed block structs; its order is canonical.
struct Model {
    ModelConfig config;
    ParamStore params;
    blocks::DenseP<float> stem;
    std::vector<Stage> stages;
    blocks::DenseP<float> head_fc1, head_fc2;
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

std::size_t param_count(const Model& m);

/// Encoder output [Hp/2^n, Wp/2^n, C_last] where (Hp,Wp) is the padded
/// size. With allow_pad=false, non-divisible inputs are an error instead.
Tensor encode(Graph* g, const Model& m, const Tensor& image, bool allow_pad = true);

/// Full-resolution response before cropping, plus the original extents.
struct ResponseMap {
    Tensor padded;  // [Hp, Wp, 1]
    int h = 0, w = 0;
};
ResponseMap infer_response(Graph* g, const Model& m, const Tensor& image);

/// Response map cropped back to the input extents; values in (0,1), every
/// un-cropped 2^n x 2^n cell sums to 1.
Tensor score_map(Graph* g, const Model& m, const Tensor& image);

/// One candidate per response cell (its max pixel), thresholded, cells
/// overlapping padding dropped, top max_k by score.
Keypoints detect(const Model& m, const Tensor& image, int max_k, double threshold = 0.02);

}  // namespace balf
