#include "balf/model.hpp"

#include <algorithm>
#include <random>
#include <string>

namespace balf {

void ModelConfig::validate() const {
    if (n < 1) throw Error("config: pyramid depth must be >= 1");
    if (static_cast<int>(stage_channels.size()) != n)
        throw Error("config: stage_channels must list one width per stage (" +
                    std::to_string(n) + ")");
    for (int c : stage_channels) {
        if (c <= 0) throw Error("config: stage widths must be positive");
        if (c % 2) throw Error("config: stage widths must be even (channel halves)");
        if (use_rmab && c % se_reduction)
            throw Error("config: stage width " + std::to_string(c) +
                        " not divisible by se_reduction " + std::to_string(se_reduction));
    }
    if (block_size < 1 || grid_size < 1) throw Error("config: partition sizes must be >= 1");
    if (head_hidden < 1) throw Error("config: head_hidden must be >= 1");
    if (se_reduction < 1) throw Error("config: se_reduction must be >= 1");
    if (expansion < 1) throw Error("config: expansion must be >= 1");
    if (in_channels < 1) throw Error("config: in_channels must be >= 1");
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    std::mt19937_64 rng(seed);

    m.stem = blocks::make_dense(m.params, "stem", config.in_channels, config.stage_channels[0], rng);

    int c_prev = config.stage_channels[0];
    for (int k = 0; k < config.n; ++k) {
        const int c = config.stage_channels[static_cast<std::size_t>(k)];
        const std::string prefix = "stage" + std::to_string(k + 1);
        Stage st;
        st.cmlp = blocks::make_channel_mlp(m.params, prefix + ".cmlp", c_prev, c,
                                           config.expansion, rng);
        st.gmlp = blocks::make_multi_axis_gmlp(m.params, prefix + ".gmlp", c, config.block_size,
                                               config.grid_size, rng);
        if (config.use_rmab)
            st.rmab = blocks::make_rmab(m.params, prefix + ".rmab", c, config.expansion,
                                        config.se_reduction, rng);
        m.stages.push_back(std::move(st));
        c_prev = c;
    }

    m.head_fc1 = blocks::make_dense(m.params, "head.fc1", config.c_last(), config.head_hidden, rng);
    m.head_fc2 = blocks::make_dense(m.params, "head.fc2", config.head_hidden,
                                    config.response_channels(), rng);
    return m;
}

std::size_t param_count(const Model& m) { return m.params.value_count(); }

namespace {

int round_up(int v, int mult) { return ((v + mult - 1) / mult) * mult; }

}  // namespace

Tensor encode(Graph* g, const Model& m, const Tensor& image, bool allow_pad) {
    if (!image.defined() || image.rank() != 3 || image.dim(2) != m.config.in_channels)
        throw ShapeError("encode: image must be [H,W," + std::to_string(m.config.in_channels) +
                         "]");
    const int H = image.dim(0), W = image.dim(1);
    const int mult = m.config.pad_multiple();
    const int Hp = round_up(H, mult), Wp = round_up(W, mult);
    Tensor x = image;
    if (Hp != H || Wp != W) {
        if (!allow_pad)
            throw ShapeError("encode: extents " + image.shape().str() +
                             " not divisible by " + std::to_string(mult) +
                             " and padding is disabled");
        x = reflect_pad_br(g, x, Hp, Wp);
    }

    x = dense_channels(g, x, m.stem.w, m.stem.b);
    for (const auto& st : m.stages) {
        x = blocks::channel_mlp(g, x, st.cmlp);
        x = blocks::multi_axis_gmlp(g, x, st.gmlp);
        if (st.rmab) x = blocks::rmab(g, x, *st.rmab);
        x = maxpool2(g, x);
    }
    return x;
}

ResponseMap infer_response(Graph* g, const Model& m, const Tensor& image) {
    Tensor f = encode(g, m, image);
    Tensor h = dense_channels(g, f, m.head_fc1.w, m.head_fc1.b);
    h = gelu(g, h);
    h = dense_channels(g, h, m.head_fc2.w, m.head_fc2.b);
    h = softmax_channels(g, h);
    ResponseMap r;
    r.padded = depth_to_space(g, h, m.config.n);
    r.h = image.dim(0);
    r.w = image.dim(1);
    return r;
}

Tensor score_map(Graph* g, const Model& m, const Tensor& image) {
    ResponseMap r = infer_response(g, m, image);
    if (r.padded.dim(0) == r.h && r.padded.dim(1) == r.w) return r.padded;
    return crop_tl(g, r.padded, r.h, r.w);
}

Keypoints detect(const Model& m, const Tensor& image, int max_k, double threshold) {
    if (max_k < 1) throw Error("detect: max_k must be >= 1");
    if (threshold < 0.0 || threshold >= 1.0) throw Error("detect: threshold must be in [0,1)");
    ResponseMap rm = infer_response(nullptr, m, image);
    const Tensor& r = rm.padded;
    const int Hp = r.dim(0), Wp = r.dim(1);
    const int cell = m.config.downsample();

    Keypoints cands;
    for (int u = 0; u < Hp / cell; ++u) {
        if ((u + 1) * cell > rm.h) continue;  // cell overlaps bottom padding
        for (int v = 0; v < Wp / cell; ++v) {
            if ((v + 1) * cell > rm.w) continue;
            int bi = u * cell, bj = v * cell;
            float best = r.at(bi, bj, 0);
            for (int i = u * cell; i < (u + 1) * cell; ++i)
                for (int j = v * cell; j < (v + 1) * cell; ++j)
                    if (r.at(i, j, 0) > best) {
                        best = r.at(i, j, 0);
                        bi = i;
                        bj = j;
                    }
            if (best > threshold)
                cands.push_back(Keypoint{static_cast<double>(bj), static_cast<double>(bi),
                                         static_cast<double>(best)});
        }
    }
    std::sort(cands.begin(), cands.end(), score_order);
    if (static_cast<int>(cands.size()) > max_k) cands.resize(static_cast<std::size_t>(max_k));
    return cands;
}

}  // namespace balf
