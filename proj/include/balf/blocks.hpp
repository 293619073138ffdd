#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "balf/ops.hpp"

namespace balf {

/// Ordered, named parameter collection. Registration order is the model's
/// canonical order, used for seeding, serialization and the optimizer.
template <typename T>
struct ParamStoreT {
    std::vector<std::pair<std::string, TensorT<T>>> items;

    TensorT<T> add(const std::string& name, TensorT<T> t) {
        items.emplace_back(name, t);
        return t;
    }

    TensorT<T>* find(const std::string& name) {
        for (auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }

    std::vector<TensorT<T>> tensors() {
        std::vector<TensorT<T>> out;
        out.reserve(items.size());
        for (auto& [n, t] : items) out.push_back(t);
        return out;
    }

    std::size_t value_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [n, t] : items) t.zero_grad();
    }
};

using ParamStore = ParamStoreT<float>;

namespace blocks {

template <typename T>
struct DenseP {
    TensorT<T> w, b;
};

template <typename T>
struct LayerNormP {
    TensorT<T> gamma, beta;
};

/// Fan-in scaled uniform init, bias zero. Draws exactly Cin·Cout values
/// from the stream, so initialization is a pure function of (seed,
/// registration order).
template <typename T>
DenseP<T> make_dense(ParamStoreT<T>& ps, const std::string& prefix, int cin, int cout,
                     std::mt19937_64& rng) {
    const T s = static_cast<T>(std::sqrt(1.0 / cin));
    DenseP<T> d;
    d.w = ps.add(prefix + ".w", uniform<T>(Shape(cin, cout), rng, -s, s, true));
    d.b = ps.add(prefix + ".b", TensorT<T>::zeros(Shape(cout), true));
    return d;
}

/// Spatial-gating projection starts near identity: weights ~ 0, bias 1, so
/// the gate initially passes its input through unchanged.
template <typename T>
DenseP<T> make_spatial_dense(ParamStoreT<T>& ps, const std::string& prefix, int L,
                             std::mt19937_64& rng) {
    const T s = static_cast<T>(1e-4);
    DenseP<T> d;
    d.w = ps.add(prefix + ".w", uniform<T>(Shape(L, L), rng, -s, s, true));
    d.b = ps.add(prefix + ".b", TensorT<T>::full(Shape(L), T(1), true));
    return d;
}

template <typename T>
LayerNormP<T> make_layer_norm(ParamStoreT<T>& ps, const std::string& prefix, int c) {
    LayerNormP<T> ln;
    ln.gamma = ps.add(prefix + ".gamma", TensorT<T>::full(Shape(c), T(1), true));
    ln.beta = ps.add(prefix + ".beta", TensorT<T>::zeros(Shape(c), true));
    return ln;
}

// ---------------------------------------------------------------------------
// channel MLP block
// ---------------------------------------------------------------------------

template <typename T>
struct ChannelMlpP {
    LayerNormP<T> ln;
    DenseP<T> fc1, fc2;
    int cin = 0, cout = 0;
};

template <typename T>
ChannelMlpP<T> make_channel_mlp(ParamStoreT<T>& ps, const std::string& prefix, int cin, int cout,
                                int expansion, std::mt19937_64& rng) {
    ChannelMlpP<T> p;
    p.cin = cin;
    p.cout = cout;
    p.ln = make_layer_norm(ps, prefix + ".ln", cin);
    p.fc1 = make_dense(ps, prefix + ".fc1", cin, expansion * cin, rng);
    p.fc2 = make_dense(ps, prefix + ".fc2", expansion * cin, cout, rng);
    return p;
}

/// LN -> dense(C -> aC) -> GELU -> dense(aC -> C'); residual when C == C'.
template <typename T>
TensorT<T> channel_mlp(GraphT<T>* g, const TensorT<T>& x, const ChannelMlpP<T>& p) {
    TensorT<T> h = layer_norm(g, x, p.ln.gamma, p.ln.beta);
    h = dense_channels(g, h, p.fc1.w, p.fc1.b);
    h = gelu(g, h);
    h = dense_channels(g, h, p.fc2.w, p.fc2.b);
    return p.cin == p.cout ? add(g, h, x) : h;
}

// ---------------------------------------------------------------------------
// gated spatial MLP (applied along the position axis of a partition)
// ---------------------------------------------------------------------------

template <typename T>
struct GatedSpatialMlpP {
    LayerNormP<T> ln;
    DenseP<T> fc;     // C -> 2C
    LayerNormP<T> ln2;
    DenseP<T> sp;     // positions L -> L, near-identity gate at init
    DenseP<T> fc_out; // C -> C
    int c = 0, l = 0;
};

template <typename T>
GatedSpatialMlpP<T> make_gated_spatial_mlp(ParamStoreT<T>& ps, const std::string& prefix, int c,
                                           int l, std::mt19937_64& rng) {
    GatedSpatialMlpP<T> p;
    p.c = c;
    p.l = l;
    p.ln = make_layer_norm(ps, prefix + ".ln", c);
    p.fc = make_dense(ps, prefix + ".fc", c, 2 * c, rng);
    p.ln2 = make_layer_norm(ps, prefix + ".ln2", c);
    p.sp = make_spatial_dense(ps, prefix + ".sp", l, rng);
    p.fc_out = make_dense(ps, prefix + ".fc_out", c, c, rng);
    return p;
}

/// Per group: z = GELU(dense(LN(U))) to 2C channels, split halves z1/z2,
/// gate z1 by a spatial projection of LN(z2), project back to C, add U.
template <typename T>
TensorT<T> gated_spatial_mlp(GraphT<T>* g, const TensorT<T>& u, const GatedSpatialMlpP<T>& p) {
    if (u.rank() != 3 || u.dim(2) != p.c || u.dim(1) != p.l)
        throw ShapeError("gated_spatial_mlp: input " + u.shape().str() + " does not match block (L=" +
                         std::to_string(p.l) + ", C=" + std::to_string(p.c) + ")");
    TensorT<T> z = layer_norm(g, u, p.ln.gamma, p.ln.beta);
    z = dense_channels(g, z, p.fc.w, p.fc.b);
    z = gelu(g, z);
    TensorT<T> z1 = slice_channels(g, z, 0, p.c);
    TensorT<T> z2 = slice_channels(g, z, p.c, 2 * p.c);
    z2 = layer_norm(g, z2, p.ln2.gamma, p.ln2.beta);
    z2 = dense_positions(g, z2, p.sp.w, p.sp.b);
    TensorT<T> gated = mul(g, z1, z2);
    TensorT<T> o = dense_channels(g, gated, p.fc_out.w, p.fc_out.b);
    return add(g, o, u);
}

// ---------------------------------------------------------------------------
// multi-axis gated MLP block
// ---------------------------------------------------------------------------

template <typename T>
struct MultiAxisGmlpP {
    LayerNormP<T> ln;
    DenseP<T> fc_in;
    GatedSpatialMlpP<T> local, global;
    DenseP<T> fc_out;
    int c = 0, b = 0, grid = 0;
};

template <typename T>
MultiAxisGmlpP<T> make_multi_axis_gmlp(ParamStoreT<T>& ps, const std::string& prefix, int c, int b,
                                       int grid, std::mt19937_64& rng) {
    if (c % 2) throw ShapeError("multi_axis_gmlp: channel count must be even to split halves");
    MultiAxisGmlpP<T> p;
    p.c = c;
    p.b = b;
    p.grid = grid;
    p.ln = make_layer_norm(ps, prefix + ".ln", c);
    p.fc_in = make_dense(ps, prefix + ".fc_in", c, c, rng);
    p.local = make_gated_spatial_mlp(ps, prefix + ".local", c / 2, b * b, rng);
    p.global = make_gated_spatial_mlp(ps, prefix + ".global", c / 2, grid * grid, rng);
    p.fc_out = make_dense(ps, prefix + ".fc_out", c, c, rng);
    return p;
}

/// LN -> dense C->C -> split channel halves; the local half mixes within
/// b×b blocks, the global half across the g×g strided grid; halves are
/// re-assembled, projected C->C and added to the input.
template <typename T>
TensorT<T> multi_axis_gmlp(GraphT<T>* g, const TensorT<T>& x, const MultiAxisGmlpP<T>& p) {
    if (x.rank() != 3) throw ShapeError("multi_axis_gmlp: input must be [H,W,C]");
    const int H = x.dim(0), W = x.dim(1);
    if (H % p.b || W % p.b || H % p.grid || W % p.grid)
        throw ShapeError("multi_axis_gmlp: extents " + x.shape().str() +
                         " not divisible by b=" + std::to_string(p.b) +
                         ", g=" + std::to_string(p.grid) + " (pad upstream)");
    TensorT<T> h = layer_norm(g, x, p.ln.gamma, p.ln.beta);
    h = dense_channels(g, h, p.fc_in.w, p.fc_in.b);
    TensorT<T> hl = slice_channels(g, h, 0, p.c / 2);
    TensorT<T> hg = slice_channels(g, h, p.c / 2, p.c);

    hl = block_partition(g, hl, p.b);
    hl = gated_spatial_mlp(g, hl, p.local);
    hl = block_unpartition(g, hl, p.b, H, W);

    hg = grid_partition(g, hg, p.grid);
    hg = gated_spatial_mlp(g, hg, p.global);
    hg = grid_unpartition(g, hg, p.grid, H, W);

    TensorT<T> cat = concat_channels(g, hl, hg);
    TensorT<T> o = dense_channels(g, cat, p.fc_out.w, p.fc_out.b);
    return add(g, o, x);
}

// ---------------------------------------------------------------------------
// squeeze-and-excitation
// ---------------------------------------------------------------------------

template <typename T>
struct SeP {
    DenseP<T> fc1, fc2;
    int c = 0, r = 0;
};

template <typename T>
SeP<T> make_se(ParamStoreT<T>& ps, const std::string& prefix, int c, int r, std::mt19937_64& rng) {
    if (r <= 0 || c % r)
        throw ShapeError("se_block: channels " + std::to_string(c) +
                         " not divisible by reduction " + std::to_string(r));
    SeP<T> p;
    p.c = c;
    p.r = r;
    p.fc1 = make_dense(ps, prefix + ".fc1", c, c / r, rng);
    p.fc2 = make_dense(ps, prefix + ".fc2", c / r, c, rng);
    return p;
}

/// Per-channel gate from the spatial mean: sigmoid bottleneck MLP, then a
/// broadcast multiply. Output magnitude never exceeds the input's.
template <typename T>
TensorT<T> se_block(GraphT<T>* g, const TensorT<T>& x, const SeP<T>& p) {
    TensorT<T> s = mean_spatial(g, x);
    s = dense_channels(g, s, p.fc1.w, p.fc1.b);
    s = gelu(g, s);
    s = dense_channels(g, s, p.fc2.w, p.fc2.b);
    s = sigmoid(g, s);
    return mul_channels(g, x, s);
}

// ---------------------------------------------------------------------------
// residual MLP attention block
// ---------------------------------------------------------------------------

template <typename T>
struct RmabP {
    LayerNormP<T> ln;
    DenseP<T> fc1, fc2;
    SeP<T> se;
    int c = 0;
};

template <typename T>
RmabP<T> make_rmab(ParamStoreT<T>& ps, const std::string& prefix, int c, int expansion, int se_r,
                   std::mt19937_64& rng) {
    RmabP<T> p;
    p.c = c;
    p.ln = make_layer_norm(ps, prefix + ".ln", c);
    p.fc1 = make_dense(ps, prefix + ".fc1", c, expansion * c, rng);
    p.fc2 = make_dense(ps, prefix + ".fc2", expansion * c, c, rng);
    p.se = make_se(ps, prefix + ".se", c, se_r, rng);
    return p;
}

/// X + SE(dense2(GELU(dense1(LN(X))))).
template <typename T>
TensorT<T> rmab(GraphT<T>* g, const TensorT<T>& x, const RmabP<T>& p) {
    TensorT<T> h = layer_norm(g, x, p.ln.gamma, p.ln.beta);
    h = dense_channels(g, h, p.fc1.w, p.fc1.b);
    h = gelu(g, h);
    h = dense_channels(g, h, p.fc2.w, p.fc2.b);
    h = se_block(g, h, p.se);
    return add(g, x, h);
}

}  // namespace blocks
}  // namespace balf
