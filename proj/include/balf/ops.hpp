#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <memory>
#include <random>
#include <type_traits>
#include <vector>

#include "balf/graph.hpp"
#include "balf/tensor.hpp"

// Differentiable operations. Every op takes the recording graph as its
// first argument; passing nullptr runs forward-only (used by finite
// difference evaluation). Gradients always accumulate with +=.

namespace balf {

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;
template <typename T>
using MapA = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CMapA = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

inline Eigen::Index ei(std::size_t n) { return static_cast<Eigen::Index>(n); }

// Training runs in single precision where Eigen's vectorized tanh/exp are
// plenty accurate; the wide-precision gradcheck path must use the libm
// functions so the analytic derivative formulas match forward to ~1 ulp.
template <typename T>
inline void tanh_inplace(T* p, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) {
        MapA<float> a(p, ei(n));
        a = a.tanh();
    } else {
        for (std::size_t i = 0; i < n; ++i) p[i] = std::tanh(p[i]);
    }
}

template <typename T>
inline void exp_inplace(T* p, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) {
        MapA<float> a(p, ei(n));
        a = a.exp();
    } else {
        for (std::size_t i = 0; i < n; ++i) p[i] = std::exp(p[i]);
    }
}

// Mirror an out-of-range index back into [0,n) without repeating the edge
// sample (period 2n-2), valid for arbitrarily deep padding.
inline int fold_reflect(int i, int n) {
    if (n == 1) return 0;
    const int p = 2 * n - 2;
    i %= p;
    if (i < 0) i += p;
    return i < n ? i : p - i;
}

template <typename T>
inline void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

}  // namespace detail

template <typename T>
TensorT<T> uniform(const Shape& s, std::mt19937_64& rng, T lo, T hi, bool requires_grad = false) {
    TensorT<T> t = TensorT<T>::zeros(s, requires_grad);
    std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.data()) v = static_cast<T>(d(rng));
    return t;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(GraphT<T>* g, const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const std::size_t n = a.numel();
    detail::MapA<T>(out.data().data(), detail::ei(n)) =
        detail::CMapA<T>(a.data().data(), detail::ei(n)) +
        detail::CMapA<T>(b.data().data(), detail::ei(n));
    if (g && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        g->record(out, [a = a, b = b, out]() mutable {
            const std::size_t m = out.numel();
            detail::CMapA<T> go(out.grad().data(), detail::ei(m));
            if (a.requires_grad())
                detail::MapA<T>(a.grad().data(), detail::ei(m)) += go;
            if (b.requires_grad())
                detail::MapA<T>(b.grad().data(), detail::ei(m)) += go;
        });
    }
    return out;
}

template <typename T>
TensorT<T> mul(GraphT<T>* g, const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const std::size_t n = a.numel();
    detail::MapA<T>(out.data().data(), detail::ei(n)) =
        detail::CMapA<T>(a.data().data(), detail::ei(n)) *
        detail::CMapA<T>(b.data().data(), detail::ei(n));
    if (g && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        g->record(out, [a = a, b = b, out]() mutable {
            const std::size_t m = out.numel();
            detail::CMapA<T> go(out.grad().data(), detail::ei(m));
            if (a.requires_grad())
                detail::MapA<T>(a.grad().data(), detail::ei(m)) +=
                    go * detail::CMapA<T>(b.data().data(), detail::ei(m));
            if (b.requires_grad())
                detail::MapA<T>(b.grad().data(), detail::ei(m)) +=
                    go * detail::CMapA<T>(a.data().data(), detail::ei(m));
        });
    }
    return out;
}

template <typename T>
TensorT<T> scale(GraphT<T>* g, const TensorT<T>& a, T s) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const std::size_t n = a.numel();
    detail::MapA<T>(out.data().data(), detail::ei(n)) =
        detail::CMapA<T>(a.data().data(), detail::ei(n)) * s;
    if (g && a.requires_grad()) {
        out.set_requires_grad(true);
        g->record(out, [a = a, out, s]() mutable {
            const std::size_t m = out.numel();
            detail::MapA<T>(a.grad().data(), detail::ei(m)) +=
                detail::CMapA<T>(out.grad().data(), detail::ei(m)) * s;
        });
    }
    return out;
}

template <typename T>
TensorT<T> sum_all(GraphT<T>* g, const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros(Shape(1));
    out.at(0) = detail::CMapA<T>(a.data().data(), detail::ei(a.numel())).sum();
    if (g && a.requires_grad()) {
        out.set_requires_grad(true);
        g->record(out, [a = a, out]() mutable {
            const T go = out.grad()[0];
            detail::MapA<T>(a.grad().data(), detail::ei(a.numel())) += go;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// dense layers
// ---------------------------------------------------------------------------

/// Per-position linear map over the channel (last) axis: out[..., :] =
/// X[..., :] · W + b  with W of shape [Cin, Cout]. Works for rank 1..3.
template <typename T>
TensorT<T> dense_channels(GraphT<T>* g, const TensorT<T>& x, const TensorT<T>& w,
                          const TensorT<T>& b) {
    const int rank = x.rank();
    const int cin = x.dim(rank - 1);
    if (w.rank() != 2 || w.dim(0) != cin)
        throw ShapeError("dense_channels: weight shape " + w.shape().str() +
                         " does not accept input " + x.shape().str());
    const int cout = w.dim(1);
    if (b.rank() != 1 || b.dim(0) != cout)
        throw ShapeError("dense_channels: bias shape " + b.shape().str());

    Shape os = rank == 1   ? Shape(cout)
               : rank == 2 ? Shape(x.dim(0), cout)
                           : Shape(x.dim(0), x.dim(1), cout);
    TensorT<T> out = TensorT<T>::zeros(os);
    const Eigen::Index m = detail::ei(x.numel() / static_cast<std::size_t>(cin));

    detail::CMapM<T> xm(x.data().data(), m, cin);
    detail::CMapM<T> wm(w.data().data(), cin, cout);
    detail::MapM<T> ym(out.data().data(), m, cout);
    ym.noalias() = xm * wm;
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data().data(), cout);

    if (g && (x.requires_grad() || w.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        g->record(out, [x = x, w = w, b = b, out, m, cin, cout]() mutable {
            detail::CMapM<T> dym(out.grad().data(), m, cout);
            if (x.requires_grad()) {
                detail::CMapM<T> wm2(w.data().data(), cin, cout);
                detail::MapM<T>(x.grad().data(), m, cin).noalias() += dym * wm2.transpose();
            }
            if (w.requires_grad()) {
                detail::CMapM<T> xm2(x.data().data(), m, cin);
                detail::MapM<T>(w.grad().data(), cin, cout).noalias() += xm2.transpose() * dym;
            }
            if (b.requires_grad())
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.grad().data(), cout) +=
                    dym.colwise().sum();
        });
    }
    return out;
}

namespace detail {

// [G,L,C] row-major <-> [L, G*C] row-major staging for the position dense,
// so all groups run as one GEMM.
template <typename T>
void glc_to_lgc(const T* src, T* dst, int G, int L, int C) {
    for (int grp = 0; grp < G; ++grp)
        for (int l = 0; l < L; ++l)
            std::memcpy(dst + (static_cast<std::size_t>(l) * G + grp) * C,
                        src + (static_cast<std::size_t>(grp) * L + l) * C, sizeof(T) * C);
}

template <typename T>
void lgc_to_glc(const T* src, T* dst, int G, int L, int C) {
    for (int l = 0; l < L; ++l)
        for (int grp = 0; grp < G; ++grp)
            std::memcpy(dst + (static_cast<std::size_t>(grp) * L + l) * C,
                        src + (static_cast<std::size_t>(l) * G + grp) * C, sizeof(T) * C);
}

template <typename T>
void lgc_add_to_glc(const T* src, T* dst, int G, int L, int C) {
    for (int l = 0; l < L; ++l)
        for (int grp = 0; grp < G; ++grp) {
            const T* s = src + (static_cast<std::size_t>(l) * G + grp) * C;
            T* d = dst + (static_cast<std::size_t>(grp) * L + l) * C;
            for (int c = 0; c < C; ++c) d[c] += s[c];
        }
}

}  // namespace detail

/// Linear map over the position (middle) axis of a partitioned tensor,
/// applied independently per group and channel: out[grp,l',c] =
/// sum_l X[grp,l,c]·W[l,l'] + b[l'] with W of shape [L, Lout].
template <typename T>
TensorT<T> dense_positions(GraphT<T>* g, const TensorT<T>& x, const TensorT<T>& w,
                           const TensorT<T>& b) {
    if (x.rank() != 3)
        throw ShapeError("dense_positions: input must be [groups, positions, channels]");
    const int G = x.dim(0), L = x.dim(1), C = x.dim(2);
    if (w.rank() != 2 || w.dim(0) != L)
        throw ShapeError("dense_positions: weight shape " + w.shape().str() +
                         " does not accept positions axis of length " + std::to_string(L));
    const int lout = w.dim(1);
    if (b.rank() != 1 || b.dim(0) != lout)
        throw ShapeError("dense_positions: bias shape " + b.shape().str());

    const Eigen::Index gc = static_cast<Eigen::Index>(G) * C;
    AlignedVec<T> xbig(static_cast<std::size_t>(L) * gc);
    detail::glc_to_lgc(x.data().data(), xbig.data(), G, L, C);

    AlignedVec<T> ybig(static_cast<std::size_t>(lout) * gc);
    {
        detail::CMapM<T> xm(xbig.data(), L, gc);
        detail::CMapM<T> wm(w.data().data(), L, lout);
        detail::MapM<T> ym(ybig.data(), lout, gc);
        ym.noalias() = wm.transpose() * xm;
        for (int l = 0; l < lout; ++l) ym.row(l).array() += b.at(l);
    }

    TensorT<T> out = TensorT<T>::zeros(Shape(G, lout, C));
    detail::lgc_to_glc(ybig.data(), out.data().data(), G, lout, C);

    if (g && (x.requires_grad() || w.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        g->record(out, [x = x, w = w, b = b, out, G, L, C, lout, gc]() mutable {
            AlignedVec<T> dybig(static_cast<std::size_t>(lout) * gc);
            detail::glc_to_lgc(out.grad().data(), dybig.data(), G, lout, C);
            detail::CMapM<T> dym(dybig.data(), lout, gc);
            if (x.requires_grad()) {
                AlignedVec<T> dxbig(static_cast<std::size_t>(L) * gc);
                detail::CMapM<T> wm(w.data().data(), L, lout);
                detail::MapM<T>(dxbig.data(), L, gc).noalias() = wm * dym;
                detail::lgc_add_to_glc(dxbig.data(), x.grad().data(), G, L, C);
            }
            if (w.requires_grad()) {
                AlignedVec<T> xbig2(static_cast<std::size_t>(L) * gc);
                detail::glc_to_lgc(x.data().data(), xbig2.data(), G, L, C);
                detail::CMapM<T> xm(xbig2.data(), L, gc);
                detail::MapM<T>(w.grad().data(), L, lout).noalias() += xm * dym.transpose();
            }
            if (b.requires_grad()) {
                auto bg = b.grad();
                for (int l = 0; l < lout; ++l) bg[l] += dym.row(l).sum();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations and normalization
// ---------------------------------------------------------------------------

/// GELU, tanh approximation: 0.5·x·(1 + tanh(√(2/π)(x + 0.044715x³))).
template <typename T>
TensorT<T> gelu(GraphT<T>* g, const TensorT<T>& x) {
    static const T k0 = static_cast<T>(std::sqrt(2.0 / M_PI));
    static const T k1 = static_cast<T>(0.044715);
    const std::size_t n = x.numel();

    auto t = std::make_shared<AlignedVec<T>>(n);
    {
        detail::CMapA<T> xa(x.data().data(), detail::ei(n));
        detail::MapA<T> ta(t->data(), detail::ei(n));
        ta = k0 * (xa + k1 * xa.cube());
    }
    detail::tanh_inplace(t->data(), n);

    TensorT<T> out = TensorT<T>::zeros(x.shape());
    {
        detail::CMapA<T> xa(x.data().data(), detail::ei(n));
        detail::CMapA<T> ta(t->data(), detail::ei(n));
        detail::MapA<T>(out.data().data(), detail::ei(n)) = T(0.5) * xa * (T(1) + ta);
    }

    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        g->record(out, [x = x, out, t, n]() mutable {
            detail::CMapA<T> xa(x.data().data(), detail::ei(n));
            detail::CMapA<T> ta(t->data(), detail::ei(n));
            detail::CMapA<T> go(out.grad().data(), detail::ei(n));
            detail::MapA<T>(x.grad().data(), detail::ei(n)) +=
                go * (T(0.5) * (T(1) + ta) +
                      T(0.5) * xa * (T(1) - ta.square()) * k0 * (T(1) + T(3) * k1 * xa.square()));
        });
    }
    return out;
}

template <typename T>
TensorT<T> sigmoid(GraphT<T>* g, const TensorT<T>& x) {
    const std::size_t n = x.numel();
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    {
        auto od = out.data();
        auto xd = x.data();
        for (std::size_t i = 0; i < n; ++i) od[i] = -xd[i];
        detail::exp_inplace(od.data(), n);
        detail::MapA<T> oa(od.data(), detail::ei(n));
        oa = (T(1) + oa).inverse();
    }
    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        g->record(out, [x = x, out, n]() mutable {
            detail::CMapA<T> ya(out.data().data(), detail::ei(n));
            detail::CMapA<T> go(out.grad().data(), detail::ei(n));
            detail::MapA<T>(x.grad().data(), detail::ei(n)) += go * ya * (T(1) - ya);
        });
    }
    return out;
}

/// Normalizes the channel (last) axis per position to zero mean / unit
/// variance (biased), then applies the affine gamma/beta.
template <typename T>
TensorT<T> layer_norm(GraphT<T>* g, const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps = static_cast<T>(1e-5)) {
    const int rank = x.rank();
    const int C = x.dim(rank - 1);
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
        throw ShapeError("layer_norm: gamma/beta must be [C]");
    const std::size_t M = x.numel() / static_cast<std::size_t>(C);

    TensorT<T> out = TensorT<T>::zeros(x.shape());
    auto mu = std::make_shared<AlignedVec<T>>(M);
    auto inv = std::make_shared<AlignedVec<T>>(M);
    {
        const T* xp = x.data().data();
        T* op = out.data().data();
        const T* gp = gamma.data().data();
        const T* bp = beta.data().data();
        for (std::size_t r = 0; r < M; ++r) {
            detail::CMapA<T> row(xp + r * C, C);
            const T m = row.mean();
            const T var = (row - m).square().mean();
            const T iv = T(1) / std::sqrt(var + eps);
            (*mu)[r] = m;
            (*inv)[r] = iv;
            detail::MapA<T> orow(op + r * C, C);
            orow = (row - m) * iv * detail::CMapA<T>(gp, C) + detail::CMapA<T>(bp, C);
        }
    }

    if (g && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        out.set_requires_grad(true);
        g->record(out, [x = x, gamma = gamma, beta = beta, out, mu, inv, M, C]() mutable {
            const T* xp = x.data().data();
            const T* gp = gamma.data().data();
            const T* dop = out.grad().data();
            AlignedVec<T> xhat(C), dyg(C);
            for (std::size_t r = 0; r < M; ++r) {
                detail::CMapA<T> row(xp + r * C, C);
                detail::CMapA<T> dy(dop + r * C, C);
                detail::MapA<T> xh(xhat.data(), C);
                xh = (row - (*mu)[r]) * (*inv)[r];
                if (gamma.requires_grad())
                    detail::MapA<T>(gamma.grad().data(), C) += dy * xh;
                if (beta.requires_grad())
                    detail::MapA<T>(beta.grad().data(), C) += dy;
                if (x.requires_grad()) {
                    detail::MapA<T> dg(dyg.data(), C);
                    dg = dy * detail::CMapA<T>(gp, C);
                    const T m1 = dg.mean();
                    const T m2 = (dg * xh).mean();
                    detail::MapA<T>(x.grad().data() + r * C, C) +=
                        (*inv)[r] * (dg - m1 - xh * m2);
                }
            }
        });
    }
    return out;
}

/// Per-position softmax over the channel (last) axis, max-subtracted for
/// stability.
template <typename T>
TensorT<T> softmax_channels(GraphT<T>* g, const TensorT<T>& x) {
    const int rank = x.rank();
    const int C = x.dim(rank - 1);
    const std::size_t M = x.numel() / static_cast<std::size_t>(C);

    TensorT<T> out = TensorT<T>::zeros(x.shape());
    {
        const T* xp = x.data().data();
        T* op = out.data().data();
        for (std::size_t r = 0; r < M; ++r) {
            detail::CMapA<T> row(xp + r * C, C);
            detail::MapA<T> orow(op + r * C, C);
            orow = row - row.maxCoeff();
            detail::exp_inplace(op + r * C, static_cast<std::size_t>(C));
            orow /= orow.sum();
        }
    }

    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        g->record(out, [x = x, out, M, C]() mutable {
            const T* yp = out.data().data();
            const T* dop = out.grad().data();
            for (std::size_t r = 0; r < M; ++r) {
                detail::CMapA<T> y(yp + r * C, C);
                detail::CMapA<T> dy(dop + r * C, C);
                const T s = (dy * y).sum();
                detail::MapA<T>(x.grad().data() + r * C, C) += y * (dy - s);
            }
        });
    }
    return out;
}

/// 2×2 non-overlapping max pool; gradient routes to the argmax, first
/// element in row-major window order on ties.
template <typename T>
TensorT<T> maxpool2(GraphT<T>* g, const TensorT<T>& x) {
    if (x.rank() != 3) throw ShapeError("maxpool2: input must be [H,W,C]");
    const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    if (H % 2 || W % 2) throw ShapeError("maxpool2: extents must be even, got " + x.shape().str());

    TensorT<T> out = TensorT<T>::zeros(Shape(H / 2, W / 2, C));
    auto arg = std::make_shared<std::vector<uint32_t>>(out.numel());
    {
        const T* xp = x.data().data();
        T* op = out.data().data();
        uint32_t* ap = arg->data();
        std::size_t o = 0;
        for (int i = 0; i < H; i += 2)
            for (int j = 0; j < W; j += 2)
                for (int c = 0; c < C; ++c, ++o) {
                    const std::size_t i00 = (static_cast<std::size_t>(i) * W + j) * C + c;
                    const std::size_t i01 = i00 + C;
                    const std::size_t i10 = i00 + static_cast<std::size_t>(W) * C;
                    const std::size_t i11 = i10 + C;
                    std::size_t best = i00;
                    if (xp[i01] > xp[best]) best = i01;
                    if (xp[i10] > xp[best]) best = i10;
                    if (xp[i11] > xp[best]) best = i11;
                    op[o] = xp[best];
                    ap[o] = static_cast<uint32_t>(best);
                }
    }

    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        g->record(out, [x = x, out, arg]() mutable {
            auto xg = x.grad();
            const T* dop = out.grad().data();
            const uint32_t* ap = arg->data();
            const std::size_t n = out.numel();
            for (std::size_t o = 0; o < n; ++o) xg[ap[o]] += dop[o];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// channel broadcasting / reductions
// ---------------------------------------------------------------------------

/// Broadcast multiply by a per-channel vector s[C].
template <typename T>
TensorT<T> mul_channels(GraphT<T>* g, const TensorT<T>& x, const TensorT<T>& s) {
    const int rank = x.rank();
    const int C = x.dim(rank - 1);
    if (s.rank() != 1 || s.dim(0) != C)
        throw ShapeError("mul_channels: scale must be [C], got " + s.shape().str());
    const std::size_t M = x.numel() / static_cast<std::size_t>(C);

    TensorT<T> out = TensorT<T>::zeros(x.shape());
    {
        detail::CMapM<T> xm(x.data().data(), detail::ei(M), C);
        detail::MapM<T> om(out.data().data(), detail::ei(M), C);
        om = xm.array().rowwise() *
             Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>>(s.data().data(), C);
    }
    if (g && (x.requires_grad() || s.requires_grad())) {
        out.set_requires_grad(true);
        g->record(out, [x = x, s = s, out, M, C]() mutable {
            detail::CMapM<T> dym(out.grad().data(), detail::ei(M), C);
            if (x.requires_grad())
                detail::MapM<T>(x.grad().data(), detail::ei(M), C).array() +=
                    dym.array().rowwise() *
                    Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>>(s.data().data(), C);
            if (s.requires_grad()) {
                detail::CMapM<T> xm(x.data().data(), detail::ei(M), C);
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(s.grad().data(), C) +=
                    (dym.array() * xm.array()).matrix().colwise().sum();
            }
        });
    }
    return out;
}

/// Mean over all leading (spatial) axes, one value per channel.
template <typename T>
TensorT<T> mean_spatial(GraphT<T>* g, const TensorT<T>& x) {
    const int rank = x.rank();
    if (rank < 2) throw ShapeError("mean_spatial: input must have a spatial axis");
    const int C = x.dim(rank - 1);
    const std::size_t M = x.numel() / static_cast<std::size_t>(C);

    TensorT<T> out = TensorT<T>::zeros(Shape(C));
    {
        detail::CMapM<T> xm(x.data().data(), detail::ei(M), C);
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(out.data().data(), C) =
            xm.colwise().sum() / static_cast<T>(M);
    }
    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        g->record(out, [x = x, out, M, C]() mutable {
            const T invm = T(1) / static_cast<T>(M);
            detail::MapM<T>(x.grad().data(), detail::ei(M), C).array().rowwise() +=
                Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>>(out.grad().data(), C) * invm;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// spatial partitions (pure index permutations)
// ---------------------------------------------------------------------------

namespace detail {

// dst row r <- src row idx[r]; both have C channels per row.
template <typename T>
void gather_rows(const T* src, T* dst, const std::vector<uint32_t>& idx, int C) {
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::memcpy(dst + r * C, src + static_cast<std::size_t>(idx[r]) * C, sizeof(T) * C);
}

template <typename T>
void scatter_add_rows(const T* src, T* dst, const std::vector<uint32_t>& idx, int C) {
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const T* s = src + r * C;
        T* d = dst + static_cast<std::size_t>(idx[r]) * C;
        for (int c = 0; c < C; ++c) d[c] += s[c];
    }
}

template <typename T>
TensorT<T> permute_op(GraphT<T>* g, const TensorT<T>& x, Shape os,
                      std::vector<uint32_t> src_of_dst, int C) {
    TensorT<T> out = TensorT<T>::zeros(os);
    gather_rows(x.data().data(), out.data().data(), src_of_dst, C);
    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        auto idx = std::make_shared<std::vector<uint32_t>>(std::move(src_of_dst));
        g->record(out, [x = x, out, idx, C]() mutable {
            scatter_add_rows(out.grad().data(), x.grad().data(), *idx, C);
        });
    }
    return out;
}

}  // namespace detail

/// [H,W,C] -> [(H/b)(W/b), b², C]: pixel (i,j) lands in group
/// (i/b)(W/b)+(j/b) at position (i%b)·b+(j%b).
template <typename T>
TensorT<T> block_partition(GraphT<T>* g, const TensorT<T>& x, int b) {
    if (x.rank() != 3) throw ShapeError("block_partition: input must be [H,W,C]");
    const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    if (b <= 0 || H % b || W % b)
        throw ShapeError("block_partition: block size " + std::to_string(b) +
                         " must divide " + x.shape().str());
    const int gw = W / b, L = b * b, G = (H / b) * gw;
    std::vector<uint32_t> idx(static_cast<std::size_t>(G) * L);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const int grp = (i / b) * gw + (j / b);
            const int pos = (i % b) * b + (j % b);
            idx[static_cast<std::size_t>(grp) * L + pos] = static_cast<uint32_t>(i * W + j);
        }
    return detail::permute_op(g, x, Shape(G, L, C), std::move(idx), C);
}

template <typename T>
TensorT<T> block_unpartition(GraphT<T>* g, const TensorT<T>& x, int b, int H, int W) {
    if (x.rank() != 3) throw ShapeError("block_unpartition: input must be [G,L,C]");
    const int C = x.dim(2), gw = W / b, L = b * b;
    if (H % b || W % b || x.dim(0) != (H / b) * gw || x.dim(1) != L)
        throw ShapeError("block_unpartition: shape " + x.shape().str() +
                         " inconsistent with target " + std::to_string(H) + "x" +
                         std::to_string(W) + ", b=" + std::to_string(b));
    std::vector<uint32_t> idx(static_cast<std::size_t>(H) * W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const int grp = (i / b) * gw + (j / b);
            const int pos = (i % b) * b + (j % b);
            idx[static_cast<std::size_t>(i) * W + j] = static_cast<uint32_t>(grp * L + pos);
        }
    return detail::permute_op(g, x, Shape(H, W, C), std::move(idx), C);
}

/// [H,W,C] -> [(H/g)(W/g), g², C]: the position axis collects, for a fixed
/// intra-cell offset, the pixels at that offset in every grid cell:
/// pixel (i,j) lands in group (i % H/g)(W/g)+(j % W/g) at position
/// (i / (H/g))·g + (j / (W/g)).
template <typename T>
TensorT<T> grid_partition(GraphT<T>* g, const TensorT<T>& x, int gsz) {
    if (x.rank() != 3) throw ShapeError("grid_partition: input must be [H,W,C]");
    const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    if (gsz <= 0 || H % gsz || W % gsz)
        throw ShapeError("grid_partition: grid size " + std::to_string(gsz) +
                         " must divide " + x.shape().str());
    const int ch = H / gsz, cw = W / gsz, L = gsz * gsz, G = ch * cw;
    std::vector<uint32_t> idx(static_cast<std::size_t>(G) * L);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const int grp = (i % ch) * cw + (j % cw);
            const int pos = (i / ch) * gsz + (j / cw);
            idx[static_cast<std::size_t>(grp) * L + pos] = static_cast<uint32_t>(i * W + j);
        }
    return detail::permute_op(g, x, Shape(G, L, C), std::move(idx), C);
}

template <typename T>
TensorT<T> grid_unpartition(GraphT<T>* g, const TensorT<T>& x, int gsz, int H, int W) {
    if (x.rank() != 3) throw ShapeError("grid_unpartition: input must be [G,L,C]");
    const int C = x.dim(2), ch = H / gsz, cw = W / gsz, L = gsz * gsz;
    if (H % gsz || W % gsz || x.dim(0) != ch * cw || x.dim(1) != L)
        throw ShapeError("grid_unpartition: shape " + x.shape().str() +
                         " inconsistent with target " + std::to_string(H) + "x" +
                         std::to_string(W) + ", g=" + std::to_string(gsz));
    std::vector<uint32_t> idx(static_cast<std::size_t>(H) * W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const int grp = (i % ch) * cw + (j % cw);
            const int pos = (i / ch) * gsz + (j / cw);
            idx[static_cast<std::size_t>(i) * W + j] = static_cast<uint32_t>(grp * L + pos);
        }
    return detail::permute_op(g, x, Shape(H, W, C), std::move(idx), C);
}

// ---------------------------------------------------------------------------
// channel slicing / concatenation
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> slice_channels(GraphT<T>* g, const TensorT<T>& x, int c0, int c1) {
    const int rank = x.rank();
    const int C = x.dim(rank - 1);
    if (c0 < 0 || c1 <= c0 || c1 > C)
        throw ShapeError("slice_channels: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for C=" + std::to_string(C));
    const int Cn = c1 - c0;
    const std::size_t M = x.numel() / static_cast<std::size_t>(C);
    Shape os = rank == 1   ? Shape(Cn)
               : rank == 2 ? Shape(x.dim(0), Cn)
                           : Shape(x.dim(0), x.dim(1), Cn);
    TensorT<T> out = TensorT<T>::zeros(os);
    {
        const T* xp = x.data().data();
        T* op = out.data().data();
        for (std::size_t r = 0; r < M; ++r)
            std::memcpy(op + r * Cn, xp + r * C + c0, sizeof(T) * Cn);
    }
    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        g->record(out, [x = x, out, M, C, Cn, c0]() mutable {
            T* xg = x.grad().data();
            const T* dop = out.grad().data();
            for (std::size_t r = 0; r < M; ++r) {
                T* d = xg + r * C + c0;
                const T* s = dop + r * Cn;
                for (int c = 0; c < Cn; ++c) d[c] += s[c];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> concat_channels(GraphT<T>* g, const TensorT<T>& a, const TensorT<T>& b) {
    const int rank = a.rank();
    if (b.rank() != rank) throw ShapeError("concat_channels: rank mismatch");
    for (int i = 0; i < rank - 1; ++i)
        if (a.dim(i) != b.dim(i))
            throw ShapeError("concat_channels: leading extents differ, " + a.shape().str() +
                             " vs " + b.shape().str());
    const int Ca = a.dim(rank - 1), Cb = b.dim(rank - 1), C = Ca + Cb;
    const std::size_t M = a.numel() / static_cast<std::size_t>(Ca);
    Shape os = rank == 1   ? Shape(C)
               : rank == 2 ? Shape(a.dim(0), C)
                           : Shape(a.dim(0), a.dim(1), C);
    TensorT<T> out = TensorT<T>::zeros(os);
    {
        const T* ap = a.data().data();
        const T* bp = b.data().data();
        T* op = out.data().data();
        for (std::size_t r = 0; r < M; ++r) {
            std::memcpy(op + r * C, ap + r * Ca, sizeof(T) * Ca);
            std::memcpy(op + r * C + Ca, bp + r * Cb, sizeof(T) * Cb);
        }
    }
    if (g && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        g->record(out, [a = a, b = b, out, M, Ca, Cb, C]() mutable {
            const T* dop = out.grad().data();
            if (a.requires_grad()) {
                T* ag = a.grad().data();
                for (std::size_t r = 0; r < M; ++r)
                    for (int c = 0; c < Ca; ++c) ag[r * Ca + c] += dop[r * C + c];
            }
            if (b.requires_grad()) {
                T* bg = b.grad().data();
                for (std::size_t r = 0; r < M; ++r)
                    for (int c = 0; c < Cb; ++c) bg[r * Cb + c] += dop[r * C + Ca + c];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// depth-to-space and inverse
// ---------------------------------------------------------------------------

/// [h,w,4^N] -> [h·2^N, w·2^N, 1]: channel c of cell (u,v) lands at pixel
/// (u·2^N + c/2^N, v·2^N + c%2^N).
template <typename T>
TensorT<T> depth_to_space(GraphT<T>* g, const TensorT<T>& x, int N) {
    if (x.rank() != 3) throw ShapeError("depth_to_space: input must be [h,w,C]");
    const int r = 1 << N, C = r * r;
    if (x.dim(2) != C)
        throw ShapeError("depth_to_space: need exactly " + std::to_string(C) +
                         " channels, got " + std::to_string(x.dim(2)));
    const int h = x.dim(0), w = x.dim(1), H = h * r, W = w * r;
    std::vector<uint32_t> idx(static_cast<std::size_t>(H) * W);
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v)
            for (int c = 0; c < C; ++c) {
                const int pi = u * r + c / r, pj = v * r + c % r;
                idx[static_cast<std::size_t>(pi) * W + pj] =
                    static_cast<uint32_t>((u * w + v) * C + c);
            }
    return detail::permute_op(g, x, Shape(H, W, 1), std::move(idx), 1);
}

template <typename T>
TensorT<T> space_to_depth(GraphT<T>* g, const TensorT<T>& x, int N) {
    if (x.rank() != 3 || x.dim(2) != 1)
        throw ShapeError("space_to_depth: input must be [H,W,1]");
    const int r = 1 << N, C = r * r;
    const int H = x.dim(0), W = x.dim(1);
    if (H % r || W % r)
        throw ShapeError("space_to_depth: extents must be divisible by " + std::to_string(r));
    const int h = H / r, w = W / r;
    std::vector<uint32_t> idx(static_cast<std::size_t>(h) * w * C);
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v)
            for (int c = 0; c < C; ++c) {
                const int pi = u * r + c / r, pj = v * r + c % r;
                idx[(static_cast<std::size_t>(u) * w + v) * C + c] =
                    static_cast<uint32_t>(pi * W + pj);
            }
    return detail::permute_op(g, x, Shape(h, w, C), std::move(idx), 1);
}

// ---------------------------------------------------------------------------
// padding / cropping
// ---------------------------------------------------------------------------

/// Reflect-pads the bottom/right edges up to the requested extents. Mirror
/// uses period 2n-2 (edge sample not repeated), so padding deeper than the
/// image is well defined.
template <typename T>
TensorT<T> reflect_pad_br(GraphT<T>* g, const TensorT<T>& x, int Hn, int Wn) {
    if (x.rank() != 3) throw ShapeError("reflect_pad_br: input must be [H,W,C]");
    const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    if (Hn < H || Wn < W) throw ShapeError("reflect_pad_br: target smaller than input");
    std::vector<uint32_t> idx(static_cast<std::size_t>(Hn) * Wn);
    for (int i = 0; i < Hn; ++i) {
        const int si = detail::fold_reflect(i, H);
        for (int j = 0; j < Wn; ++j)
            idx[static_cast<std::size_t>(i) * Wn + j] =
                static_cast<uint32_t>(si * W + detail::fold_reflect(j, W));
    }
    return detail::permute_op(g, x, Shape(Hn, Wn, C), std::move(idx), C);
}

template <typename T>
TensorT<T> crop_tl(GraphT<T>* g, const TensorT<T>& x, int Hn, int Wn) {
    if (x.rank() != 3) throw ShapeError("crop_tl: input must be [H,W,C]");
    const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    if (Hn > H || Wn > W) throw ShapeError("crop_tl: target larger than input");
    std::vector<uint32_t> idx(static_cast<std::size_t>(Hn) * Wn);
    for (int i = 0; i < Hn; ++i)
        for (int j = 0; j < Wn; ++j)
            idx[static_cast<std::size_t>(i) * Wn + j] = static_cast<uint32_t>(i * W + j);
    return detail::permute_op(g, x, Shape(Hn, Wn, C), std::move(idx), C);
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

/// Mean of squared differences over all elements.
template <typename T>
TensorT<T> mse_loss(GraphT<T>* g, const TensorT<T>& pred, const TensorT<T>& target) {
    detail::check_same_shape(pred, target, "mse_loss");
    const std::size_t n = pred.numel();
    double acc = 0.0;
    {
        auto pd = pred.data();
        auto td = target.data();
        for (std::size_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(pd[i]) - static_cast<double>(td[i]);
            acc += d * d;
        }
    }
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    if (g && (pred.requires_grad() || target.requires_grad())) {
        out.set_requires_grad(true);
        g->record(out, [pred = pred, target = target, out, n]() mutable {
            const T go = out.grad()[0];
            const T k = T(2) * go / static_cast<T>(n);
            detail::CMapA<T> pa(pred.data().data(), detail::ei(n));
            detail::CMapA<T> ta(target.data().data(), detail::ei(n));
            if (pred.requires_grad())
                detail::MapA<T>(pred.grad().data(), detail::ei(n)) += k * (pa - ta);
            if (target.requires_grad())
                detail::MapA<T>(target.grad().data(), detail::ei(n)) -= k * (pa - ta);
        });
    }
    return out;
}

}  // namespace balf
