#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "balf/adam.hpp"
#include "balf/checks.hpp"
#include "balf/graph.hpp"
#include "balf/ops.hpp"

using namespace balf;

namespace {
Graph* const fwd = nullptr;  // forward-only: no tape recorded
}

TEST_CASE("shape basics and layout") {
    Shape s(2, 3, 4);
    CHECK(s.rank == 3);
    CHECK(s.numel() == 24);
    CHECK(s == Shape(2, 3, 4));
    CHECK(s != Shape(2, 3));
    CHECK_THROWS_AS(Shape(0, 1), ShapeError);
    CHECK_THROWS_AS(Shape(2, -1, 3), ShapeError);

    // channel-fastest: flat = (i*W + j)*C + c
    Tensor t = Tensor::zeros(Shape(2, 3, 4));
    t.at(1, 2, 3) = 7.0f;
    CHECK(t.data()[(1 * 3 + 2) * 4 + 3] == 7.0f);
}

TEST_CASE("tensor handles share storage; clone copies") {
    Tensor a = Tensor::full(Shape(2), 3.0f);
    Tensor b = a;
    b.at(0) = 9.0f;
    CHECK(a.at(0) == 9.0f);
    CHECK(a.same_storage(b));
    Tensor c = a.clone();
    c.at(0) = 1.0f;
    CHECK(a.at(0) == 9.0f);
}

TEST_CASE("gelu matches the tanh approximation at 1.0") {
    Graph g;
    Tensor x = Tensor::from(Shape(1), {1.0f});
    Tensor y = gelu(&g, x);
    CHECK(std::abs(y.at(0) - 0.8412) < 2e-3);
    // exact closed form of the approximation itself
    const double k0 = 0.7978845608028654;
    const double expect = 0.5 * (1.0 + std::tanh(k0 * (1.0 + 0.044715)));
    CHECK(std::abs(y.at(0) - expect) < 1e-6);
}

TEST_CASE("softmax over channels: frozen pair and cell normalization") {
    Tensor x = Tensor::from(Shape(1, 1, 2), {1.0f, 2.0f});
    Tensor y = softmax_channels(fwd, x);
    CHECK(std::abs(y.at(0, 0, 0) - 0.2689) < 1e-4);
    CHECK(std::abs(y.at(0, 0, 1) - 0.7311) < 1e-4);

    std::mt19937_64 rng(3);
    Tensor r = uniform<float>(Shape(4, 4, 8), rng, -5.0f, 5.0f, false);
    Tensor s = softmax_channels(fwd, r);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double sum = 0;
            for (int c = 0; c < 8; ++c) {
                CHECK(s.at(i, j, c) > 0.0f);
                CHECK(s.at(i, j, c) < 1.0f);
                sum += s.at(i, j, c);
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
}

TEST_CASE("softmax is shift-invariant (max subtraction)") {
    Tensor a = Tensor::from(Shape(1, 1, 3), {100.0f, 101.0f, 102.0f});
    Tensor b = Tensor::from(Shape(1, 1, 3), {0.0f, 1.0f, 2.0f});
    Tensor ya = softmax_channels(fwd, a);
    Tensor yb = softmax_channels(fwd, b);
    for (int c = 0; c < 3; ++c) CHECK(ya.at(0, 0, c) == doctest::Approx(yb.at(0, 0, c)).epsilon(1e-6));
}

TEST_CASE("layer_norm standardizes: [1,3] -> [-1,1] as eps -> 0") {
    Tensor x = Tensor::from(Shape(1, 2), {1.0f, 3.0f});
    Tensor gamma = Tensor::full(Shape(2), 1.0f);
    Tensor beta = Tensor::zeros(Shape(2));
    Tensor y = layer_norm(fwd, x, gamma, beta, 1e-12f);
    CHECK(std::abs(y.at(0, 0) + 1.0) < 1e-5);
    CHECK(std::abs(y.at(0, 1) - 1.0) < 1e-5);
}

TEST_CASE("maxpool2 forward and tied-argmax gradient routing") {
    // 2x2 single window, all equal: the first entry in row-major order wins.
    Graph g;
    Tensor x = Tensor::from(Shape(2, 2, 1), {5.0f, 5.0f, 5.0f, 5.0f}, true);
    Tensor y = maxpool2(&g, x);
    CHECK(y.numel() == 1);
    CHECK(y.at(0) == 5.0f);
    Tensor loss = sum_all(&g, y);
    g.backward(loss);
    CHECK(x.grad()[0] == 1.0f);
    CHECK(x.grad()[1] == 0.0f);
    CHECK(x.grad()[2] == 0.0f);
    CHECK(x.grad()[3] == 0.0f);

    Tensor x2 = Tensor::from(Shape(2, 4, 2), {1, 9, 2, 3, 4, 5, 6, 7, 8, 0, 1, 2, 3, 4, 5, 6});
    Tensor y2 = maxpool2(fwd, x2);
    CHECK(y2.shape() == Shape(1, 2, 2));
    CHECK(y2.at(0, 0, 0) == 8.0f);  // max over {1,2,8,1}
    CHECK(y2.at(0, 0, 1) == 9.0f);
    CHECK(y2.at(0, 1, 0) == 6.0f);
    CHECK(y2.at(0, 1, 1) == 7.0f);
}

TEST_CASE("mse_loss frozen values") {
    Tensor a = Tensor::from(Shape(2), {0.0f, 1.0f});
    Tensor b = Tensor::from(Shape(2), {1.0f, 1.0f});
    CHECK(mse_loss(fwd, a, a).at(0) == 0.0f);
    CHECK(mse_loss(fwd, a, b).at(0) == doctest::Approx(0.5).epsilon(1e-7));
    Tensor z = Tensor::zeros(Shape(3, 3, 1));
    Tensor o = Tensor::full(Shape(3, 3, 1), 1.0f);
    CHECK(mse_loss(fwd, z, o).at(0) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK_THROWS_AS(mse_loss(fwd, a, z), ShapeError);
}

TEST_CASE("dense_channels shapes and a hand-checked product") {
    // x [1,2] * w [2,2] + b: [1*1+2*3+10, 1*2+2*4+20] = [17, 30]
    Tensor x = Tensor::from(Shape(1, 2), {1.0f, 2.0f});
    Tensor w = Tensor::from(Shape(2, 2), {1.0f, 2.0f, 3.0f, 4.0f});
    Tensor b = Tensor::from(Shape(2), {10.0f, 20.0f});
    Tensor y = dense_channels(fwd, x, w, b);
    CHECK(y.at(0, 0) == 17.0f);
    CHECK(y.at(0, 1) == 30.0f);

    Tensor bad = Tensor::zeros(Shape(3, 2));
    CHECK_THROWS_AS(dense_channels(fwd, x, bad, b), ShapeError);
}

TEST_CASE("backward accumulates into leaves; repeated calls double") {
    Graph g;
    Tensor x = Tensor::from(Shape(3), {1.0f, -2.0f, 0.5f}, true);
    Tensor y = mul(&g, x, x);
    Tensor loss = sum_all(&g, y);
    g.backward(loss);
    const float g0 = x.grad()[0], g1 = x.grad()[1], g2 = x.grad()[2];
    CHECK(g0 == doctest::Approx(2.0f));
    CHECK(g1 == doctest::Approx(-4.0f));
    g.backward(loss);
    CHECK(x.grad()[0] == 2 * g0);
    CHECK(x.grad()[1] == 2 * g1);
    CHECK(x.grad()[2] == 2 * g2);
}

TEST_CASE("release mode produces identical leaf gradients and frees the tape") {
    auto run = [](bool release) {
        std::mt19937_64 rng(11);
        Tensor x = uniform<float>(Shape(4, 4, 3), rng, -1.0f, 1.0f, true);
        Tensor w = uniform<float>(Shape(3, 5), rng, -1.0f, 1.0f, true);
        Tensor b = uniform<float>(Shape(5), rng, -1.0f, 1.0f, true);
        Graph g;
        Tensor y = gelu(&g, dense_channels(&g, x, w, b));
        Tensor loss = sum_all(&g, y);
        g.backward(loss, release);
        std::vector<float> grads(w.grad().begin(), w.grad().end());
        grads.insert(grads.end(), x.grad().begin(), x.grad().end());
        return std::pair(grads, g.size());
    };
    auto [gk, nk] = run(false);
    auto [gr, nr] = run(true);
    CHECK(gk == gr);  // bitwise
    CHECK(nk > 0);
    CHECK(nr == 0);  // consumed
}

TEST_CASE("backward contract violations") {
    Graph g;
    Tensor x = Tensor::from(Shape(2), {1.0f, 2.0f}, true);
    Tensor y = mul(&g, x, x);  // non-scalar
    CHECK_THROWS_AS(g.backward(y), Error);

    Tensor foreign = Tensor::scalar(1.0f, true);
    CHECK_THROWS_AS(g.backward(foreign), Error);  // not produced here

    Tensor undefined;
    CHECK_THROWS_AS(g.backward(undefined), Error);
}

TEST_CASE("ops refuse shape mismatches") {
    Tensor a = Tensor::zeros(Shape(2, 2));
    Tensor b = Tensor::zeros(Shape(2, 3));
    CHECK_THROWS_AS(add(fwd, a, b), ShapeError);
    CHECK_THROWS_AS(mul(fwd, a, b), ShapeError);

    Tensor c3 = Tensor::zeros(Shape(2, 2, 3));
    CHECK_THROWS_AS(depth_to_space(fwd, c3, 1), ShapeError);  // needs 4^n channels
    Tensor odd = Tensor::zeros(Shape(3, 3, 1));
    CHECK_THROWS_AS(maxpool2(fwd, odd), ShapeError);
}

TEST_CASE("adam: first step moves by ~lr against the gradient sign") {
    Tensor p = Tensor::zeros(Shape(1), true);
    for (auto& gv : p.grad()) gv = 3.0f;
    std::vector<Tensor> params{p};
    AdamState st;
    adam_step(params, st, 0.1f);
    // mhat = g, vhat = g*g after bias correction: step = -lr*g/(|g|+eps)
    CHECK(std::abs(p.at(0) + 0.1) < 1e-6);

    // descending a 1-d parabola reaches the minimum
    Tensor q = Tensor::from(Shape(1), {2.0f}, true);
    std::vector<Tensor> qs{q};
    AdamState st2;
    for (int i = 0; i < 400; ++i) {
        q.zero_grad();
        q.grad()[0] = 2.0f * q.at(0);  // d/dq q^2
        adam_step(qs, st2, 0.05f);
    }
    CHECK(std::abs(q.at(0)) < 1e-2);
}

TEST_CASE("adam rejects non-finite gradients before mutating anything") {
    Tensor p = Tensor::from(Shape(2), {1.0f, 2.0f}, true);
    p.grad()[0] = std::numeric_limits<float>::quiet_NaN();
    std::vector<Tensor> params{p};
    AdamState st;
    CHECK_THROWS_AS(adam_step(params, st, 0.1f), Error);
    CHECK(p.at(0) == 1.0f);
    CHECK(p.at(1) == 2.0f);
    CHECK(st.t == 0);
}

TEST_CASE("uniform init is deterministic per seed") {
    std::mt19937_64 r1(42), r2(42), r3(43);
    Tensor a = uniform<float>(Shape(8), r1, -1.0f, 1.0f, false);
    Tensor b = uniform<float>(Shape(8), r2, -1.0f, 1.0f, false);
    Tensor c = uniform<float>(Shape(8), r3, -1.0f, 1.0f, false);
    bool same = true, differ = false;
    for (int i = 0; i < 8; ++i) {
        same = same && a.at(i) == b.at(i);
        differ = differ || a.at(i) != c.at(i);
    }
    CHECK(same);
    CHECK(differ);
}

TEST_CASE("depth_to_space pixel placement") {
    // one cell, n=1: channel c lands at pixel (c/2, c%2)
    Tensor x = Tensor::from(Shape(1, 1, 4), {10.0f, 11.0f, 12.0f, 13.0f});
    Tensor y = depth_to_space(fwd, x, 1);
    CHECK(y.shape() == Shape(2, 2, 1));
    CHECK(y.at(0, 0, 0) == 10.0f);
    CHECK(y.at(0, 1, 0) == 11.0f);
    CHECK(y.at(1, 0, 0) == 12.0f);
    CHECK(y.at(1, 1, 0) == 13.0f);

    // n=3: channel 5 of cell (0,0) lands at pixel (5/8, 5%8) = (0,5)
    Tensor z = Tensor::zeros(Shape(1, 1, 64));
    z.at(0, 0, 5) = 1.0f;
    Tensor w = depth_to_space(fwd, z, 3);
    CHECK(w.shape() == Shape(8, 8, 1));
    CHECK(w.at(0, 5, 0) == 1.0f);
    float total = 0;
    for (float v : w.data()) total += v;
    CHECK(total == 1.0f);

    // space_to_depth inverts it on single-channel maps
    std::mt19937_64 rng(5);
    Tensor r = uniform<float>(Shape(8, 16, 1), rng, -1.0f, 1.0f, false);
    Tensor cells = space_to_depth(fwd, r, 2);
    CHECK(cells.shape() == Shape(2, 4, 16));
    Tensor rt = depth_to_space(fwd, cells, 2);
    CHECK(rt.shape() == r.shape());
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(r.data()[i] == rt.data()[i]);
}

TEST_CASE("block partition index map and bijection") {
    // H=W=4, b=2: pixel (2,3) -> group (2/2)*2+(3/2)=3, position (2%2)*2+(3%2)=1
    Tensor x = Tensor::zeros(Shape(4, 4, 1));
    x.at(2, 3, 0) = 1.0f;
    Tensor p = block_partition(fwd, x, 2);
    CHECK(p.shape() == Shape(4, 4, 1));  // [groups, positions, C]
    CHECK(p.at(3, 1, 0) == 1.0f);

    std::mt19937_64 rng(7);
    Tensor r = uniform<float>(Shape(8, 8, 3), rng, -1.0f, 1.0f, false);
    Tensor rt = block_unpartition(fwd, block_partition(fwd, r, 4), 4, 8, 8);
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(r.data()[i] == rt.data()[i]);
}

TEST_CASE("grid partition index map and bijection") {
    // H=W=4, g=2: the dilated set {(0,0),(0,2),(2,0),(2,2)} forms group 0, positions 0..3
    Tensor x = Tensor::zeros(Shape(4, 4, 1));
    x.at(0, 0, 0) = 1.0f;
    x.at(0, 2, 0) = 2.0f;
    x.at(2, 0, 0) = 3.0f;
    x.at(2, 2, 0) = 4.0f;
    Tensor p = grid_partition(fwd, x, 2);
    CHECK(p.shape() == Shape(4, 4, 1));
    CHECK(p.at(0, 0, 0) == 1.0f);
    CHECK(p.at(0, 1, 0) == 2.0f);
    CHECK(p.at(0, 2, 0) == 3.0f);
    CHECK(p.at(0, 3, 0) == 4.0f);

    std::mt19937_64 rng(9);
    Tensor r = uniform<float>(Shape(8, 12, 2), rng, -1.0f, 1.0f, false);
    Tensor rt = grid_unpartition(fwd, grid_partition(fwd, r, 4), 4, 8, 12);
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(r.data()[i] == rt.data()[i]);
}

TEST_CASE("reflect padding then cropping restores the original") {
    std::mt19937_64 rng(13);
    Tensor r = uniform<float>(Shape(5, 7, 2), rng, -1.0f, 1.0f, false);
    Tensor padded = reflect_pad_br(fwd, r, 8, 8);
    CHECK(padded.shape() == Shape(8, 8, 2));
    // reflected row: padded(5, j) mirrors r(3, j)
    CHECK(padded.at(5, 0, 0) == r.at(3, 0, 0));
    CHECK(padded.at(0, 7, 1) == r.at(0, 5, 1));
    Tensor back = crop_tl(fwd, padded, 5, 7);
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(r.data()[i] == back.data()[i]);
}

TEST_CASE("slice and concat are inverse over the channel axis") {
    std::mt19937_64 rng(17);
    Tensor r = uniform<float>(Shape(3, 4, 6), rng, -1.0f, 1.0f, false);
    Tensor lo = slice_channels(fwd, r, 0, 2);
    Tensor hi = slice_channels(fwd, r, 2, 6);
    CHECK(lo.shape() == Shape(3, 4, 2));
    CHECK(hi.shape() == Shape(3, 4, 4));
    Tensor rt = concat_channels(fwd, lo, hi);
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(r.data()[i] == rt.data()[i]);
}

TEST_CASE("finite-difference suite: every block below 1e-4") {
    for (const auto& c : checks::run_gradient_suite()) {
        INFO(c.name);
        CHECK(c.worst < 1e-4);
    }
}
