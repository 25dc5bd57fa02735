#include <doctest.h>

#include <cmath>
#include <vector>

#include "autosame/ops.hpp"
#include "gradcheck.hpp"

using namespace autosame;
namespace ad = autosame::ad;
using VarD = ad::Var<double>;
using VecVar = std::vector<VarD>;

namespace {

/// Reduce a matrix-valued graph output to a scalar through a fixed weighted
/// sum so the finite-difference check exercises the full Jacobian action.
VarD weighted(const VarD& y, const MatrixD& w) {
    return ad::sum_all(ad::cmul(y, VarD::constant(w)));
}

MatrixD weights_like(Eigen::Index rows, Eigen::Index cols, unsigned long long seed) {
    Rng rng(seed);
    return rng.normal_matrix<double>(rows, cols, 1.0);
}

}  // namespace

TEST_CASE("backward: exact gradients through a diamond graph") {
    Rng rng(1);
    const MatrixD av = rng.normal_matrix<double>(2, 2, 1.0);
    const MatrixD bv = rng.normal_matrix<double>(2, 2, 1.0);
    VarD a = VarD::leaf(av), b = VarD::leaf(bv);
    // sum((a+b).*(a-b)) = sum(a^2 - b^2): da = 2a, db = -2b.
    VarD y = ad::sum_all(ad::cmul(ad::add(a, b), ad::sub(a, b)));
    ad::backward(y);
    CHECK((a.grad() - 2.0 * av).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((b.grad() + 2.0 * bv).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stopgrad blocks the backward path but keeps the value") {
    const MatrixD av = MatrixD::Constant(2, 2, 3.0);
    VarD a = VarD::leaf(av);
    VarD y = ad::sum_all(ad::cmul(a, ad::stopgrad(a)));
    CHECK(y.scalar() == doctest::Approx(4 * 9.0));
    ad::backward(y);
    // d/da sum(a .* const(a)) = a, not 2a.
    CHECK((a.grad() - av).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("NoGradGuard produces untracked graphs and backward is a no-op") {
    ad::NoGradGuard guard;
    VarD a = VarD::leaf(MatrixD::Constant(2, 2, 1.0));
    CHECK(!a.requires_grad());
    VarD y = ad::sum_all(a);
    CHECK(!y.requires_grad());
    CHECK_NOTHROW(ad::backward(y));
    CHECK(!a.node()->has_grad());
}

TEST_CASE("backward rejects non-scalar roots") {
    VarD a = VarD::leaf(MatrixD::Zero(2, 3));
    CHECK_THROWS_AS(ad::backward(a), ShapeMismatch);
}

TEST_CASE("ParamStore: ordered registry with unique names") {
    ad::ParamStore<double> store;
    store.add("w", MatrixD::Zero(2, 3));
    store.add("b", MatrixD::Zero(1, 3), false);
    CHECK_THROWS_AS(store.add("w", MatrixD::Zero(1, 1)), InvalidArgument);
    CHECK(store.scalar_count() == 9);
    CHECK(store.items().size() == 2);
    CHECK(store.items()[0]->name == "w");
    CHECK(store.find("b") != nullptr);
    CHECK(store.find("b")->trainable == false);
    CHECK(store.find("missing") == nullptr);
}

TEST_CASE("Binding caches one Var per parameter and harvests leaf grads") {
    ad::ParamStore<double> store;
    auto& w = store.add("w", MatrixD::Constant(1, 2, 2.0));
    auto& frozen = store.add("f", MatrixD::Constant(1, 2, 5.0), false);

    ad::Binding<double> bind;
    VarD w1 = bind(w), w2 = bind(w);
    CHECK(w1.node().get() == w2.node().get());
    CHECK(bind(frozen).requires_grad() == false);

    // y = sum(w .* w) + sum(f): two uses of the cached leaf accumulate.
    VarD y = ad::add(ad::sum_all(ad::cmul(w1, w2)), ad::sum_all(bind(frozen)));
    ad::backward(y);
    store.zero_grad();
    bind.harvest();
    CHECK((w.grad - MatrixD::Constant(1, 2, 4.0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(frozen.grad.cwiseAbs().maxCoeff() == 0.0);

    ad::Binding<double> eval_bind(false);
    CHECK(eval_bind(w).requires_grad() == false);
}

TEST_CASE("gradcheck: arithmetic ops") {
    Rng rng(7);
    const MatrixD a = rng.normal_matrix<double>(2, 3, 1.0);
    const MatrixD b = rng.normal_matrix<double>(2, 3, 1.0);
    const MatrixD w = weights_like(2, 3, 100);

    gradcheck::check([&](const VecVar& v) { return weighted(ad::add(v[0], v[1]), w); }, {a, b});
    gradcheck::check([&](const VecVar& v) { return weighted(ad::sub(v[0], v[1]), w); }, {a, b});
    gradcheck::check([&](const VecVar& v) { return weighted(ad::cmul(v[0], v[1]), w); }, {a, b});
    gradcheck::check([&](const VecVar& v) { return weighted(ad::scale(v[0], 1.7), w); }, {a});
    gradcheck::check([&](const VecVar& v) { return ad::mean_all(v[0]); }, {a});
}

TEST_CASE("gradcheck: matmul, transpose and broadcast adds") {
    Rng rng(8);
    const MatrixD a = rng.normal_matrix<double>(2, 3, 1.0);
    const MatrixD b = rng.normal_matrix<double>(3, 4, 1.0);
    const MatrixD row = rng.normal_matrix<double>(1, 4, 1.0);
    const MatrixD x = rng.normal_matrix<double>(3, 4, 1.0);
    const MatrixD col = rng.normal_matrix<double>(3, 1, 1.0);
    const MatrixD w24 = weights_like(2, 4, 101);
    const MatrixD w32 = weights_like(3, 2, 102);
    const MatrixD w34 = weights_like(3, 4, 103);

    gradcheck::check([&](const VecVar& v) { return weighted(ad::matmul(v[0], v[1]), w24); },
                     {a, b});
    gradcheck::check([&](const VecVar& v) { return weighted(ad::transpose(v[0]), w32); }, {a});
    gradcheck::check([&](const VecVar& v) { return weighted(ad::add_rowvec(v[0], v[1]), w34); },
                     {x, row});
    gradcheck::check([&](const VecVar& v) { return weighted(ad::add_colvec(v[0], v[1]), w34); },
                     {x, col});
    gradcheck::check([&](const VecVar& v) { return weighted(ad::linear(v[0], v[1], v[2]), w24); },
                     {a, b, row});
}

TEST_CASE("gradcheck: nonlinearities and normalization") {
    Rng rng(9);
    const MatrixD x = rng.normal_matrix<double>(2, 4, 1.0);
    const MatrixD gamma = rng.uniform_matrix<double>(1, 4, 0.5, 1.5);
    const MatrixD beta = rng.normal_matrix<double>(1, 4, 0.5);
    const MatrixD w = weights_like(2, 4, 104);

    gradcheck::check([&](const VecVar& v) { return weighted(ad::sigmoid(v[0]), w); }, {x});
    gradcheck::check([&](const VecVar& v) { return weighted(ad::gelu(v[0]), w); }, {x});
    gradcheck::check([&](const VecVar& v) { return weighted(ad::softmax_rows(v[0]), w); }, {x});
    gradcheck::check(
        [&](const VecVar& v) { return weighted(ad::layernorm_rows(v[0], v[1], v[2]), w); },
        {x, gamma, beta}, 1e-5, 5e-6);
}

TEST_CASE("layernorm_rows and softmax_rows forward invariants") {
    Rng rng(10);
    VarD x = VarD::constant(rng.normal_matrix<double>(3, 8, 2.0));
    VarD ones = VarD::constant(MatrixD::Ones(1, 8));
    VarD zeros = VarD::constant(MatrixD::Zero(1, 8));
    const MatrixD ln = ad::layernorm_rows(x, ones, zeros).value();
    for (int r = 0; r < 3; ++r) {
        CHECK(ln.row(r).mean() == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(ln.row(r).array().square().mean() == doctest::Approx(1.0).epsilon(1e-4));
    }
    const MatrixD sm = ad::softmax_rows(x).value();
    for (int r = 0; r < 3; ++r) CHECK(sm.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ad::gelu(VarD::constant(MatrixD::Zero(1, 1))).scalar() == 0.0);
}

TEST_CASE("gradcheck: scalar gates and structural ops") {
    Rng rng(11);
    const MatrixD s = MatrixD::Constant(1, 1, 0.3);
    const MatrixD x = rng.normal_matrix<double>(2, 3, 1.0);
    const MatrixD x2 = rng.normal_matrix<double>(3, 3, 1.0);
    const MatrixD w23 = weights_like(2, 3, 105);
    const MatrixD w53 = weights_like(5, 3, 106);
    const MatrixD w34 = weights_like(3, 4, 107);

    gradcheck::check([&](const VecVar& v) { return weighted(ad::scale_by(v[0], v[1]), w23); },
                     {s, x});
    gradcheck::check(
        [&](const VecVar& v) { return ad::sum_all(ad::one_minus(v[0])); }, {s});
    gradcheck::check(
        [&](const VecVar& v) { return weighted(ad::concat_rows(v[0], v[1]), w53); }, {x, x2});
    gradcheck::check(
        [&](const VecVar& v) { return weighted(ad::slice_rows(v[0], 1, 2), w23); }, {x2});
    gradcheck::check(
        [&](const VecVar& v) { return weighted(ad::reshape_rowmajor(v[0], 3, 4), w34); },
        {rng.normal_matrix<double>(2, 6, 1.0)});
}

TEST_CASE("slice/concat/reshape forward layout") {
    MatrixD m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    VarD a = VarD::constant(m);
    const MatrixD r = ad::reshape_rowmajor(a, 3, 2).value();
    MatrixD expect(3, 2);
    expect << 1, 2, 3, 4, 5, 6;  // row-major reading order preserved
    CHECK((r - expect).cwiseAbs().maxCoeff() == 0.0);
    const MatrixD s = ad::slice_rows(ad::concat_rows(a, a), 2, 2).value();
    CHECK((s - m).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(ad::slice_rows(a, 1, 5), ShapeMismatch);
}

TEST_CASE("gradcheck: losses") {
    Rng rng(12);
    const MatrixD pred = rng.normal_matrix<double>(2, 4, 1.0);
    const MatrixD target = rng.normal_matrix<double>(2, 4, 1.0);
    MatrixD gt = MatrixD::Zero(1, 8);
    for (int i = 0; i < 8; i += 3) gt(0, i) = 1.0;
    const MatrixD z = rng.normal_matrix<double>(1, 8, 1.0);
    const MatrixD a = rng.uniform_matrix<double>(3, 4, 0.5, 1.5);
    const MatrixD e = rng.uniform_matrix<double>(3, 4, 0.5, 1.5);

    gradcheck::check([&](const VecVar& v) { return ad::mse_vs(v[0], target); }, {pred});
    gradcheck::check(
        [&](const VecVar& v) { return ad::dice_loss_vs(ad::sigmoid(v[0]), gt); }, {z});
    gradcheck::check([&](const VecVar& v) { return ad::cosine_align_vs(v[0], e); }, {a});
}

TEST_CASE("loss forward values match closed forms") {
    // mse over 4 entries: mean((1,2,3,4) - 0)^2 = 30/4.
    MatrixD p(1, 4);
    p << 1, 2, 3, 4;
    CHECK(ad::mse_vs(VarD::constant(p), MatrixD(MatrixD::Zero(1, 4))).scalar() ==
          doctest::Approx(7.5));
    // Perfect binary prediction: dice loss ~ 0; disjoint prediction: ~ 1.
    MatrixD gt(1, 4);
    gt << 1, 1, 0, 0;
    MatrixD flip(1, 4);
    flip << 0, 0, 1, 1;
    CHECK(ad::dice_loss_vs(VarD::constant(gt), gt).scalar() ==
          doctest::Approx(0.0).epsilon(1e-5));
    CHECK(ad::dice_loss_vs(VarD::constant(flip), gt).scalar() ==
          doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("gradcheck: conv2d across stride and padding variants") {
    Rng rng(13);
    // k3 s1 p1 keeps the grid; k3 s2 p1 and k2 s2 p0 downsample.
    struct Case {
        int c_in, c_out, h, w, k, stride, pad, out_h, out_w;
    };
    for (const Case t : {Case{2, 3, 4, 4, 3, 1, 1, 4, 4}, Case{2, 2, 5, 5, 3, 2, 1, 3, 3},
                         Case{1, 2, 4, 4, 2, 2, 0, 2, 2}}) {
        const MatrixD x = rng.normal_matrix<double>(t.c_in, t.h * t.w, 1.0);
        const MatrixD wgt = rng.normal_matrix<double>(t.c_out, t.c_in * t.k * t.k, 0.5);
        const MatrixD bias = rng.normal_matrix<double>(t.c_out, 1, 0.5);
        const MatrixD red = weights_like(t.c_out, t.out_h * t.out_w, 108);
        gradcheck::check(
            [&](const VecVar& v) {
                return weighted(
                    ad::conv2d(v[0], v[1], v[2], t.h, t.w, t.k, t.stride, t.pad), red);
            },
            {x, wgt, bias});
    }
}

TEST_CASE("conv2d forward oracle: 3x3 box filter counts neighbors") {
    // All-ones input and all-ones kernel: each output counts the valid taps.
    VarD x = VarD::constant(MatrixD::Ones(1, 9));
    VarD w = VarD::constant(MatrixD::Ones(1, 9));
    VarD b = VarD::constant(MatrixD::Zero(1, 1));
    const MatrixD y = ad::conv2d(x, w, b, 3, 3, 3, 1, 1).value();
    MatrixD expect(1, 9);
    expect << 4, 6, 4, 6, 9, 6, 4, 6, 4;
    CHECK((y - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradcheck: avg_pool and bilinear_resize") {
    Rng rng(14);
    const MatrixD x = rng.normal_matrix<double>(2, 16, 1.0);
    gradcheck::check(
        [&](const VecVar& v) {
            return weighted(ad::avg_pool(v[0], 4, 4, 2), weights_like(2, 4, 109));
        },
        {x});
    const MatrixD small = rng.normal_matrix<double>(1, 9, 1.0);
    gradcheck::check(
        [&](const VecVar& v) {
            return weighted(ad::bilinear_resize(v[0], 3, 3, 5, 7), weights_like(1, 35, 110));
        },
        {small});
    gradcheck::check(
        [&](const VecVar& v) {
            return weighted(ad::bilinear_resize(v[0], 4, 4, 2, 2), weights_like(2, 4, 111));
        },
        {x});
}

TEST_CASE("avg_pool and bilinear_resize forward behavior") {
    MatrixD m(1, 16);
    for (int i = 0; i < 16; ++i) m(0, i) = i;
    const MatrixD pooled = ad::avg_pool(VarD::constant(m), 4, 4, 2).value();
    MatrixD expect(1, 4);
    expect << 2.5, 4.5, 10.5, 12.5;
    CHECK((pooled - expect).cwiseAbs().maxCoeff() < 1e-12);
    // Resizing a constant map must reproduce the constant exactly.
    const MatrixD up =
        ad::bilinear_resize(VarD::constant(MatrixD::Constant(1, 9, 2.5)), 3, 3, 8, 8).value();
    CHECK((up.array() - 2.5).abs().maxCoeff() < 1e-12);
    // Identity resize is exact.
    const MatrixD same = ad::bilinear_resize(VarD::constant(m), 4, 4, 4, 4).value();
    CHECK((same - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradcheck: scaled dot-product attention") {
    Rng rng(15);
    const MatrixD q = rng.normal_matrix<double>(3, 4, 1.0);
    const MatrixD k = rng.normal_matrix<double>(5, 4, 1.0);
    const MatrixD v = rng.normal_matrix<double>(5, 6, 1.0);
    gradcheck::check(
        [&](const VecVar& vars) {
            return weighted(ad::scaled_dot_attention(vars[0], vars[1], vars[2]),
                            weights_like(3, 6, 112));
        },
        {q, k, v}, 1e-5, 5e-6);
}
