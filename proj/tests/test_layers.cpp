#include <doctest.h>

#include "ramit/layers.hpp"
#include "testutil.hpp"

using namespace ramit;

TEST_CASE("mobivari expanded channel rounding") {
    CHECK(mobivari_expanded_channels(64, {4, 1.2}) == 76);
    CHECK(mobivari_expanded_channels(256, {4, 1.2}) == 304);
    CHECK(mobivari_expanded_channels(148, {4, 1.2}) == 176);
    CHECK(mobivari_expanded_channels(111, {1, 2.0}) == 222);
    CHECK(mobivari_expanded_channels(111, {3, 1.2}) == 132);
    CHECK(mobivari_expanded_channels(16, {4, 1.2}) == 16);
    CHECK_THROWS_AS((void)mobivari_expanded_channels(2, {4, 1.2}), GroupMismatch);
}

TEST_CASE("mobivari 64->64 default spec has 6980 parameters") {
    MobiVariT<float> mv(64, 64, {4, 1.2});
    // 16*76+76 (grouped 1x1) + 9*76+76 (depthwise) + 76*64+64 (pointwise)
    CHECK(mv.param_count() == 6980);
    CHECK(mv.ce == 76);
}

TEST_CASE("mobivari with zero weights is the identity when channels match") {
    MobiVariT<float> mv(8, 8, {4, 1.2});
    Tensor x = testutil::random_tensor<float>({8, 5, 5}, 1);
    Tensor y = mv.forward(x);
    CHECK(testutil::bitwise_equal(y, x));
}

TEST_CASE("mobivari with zero weights and differing channels outputs zero") {
    MobiVariT<float> mv(8, 12, {4, 1.2});
    Tensor x = testutil::random_tensor<float>({8, 5, 5}, 2);
    Tensor y = mv.forward(x);
    CHECK(y.shape() == Shape{12, 5, 5});
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0f);
}

TEST_CASE("mobivari rejects non-divisible input channels") {
    CHECK_THROWS_AS(MobiVariT<float>(10, 8, MobiVariSpec{4, 1.2}), GroupMismatch);
}

TEST_CASE("mobivari preserves spatial resolution") {
    MobiVariT<float> mv(8, 8, {4, 1.2});
    ParamStoreT<float> ps;
    mv.register_params(ps, "mv");
    ps.init_weights_trunc_normal(7);
    Tensor x = testutil::random_tensor<float>({8, 6, 9}, 3);
    CHECK(mv.forward(x).shape() == Shape{8, 6, 9});
}

TEST_CASE("ffn zero weights give zero output") {
    FfnT<float> ffn(FfnConfig{16, 2.0});
    Tensor x = testutil::random_tensor<float>({10, 16}, 4);
    Tensor y = ffn.forward(x);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0f);
}

TEST_CASE("ffn parameter count and shape law") {
    FfnT<float> ffn(FfnConfig{64, 2.0});
    CHECK(ffn.param_count() == 16576);  // 64*128+128 + 128*64+64
    ParamStoreT<float> ps;
    ffn.register_params(ps, "ffn");
    ps.init_weights_trunc_normal(8);
    Tensor x = testutil::random_tensor<float>({12, 64}, 5);
    CHECK(ffn.forward(x).shape() == Shape{12, 64});
}

TEST_CASE("patch merge halves resolution and keeps channels") {
    DownsizeT<float> down(64, {4, 1.2});
    ParamStoreT<float> ps;
    down.register_params(ps, "down");
    ps.init_weights_trunc_normal(9);
    Tensor x = testutil::random_tensor<float>({64, 16, 16}, 6);
    CHECK(down.forward(x).shape() == Shape{64, 8, 8});

    Tensor odd = testutil::random_tensor<float>({64, 15, 16}, 7);
    CHECK_THROWS_AS((void)down.forward(odd), OddDimension);
}

TEST_CASE("two downsizes compose to a quarter of the resolution") {
    DownsizeT<float> d1(64, {4, 1.2}), d2(64, {4, 1.2});
    Tensor x = testutil::random_tensor<float>({64, 32, 32}, 8);
    CHECK(d2.forward(d1.forward(x)).shape() == Shape{64, 8, 8});
}

TEST_CASE("patch merge with averaging weights preserves a constant field") {
    const std::int64_t c = 8;
    DownsizeT<float> down(c, {4, 1.2});
    // grouped 1x1: every expanded channel averages its group's inputs
    std::int64_t cin = 4 * c, ce = down.reduce.ce, per_group_in = cin / 4;
    float* ew = down.reduce.expand.w.mutable_data();
    for (std::int64_t oc = 0; oc < ce; ++oc)
        for (std::int64_t ic = 0; ic < per_group_in; ++ic)
            ew[oc * per_group_in + ic] = 1.0f / static_cast<float>(per_group_in);
    // depthwise stays zero (residual carries the value); pointwise averages
    float* pw = down.reduce.pw.w.mutable_data();
    for (std::int64_t oc = 0; oc < c; ++oc)
        for (std::int64_t ic = 0; ic < ce; ++ic) pw[oc * ce + ic] = 1.0f / static_cast<float>(ce);

    const float value = 0.6f;
    Tensor x = Tensor::full({c, 8, 8}, value);
    Tensor y = down.forward(x);
    CHECK(y.shape() == Shape{c, 4, 4});
    for (std::int64_t i = 0; i < y.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(value).epsilon(1e-6));
}

TEST_CASE("shallow module shapes and parameter counts") {
    auto rgb = make_shallow<float>(3, 64);
    CHECK(rgb.param_count() == 1792);
    ParamStoreT<float> ps;
    rgb.register_params(ps, "shallow");
    ps.init_weights_trunc_normal(10);
    Tensor x = testutil::random_tensor<float>({3, 8, 8}, 9);
    CHECK(rgb.forward(x).shape() == Shape{64, 8, 8});

    auto gray = make_shallow<float>(1, 64);
    Tensor g = testutil::random_tensor<float>({1, 8, 8}, 10);
    CHECK(gray.forward(g).shape() == Shape{64, 8, 8});
}
