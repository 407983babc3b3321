#include <doctest.h>

#include "ramit/gradcheck.hpp"
#include "ramit/model.hpp"
#include "ramit/pipeline.hpp"
#include "testutil.hpp"

using namespace ramit;

namespace {

ModelConfig tiny_config(Task task = Task::color_dn, std::int64_t window = 8) {
    ModelConfig cfg;
    cfg.channels = 16;
    cfg.depths = {1, 1, 1, 1};
    cfg.heads = {4, 4, 4, 4};
    cfg.window = window;
    cfg.task = task;
    cfg.fusion_mobivari = MobiVariSpec{1, 1.2};
    return cfg;
}

Tensor to_tokens(const Tensor& x) {
    return reshape(permute(x, {1, 2, 0}), {x.dim(1) * x.dim(2), x.dim(0)});
}

}  // namespace

TEST_CASE("dramit block preserves shape") {
    ModelConfig cfg = tiny_config();
    DRamitBlockT<float> block(cfg, 0, 0);
    ParamStoreT<float> ps;
    block.register_params(ps, "b");
    ps.init_weights_trunc_normal(1);
    Tensor x = testutil::random_tensor<float>({16, 16, 16}, 2);
    ReciprocalCacheT<float> cache;
    auto out = block.forward(x, cache);
    CHECK(out.x.shape() == Shape{16, 16, 16});
    CHECK(out.tapped.shape() == Shape{16, 16, 16});
}

TEST_CASE("dramit block with zero weights computes LN(LN(x))") {
    ModelConfig cfg = tiny_config();
    DRamitBlockT<float> block(cfg, 0, 0);  // fresh weights are zero, LN affine is (1, 0)
    Tensor x = testutil::random_tensor<float>({16, 8, 8}, 3);
    ReciprocalCacheT<float> cache;
    auto out = block.forward(x, cache);

    Tensor gamma = Tensor::full({16}, 1.0f), beta = Tensor::zeros({16});
    Tensor expect = layer_norm(layer_norm(to_tokens(x), gamma, beta), gamma, beta);
    CHECK(testutil::max_abs_diff(to_tokens(out.x), expect) < 1e-6);
}

TEST_CASE("block parameter count is independent of input resolution") {
    ModelConfig cfg = tiny_config();
    DRamitBlockT<float> a(cfg, 0, 0), b(cfg, 0, 0);
    ParamStoreT<float> pa, pb;
    a.register_params(pa, "x");
    b.register_params(pb, "x");
    CHECK(pa.scalar_count() == pb.scalar_count());
    // same weights work at any window-divisible resolution
    Tensor x1 = testutil::random_tensor<float>({16, 8, 8}, 4);
    Tensor x2 = testutil::random_tensor<float>({16, 24, 16}, 5);
    ReciprocalCacheT<float> cache;
    CHECK(a.forward(x1, cache).x.shape() == Shape{16, 8, 8});
    CHECK(a.forward(x2, cache).x.shape() == Shape{16, 24, 16});
}

TEST_CASE("bottleneck concatenates 2C + C/4 + C/16 channels") {
    ModelConfig cfg = ModelConfig::preset("sr_x2");
    CHECK(cfg.fusion_in_channels() == 148);
    ModelConfig slim = ModelConfig::preset("slim_sr_x2");
    CHECK(slim.fusion_in_channels() == 111);

    RamitModelT<float> model(tiny_config());
    model.init_weights(11);
    CHECK(model.cfg.fusion_in_channels() == 37);
    Tensor xs = testutil::random_tensor<float>({16, 16, 16}, 6);
    Tensor s1 = testutil::random_tensor<float>({16, 16, 16}, 7);
    Tensor s2 = testutil::random_tensor<float>({16, 8, 8}, 8);
    Tensor s3 = testutil::random_tensor<float>({16, 4, 4}, 9);
    Tensor fused = model.bottleneck(xs, s1, s2, s3);
    CHECK(fused.shape() == Shape{16, 16, 16});

    // the op is exactly shuffle-up + concat + MobiVari
    Tensor manual = model.bottleneck_mix.forward(
        concat<float>({xs, s1, pixel_shuffle(s2, 2), pixel_shuffle(s3, 4)}, 0));
    CHECK(testutil::bitwise_equal(fused, manual));
}

TEST_CASE("bottleneck reacts to coarse-scale inputs only through their slice") {
    RamitModelT<float> model(tiny_config());
    model.init_weights(12);
    Tensor xs = testutil::random_tensor<float>({16, 16, 16}, 13);
    Tensor s1 = testutil::random_tensor<float>({16, 16, 16}, 14);
    Tensor s2 = testutil::random_tensor<float>({16, 8, 8}, 15);
    Tensor s3 = testutil::random_tensor<float>({16, 4, 4}, 16);
    Tensor base = model.bottleneck(xs, s1, s2, s3);
    Tensor zeroed = model.bottleneck(xs, s1, Tensor::zeros({16, 8, 8}), Tensor::zeros({16, 4, 4}));
    CHECK(testutil::max_abs_diff(base, zeroed) > 0.0);
    // identical coarse inputs reproduce the result exactly
    CHECK(testutil::bitwise_equal(model.bottleneck(xs, s1, s2, s3), base));
}

TEST_CASE("hrami mixes the four tapped attentions to full resolution") {
    RamitModelT<float> model(tiny_config());
    model.init_weights(17);
    Tensor a1 = testutil::random_tensor<float>({16, 16, 16}, 18);
    Tensor a2 = testutil::random_tensor<float>({16, 8, 8}, 19);
    Tensor a3 = testutil::random_tensor<float>({16, 4, 4}, 20);
    Tensor a4 = testutil::random_tensor<float>({16, 16, 16}, 21);
    CHECK(model.hrami(a1, a2, a3, a4).shape() == Shape{16, 16, 16});
}

TEST_CASE("hrami forced to ones reduces the model to the ungated variant") {
    RamitModelT<float> model(tiny_config());
    model.init_weights(22);
    // zero the H-RAMi MobiVari and set its pointwise bias to 1: output == 1
    for (auto& p : {&model.hrami_mix.expand.w, &model.hrami_mix.expand.b, &model.hrami_mix.dw.w,
                    &model.hrami_mix.dw.b, &model.hrami_mix.pw.w}) {
        float* d = p->mutable_data();
        std::fill(d, d + p->numel(), 0.0f);
    }
    {
        float* d = model.hrami_mix.pw.b.mutable_data();
        std::fill(d, d + model.hrami_mix.pw.b.numel(), 1.0f);
    }
    Tensor x = testutil::random_tensor<float>({3, 32, 32}, 23, 0.0, 1.0);
    ForwardCaptureT<float> cap;
    Tensor out = model.forward(x, &cap);
    for (std::int64_t i = 0; i < cap.hrami.numel(); ++i) CHECK(cap.hrami.data()[i] == 1.0f);
    Tensor expect = model.reconstruction(add(cap.stage_out[3], cap.shallow));
    CHECK(testutil::bitwise_equal(out, expect));
}

TEST_CASE("reconstruction shapes per task") {
    {
        RamitModelT<float> model(tiny_config(Task::sr));
        model.init_weights(24);
        Tensor x = testutil::random_tensor<float>({16, 32, 32}, 25);
        CHECK(model.reconstruction(x).shape() == Shape{3, 64, 64});
    }
    {
        RamitModelT<float> model(tiny_config(Task::gray_dn));
        model.init_weights(26);
        Tensor x = testutil::random_tensor<float>({16, 32, 32}, 27);
        CHECK(model.reconstruction(x).shape() == Shape{1, 32, 32});
    }
}

TEST_CASE("denoise model with zeroed reconstruction conv returns the input") {
    ModelConfig cfg = tiny_config(Task::color_dn);
    RamitModelT<float> model(cfg);
    model.init_weights(28);
    float* w = model.recon_conv.w.mutable_data();
    std::fill(w, w + model.recon_conv.w.numel(), 0.0f);
    float* b = model.recon_conv.b.mutable_data();
    std::fill(b, b + model.recon_conv.b.numel(), 0.0f);

    Tensor lq = testutil::random_tensor<float>({3, 32, 32}, 29, 0.0, 1.0);
    Tensor res = model.forward(lq);
    for (std::int64_t i = 0; i < res.numel(); ++i) CHECK(res.data()[i] == 0.0f);
    Tensor rc = restore_normalized(model, lq);
    CHECK(testutil::bitwise_equal(rc, lq));
}

TEST_CASE("model forward shape law") {
    {
        ModelConfig cfg = tiny_config(Task::sr);
        cfg.scale = 2;
        RamitModelT<float> model(cfg);
        model.init_weights(30);
        Tensor x = testutil::random_tensor<float>({3, 64, 64}, 31, 0.0, 1.0);
        CHECK(model.forward(x).shape() == Shape{3, 128, 128});
    }
    {
        RamitModelT<float> model(tiny_config(Task::derain));
        model.init_weights(32);
        Tensor x = testutil::random_tensor<float>({3, 64, 64}, 33, 0.0, 1.0);
        CHECK(model.forward(x).shape() == Shape{3, 64, 64});
    }
}

TEST_CASE("model rejects wrong input shapes") {
    RamitModelT<float> model(tiny_config());
    model.init_weights(34);
    CHECK_THROWS_AS((void)model.forward(testutil::random_tensor<float>({3, 30, 32}, 35)), BadInputShape);
    CHECK_THROWS_AS((void)model.forward(testutil::random_tensor<float>({1, 32, 32}, 36)), BadInputShape);
}

TEST_CASE("stages run at full, half, quarter and full resolution") {
    RamitModelT<float> model(tiny_config());
    model.init_weights(37);
    Tensor x = testutil::random_tensor<float>({3, 32, 32}, 38, 0.0, 1.0);
    ForwardCaptureT<float> cap;
    (void)model.forward(x, &cap);
    CHECK(cap.stage_out[0].shape() == Shape{16, 32, 32});
    CHECK(cap.stage_out[1].shape() == Shape{16, 16, 16});
    CHECK(cap.stage_out[2].shape() == Shape{16, 8, 8});
    CHECK(cap.stage_out[3].shape() == Shape{16, 32, 32});
    for (int s = 0; s < 4; ++s)
        CHECK(cap.tapped[static_cast<std::size_t>(s)].shape() ==
              cap.stage_out[static_cast<std::size_t>(s)].shape());
}

TEST_CASE("default head split is (3,1) in every stage") {
    ModelConfig cfg = ModelConfig::preset("sr_x2");
    for (int s = 0; s < 4; ++s) {
        AttentionConfig a = cfg.attention_config(s, 0);
        CHECK(a.heads_sp() == 3);
        CHECK(a.heads_ch == 1);
    }
}

TEST_CASE("config validation catches bad setups") {
    ModelConfig cfg = tiny_config();
    cfg.channels = 24;  // not divisible by 16
    CHECK_THROWS_AS(cfg.validate(), BadConfig);

    ModelConfig sr = tiny_config(Task::sr);
    sr.scale = 5;
    CHECK_THROWS_AS(sr.validate(), InvalidScale);

    ModelConfig split = tiny_config();
    split.chsa_ratio = 1.0;  // L_sp would be 0
    CHECK_THROWS_AS(split.validate(), BadConfig);

    ModelConfig fusion = tiny_config();
    fusion.fusion_mobivari = MobiVariSpec{4, 1.2};  // 37 channels, groups 4
    CHECK_THROWS_AS(fusion.validate(), BadConfig);
}

TEST_CASE("helper task defaults and override") {
    CHECK(ModelConfig::preset("sr_x2").helper());
    CHECK(ModelConfig::preset("lle").helper());
    CHECK_FALSE(ModelConfig::preset("color_dn").helper());
    CHECK_FALSE(ModelConfig::preset("gray_dn").helper());
    CHECK_FALSE(ModelConfig::preset("derain").helper());
    ModelConfig cfg = ModelConfig::preset("derain");
    cfg.helper_enabled = true;
    CHECK(cfg.helper());
}

TEST_CASE("end-to-end gradcheck on the tiny model") {
    auto rep = gradcheck::run_model_check(0, 1e-2);
    INFO("worst " << rep.worst << " at " << rep.worst_param);
    CHECK(rep.pass);
}

TEST_CASE("gradients flow through helper and shifted blocks") {
    // depths >= 2 in stage 1 exercise both the reciprocal helper and the
    // cyclic shift inside one tape
    ModelConfig cfg = tiny_config(Task::color_dn, 4);
    cfg.depths = {2, 1, 1, 1};
    cfg.helper_enabled = true;
    RamitModelT<double> model(cfg);
    // well-conditioned generic point (see gradcheck.hpp)
    for (const auto& p : model.params.all()) {
        Rng prng(40, "gc." + p.name);
        double* d = p.tensor->mutable_data();
        bool is_gamma = p.name.size() >= 6 && p.name.substr(p.name.size() - 6) == ".gamma";
        for (std::int64_t k = 0; k < p.tensor->numel(); ++k)
            d[k] = (is_gamma ? 1.0 : 0.0) + prng.truncated_normal(0.15);
    }

    Tensor64 lq = testutil::random_tensor<double>({3, 16, 16}, 41, 0.0, 1.0);
    Tensor64 hq = testutil::random_tensor<double>({3, 16, 16}, 42, 0.0, 1.0);
    auto loss_fn = [&] { return mean_all(abs_op(sub(hq, restore_normalized(model, lq)))); };

    std::vector<Tensor64> analytic;
    {
        Tape64 tape;
        Tape64::Scope scope(tape);
        auto grads = tape.backward(loss_fn());
        for (const auto& p : model.params.all()) analytic.push_back(grads.grad(*p.tensor));
    }
    // each parameter probed along its own gradient over a step ladder; the
    // best-agreeing probe counts (kinked windows disqualify themselves)
    auto loss_value = [&] { return loss_fn().item(); };
    double worst = 0.0;
    for (std::size_t i = 0; i < model.params.size(); i += 7) {  // sampled subset
        TensorT<double>& p = *model.params.all()[i].tensor;
        std::vector<double> dir(analytic[i].data(), analytic[i].data() + analytic[i].numel());
        double norm = 0;
        for (double v : dir) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-9) continue;  // below the finite-difference noise floor
        for (auto& v : dir) v /= norm;
        double err = 1.0;
        for (int jitter = 0; jitter < 4 && err > 5e-3; ++jitter) {
            std::vector<double> d = dir;
            if (jitter > 0) {
                Rng jr(43, model.params.all()[i].name + ".j" + std::to_string(jitter));
                double jn = 0;
                for (auto& v : d) {
                    v += 0.3 * jr.normal();
                    jn += v * v;
                }
                jn = std::sqrt(jn);
                for (auto& v : d) v /= jn;
            }
            double a = 0;
            for (std::int64_t k = 0; k < p.numel(); ++k)
                a += analytic[i].data()[k] * d[static_cast<std::size_t>(k)];
            for (double h : {1e-5, 1e-6, 1e-7, 1e-8, 3e-9}) {
                double numeric = gradcheck::central_directional(p, d, h, loss_value);
                err = std::min(err, std::abs(a - numeric) /
                                        (std::max(std::abs(a), std::abs(numeric)) + 1e-12));
            }
        }
        worst = std::max(worst, err);
    }
    INFO("worst sampled rel err " << worst);
    CHECK(worst < 1e-2);
}

TEST_CASE("attribution of a single pure-spsa block is confined to window plus halo") {
    ModelConfig cfg = tiny_config(Task::color_dn, 4);
    cfg.chsa_ratio = 0.0;  // pure SPSA
    DRamitBlockT<float> block(cfg, 0, 0);
    ParamStoreT<float> ps;
    block.register_params(ps, "b");
    ps.init_weights_trunc_normal(50);

    const std::int64_t hh = 16, ww = 16;
    Tensor x = testutil::random_tensor<float>({16, hh, ww}, 51);
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    ReciprocalCacheT<float> cache;
    auto out = block.forward(x, cache);
    // target region: 2x2 patch inside window (0,0)
    Tensor region = narrow(narrow(out.x, 1, 0, 2), 2, 0, 2);
    auto grads = tape.backward(sum_all(region));
    Tensor g = grads.grad(x);

    double inside = 0.0, outside = 0.0;
    for (std::int64_t y = 0; y < hh; ++y)
        for (std::int64_t xw = 0; xw < ww; ++xw) {
            double acc = 0;
            for (std::int64_t c = 0; c < 16; ++c) {
                double v = g.at({c, y, xw});
                acc += v * v;
            }
            bool in_support = y <= 4 && xw <= 4;  // window 0..3 plus one-pixel halo
            (in_support ? inside : outside) += std::sqrt(acc);
        }
    CHECK(inside > 0.0);
    CHECK(outside < 1e-6 * (inside + outside));
}

TEST_CASE("attribution of a bi-dimensional toy model reaches every window tile") {
    ModelConfig cfg = tiny_config(Task::color_dn, 8);
    cfg.depths = {1, 1, 1, 1};
    RamitModelT<float> model(cfg);
    model.init_weights(52);
    NormStats stats = NormStats::identity(3);
    Tensor lq = testutil::random_tensor<float>({3, 32, 32}, 53, 0.0, 1.0);
    Tensor heat = attribution_map(model, lq, Region{12, 12, 4, 4}, stats);
    CHECK(heat.shape() == Shape{32, 32});
    for (std::int64_t ty = 0; ty < 4; ++ty)
        for (std::int64_t tx = 0; tx < 4; ++tx) {
            double mass = 0;
            for (std::int64_t y = 0; y < 8; ++y)
                for (std::int64_t x = 0; x < 8; ++x) mass += heat.at({ty * 8 + y, tx * 8 + x});
            INFO("tile " << ty << "," << tx);
            CHECK(mass > 0.0);
        }
}

TEST_CASE("attribution of the zero model lands exactly on the region") {
    ModelConfig cfg = tiny_config(Task::color_dn, 8);
    RamitModelT<float> model(cfg);
    model.params.fill_all(0.0f);
    NormStats stats = NormStats::identity(3);
    Tensor lq = testutil::random_tensor<float>({3, 32, 32}, 54, 0.0, 1.0);
    Region region{5, 9, 3, 2};
    Tensor heat = attribution_map(model, lq, region, stats);
    for (std::int64_t y = 0; y < 32; ++y)
        for (std::int64_t x = 0; x < 32; ++x) {
            bool inside = x >= region.x && x < region.x + region.w && y >= region.y &&
                          y < region.y + region.h;
            CHECK(heat.at({y, x}) == (inside ? 1.0f : 0.0f));
        }
}

TEST_CASE("attribution validates the region") {
    RamitModelT<float> model(tiny_config());
    model.init_weights(55);
    NormStats stats = NormStats::identity(3);
    Tensor lq = testutil::random_tensor<float>({3, 32, 32}, 56, 0.0, 1.0);
    CHECK_THROWS_AS((void)attribution_map(model, lq, Region{30, 30, 8, 8}, stats), RegionOutOfBounds);
    CHECK_THROWS_AS((void)attribution_map(model, lq, Region{0, 0, 0, 1}, stats), RegionOutOfBounds);
}
