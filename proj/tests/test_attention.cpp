#include <doctest.h>

#include <vector>

#include "ramit/attention.hpp"
#include "ramit/model.hpp"
#include "ramit/nn.hpp"
#include "testutil.hpp"

using namespace ramit;

namespace {

// Dense evaluation of the spatial attention head formula in raw doubles,
// independent of the tensor ops.
std::vector<double> spsa_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                                const Tensor& bias, const Tensor& tau, std::int64_t heads) {
    std::int64_t nw = q.dim(0), m2 = q.dim(1), c = q.dim(2), d = c / heads;
    std::vector<double> out(static_cast<std::size_t>(nw * m2 * c), 0.0);
    for (std::int64_t w = 0; w < nw; ++w)
        for (std::int64_t h = 0; h < heads; ++h) {
            std::vector<double> qn(static_cast<std::size_t>(m2 * d)), kn(qn.size());
            for (std::int64_t t = 0; t < m2; ++t) {
                double nq = 0, nk = 0;
                for (std::int64_t j = 0; j < d; ++j) {
                    double qv = q.at({w, t, h * d + j}), kv = k.at({w, t, h * d + j});
                    nq += qv * qv;
                    nk += kv * kv;
                }
                nq = std::sqrt(nq) + 1e-8;
                nk = std::sqrt(nk) + 1e-8;
                for (std::int64_t j = 0; j < d; ++j) {
                    qn[static_cast<std::size_t>(t * d + j)] = q.at({w, t, h * d + j}) / nq;
                    kn[static_cast<std::size_t>(t * d + j)] = k.at({w, t, h * d + j}) / nk;
                }
            }
            for (std::int64_t i = 0; i < m2; ++i) {
                std::vector<double> logits(static_cast<std::size_t>(m2));
                double mx = -1e300;
                for (std::int64_t t = 0; t < m2; ++t) {
                    double dot = 0;
                    for (std::int64_t j = 0; j < d; ++j)
                        dot += qn[static_cast<std::size_t>(i * d + j)] * kn[static_cast<std::size_t>(t * d + j)];
                    logits[static_cast<std::size_t>(t)] =
                        dot / tau.at({h}) + bias.at({i, t});
                    mx = std::max(mx, logits[static_cast<std::size_t>(t)]);
                }
                double denom = 0;
                for (std::int64_t t = 0; t < m2; ++t) denom += std::exp(logits[static_cast<std::size_t>(t)] - mx);
                for (std::int64_t t = 0; t < m2; ++t) {
                    double a = std::exp(logits[static_cast<std::size_t>(t)] - mx) / denom;
                    for (std::int64_t j = 0; j < d; ++j)
                        out[static_cast<std::size_t>((w * m2 + i) * c + h * d + j)] +=
                            a * v.at({w, t, h * d + j});
                }
            }
        }
    return out;
}

// Dense channel-attention oracle: q,k,v are (L, d, N).
std::vector<double> chsa_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                                const Tensor& tau) {
    std::int64_t heads = q.dim(0), d = q.dim(1), n = q.dim(2);
    std::vector<double> out(static_cast<std::size_t>(heads * d * n), 0.0);
    for (std::int64_t h = 0; h < heads; ++h) {
        std::vector<double> qn(static_cast<std::size_t>(d * n)), kn(qn.size());
        for (std::int64_t i = 0; i < d; ++i) {
            double nq = 0, nk = 0;
            for (std::int64_t t = 0; t < n; ++t) {
                nq += static_cast<double>(q.at({h, i, t})) * q.at({h, i, t});
                nk += static_cast<double>(k.at({h, i, t})) * k.at({h, i, t});
            }
            nq = std::sqrt(nq) + 1e-8;
            nk = std::sqrt(nk) + 1e-8;
            for (std::int64_t t = 0; t < n; ++t) {
                qn[static_cast<std::size_t>(i * n + t)] = q.at({h, i, t}) / nq;
                kn[static_cast<std::size_t>(i * n + t)] = k.at({h, i, t}) / nk;
            }
        }
        for (std::int64_t i = 0; i < d; ++i) {
            std::vector<double> logits(static_cast<std::size_t>(d));
            double mx = -1e300;
            for (std::int64_t j = 0; j < d; ++j) {
                double dot = 0;
                for (std::int64_t t = 0; t < n; ++t)
                    dot += qn[static_cast<std::size_t>(i * n + t)] * kn[static_cast<std::size_t>(j * n + t)];
                logits[static_cast<std::size_t>(j)] = dot / tau.at({h});
                mx = std::max(mx, logits[static_cast<std::size_t>(j)]);
            }
            double denom = 0;
            for (std::int64_t j = 0; j < d; ++j) denom += std::exp(logits[static_cast<std::size_t>(j)] - mx);
            for (std::int64_t j = 0; j < d; ++j) {
                double a = std::exp(logits[static_cast<std::size_t>(j)] - mx) / denom;
                for (std::int64_t t = 0; t < n; ++t)
                    out[static_cast<std::size_t>((h * d + i) * n + t)] += a * v.at({h, j, t});
            }
        }
    }
    return out;
}

Tensor positive_tau(std::int64_t heads, std::uint64_t seed) {
    return testutil::random_tensor<float>({heads}, seed, 0.1, 0.9);
}

}  // namespace

TEST_CASE("window partition shape law and round trip") {
    Tensor x = testutil::random_tensor<float>({16 * 16, 3}, 1);
    Tensor w = window_partition(x, 16, 16, 8);
    CHECK(w.shape() == Shape{4, 64, 3});
    CHECK(testutil::bitwise_equal(window_reverse(w, 16, 16, 8), x));
}

TEST_CASE("window partition degenerates to a reshape for one window") {
    Tensor x = testutil::random_tensor<float>({64, 5}, 2);
    Tensor w = window_partition(x, 8, 8, 8);
    CHECK(w.shape() == Shape{1, 64, 5});
    CHECK(testutil::bitwise_equal(reshape(w, {64, 5}), x));
}

TEST_CASE("window partition needs divisible dims") {
    Tensor x = testutil::random_tensor<float>({36, 2}, 3);
    CHECK_THROWS_AS((void)window_partition(x, 6, 6, 4), NotDivisible);
}

TEST_CASE("cyclic shift round trips and small example") {
    Tensor x = testutil::random_tensor<float>({3, 6, 6}, 4);
    CHECK(testutil::bitwise_equal(cyclic_shift(cyclic_shift(x, 4, 4), -4, -4), x));
    CHECK(testutil::bitwise_equal(cyclic_shift(x, 0, 0), x));

    Tensor p({1, 2, 2}, {1, 2, 3, 4});  // [[a,b],[c,d]]
    Tensor s = cyclic_shift(p, 1, 1);
    CHECK(s.at({0, 0, 0}) == 4.0f);
    CHECK(s.at({0, 0, 1}) == 3.0f);
    CHECK(s.at({0, 1, 0}) == 2.0f);
    CHECK(s.at({0, 1, 1}) == 1.0f);
}

TEST_CASE("spsa with a single token per window has a trivial attention map") {
    // M=1: softmax of a singleton is exactly 1, so the head output is V.
    Tensor q = testutil::random_tensor<float>({3, 1, 4}, 5);
    Tensor k = testutil::random_tensor<float>({3, 1, 4}, 6);
    Tensor v = testutil::random_tensor<float>({3, 1, 4}, 7);
    Tensor bias = Tensor::zeros({1, 1});
    AttnDebugT<float> dbg;
    Tensor out = spsa_attend(q, k, v, bias, positive_tau(2, 8), 2, &dbg);
    CHECK(testutil::bitwise_equal(out, v));
    for (std::int64_t i = 0; i < dbg.spsa_map.numel(); ++i) CHECK(dbg.spsa_map.data()[i] == 1.0f);
}

TEST_CASE("spsa attention map is invariant to positive rescaling of Q") {
    Tensor q = testutil::random_tensor<float>({2, 4, 4}, 9);
    Tensor k = testutil::random_tensor<float>({2, 4, 4}, 10);
    Tensor v = testutil::random_tensor<float>({2, 4, 4}, 11);
    Tensor bias = testutil::random_tensor<float>({4, 4}, 12, -0.3, 0.3);
    Tensor tau = positive_tau(2, 13);

    AttnDebugT<float> d1, d2, d3;
    (void)spsa_attend(q, k, v, bias, tau, 2, &d1);
    (void)spsa_attend(scale(q, 5.0f), k, v, bias, tau, 2, &d2);
    CHECK(testutil::max_abs_diff(d1.spsa_map, d2.spsa_map) < 1e-6);

    // per-token positive rescaling of K
    Tensor scale_k = testutil::random_tensor<float>({2, 4, 1}, 14, 0.5, 3.0);
    (void)spsa_attend(q, mul(k, scale_k), v, bias, tau, 2, &d3);
    CHECK(testutil::max_abs_diff(d1.spsa_map, d3.spsa_map) < 1e-6);
}

TEST_CASE("spsa requires a bias") {
    Tensor q = testutil::random_tensor<float>({1, 4, 2}, 15);
    CHECK_THROWS_AS((void)spsa_attend(q, q, q, Tensor(), positive_tau(1, 16), 1), MissingBias);
}

TEST_CASE("spsa matches the dense formula oracle") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        std::int64_t heads = 1 + static_cast<std::int64_t>(seed % 2);
        std::int64_t d = 1 + static_cast<std::int64_t>(seed % 4);
        std::int64_t c = heads * d, nw = 1 + static_cast<std::int64_t>(seed % 2);
        Tensor q = testutil::random_tensor<float>({nw, 4, c}, 20 + seed);
        Tensor k = testutil::random_tensor<float>({nw, 4, c}, 40 + seed);
        Tensor v = testutil::random_tensor<float>({nw, 4, c}, 60 + seed);
        Tensor bias = testutil::random_tensor<float>({4, 4}, 80 + seed, -0.4, 0.4);
        Tensor tau = positive_tau(heads, 90 + seed);
        Tensor out = spsa_attend(q, k, v, bias, tau, heads);
        auto expect = spsa_oracle(q, k, v, bias, tau, heads);
        for (std::int64_t i = 0; i < out.numel(); ++i)
            CHECK(out.data()[i] == doctest::Approx(expect[static_cast<std::size_t>(i)]).epsilon(1e-5));
    }
}

TEST_CASE("chsa with head dim 1 has a trivial attention map") {
    Tensor q = testutil::random_tensor<float>({2, 1, 5}, 30);
    Tensor k = testutil::random_tensor<float>({2, 1, 5}, 31);
    Tensor v = testutil::random_tensor<float>({2, 1, 5}, 32);
    AttnDebugT<float> dbg;
    Tensor out = chsa_attend(q, k, v, positive_tau(2, 33), &dbg);
    CHECK(testutil::bitwise_equal(out, v));
    for (std::int64_t i = 0; i < dbg.chsa_map.numel(); ++i) CHECK(dbg.chsa_map.data()[i] == 1.0f);
}

TEST_CASE("chsa matches the dense formula oracle") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        std::int64_t heads = 1 + static_cast<std::int64_t>(seed % 2);
        std::int64_t d = 2 + static_cast<std::int64_t>(seed % 3);
        std::int64_t n = 2 + static_cast<std::int64_t>(seed % 7);
        Tensor q = testutil::random_tensor<float>({heads, d, n}, 120 + seed);
        Tensor k = testutil::random_tensor<float>({heads, d, n}, 140 + seed);
        Tensor v = testutil::random_tensor<float>({heads, d, n}, 160 + seed);
        Tensor tau = positive_tau(heads, 180 + seed);
        Tensor out = chsa_attend(q, k, v, tau);
        auto expect = chsa_oracle(q, k, v, tau);
        for (std::int64_t i = 0; i < out.numel(); ++i)
            CHECK(out.data()[i] == doctest::Approx(expect[static_cast<std::size_t>(i)]).epsilon(1e-5));
    }
}

TEST_CASE("chsa is exactly equivariant to spatial token permutations") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        std::int64_t heads = 2, d = 4, n = 23;
        Tensor q = testutil::random_tensor<float>({heads, d, n}, 200 + seed);
        Tensor k = testutil::random_tensor<float>({heads, d, n}, 220 + seed);
        Tensor v = testutil::random_tensor<float>({heads, d, n}, 240 + seed);
        Tensor tau = positive_tau(heads, 260 + seed);

        // deterministic shuffle
        std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
        Rng rng(300 + seed);
        for (std::int64_t i = n - 1; i > 0; --i)
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);

        auto permute_tokens = [&](const Tensor& t) {
            Tensor out = Tensor::zeros(t.shape());
            for (std::int64_t h = 0; h < heads; ++h)
                for (std::int64_t i = 0; i < d; ++i)
                    for (std::int64_t j = 0; j < n; ++j)
                        out.mutable_data()[(h * d + i) * n + j] =
                            t.at({h, i, perm[static_cast<std::size_t>(j)]});
            return out;
        };

        Tensor base = chsa_attend(q, k, v, tau);
        Tensor permuted = chsa_attend(permute_tokens(q), permute_tokens(k), permute_tokens(v), tau);
        CHECK(testutil::bitwise_equal(permuted, permute_tokens(base)));
    }
}

TEST_CASE("spsa without shift is window-local in the gradient sense") {
    const std::int64_t h = 8, w = 8, m = 4, c = 4, n = h * w;
    Tensor x = testutil::random_tensor<float>({n, c}, 400);
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor xw = window_partition(x, h, w, m);
    Tensor out = spsa_attend(xw, xw, xw, Tensor::zeros({m * m, m * m}), positive_tau(2, 401), 2);
    Tensor tokens = window_reverse(out, h, w, m);
    // output token (1, 2) lives in window (0, 0); sum its channels
    std::int64_t target = 1 * w + 2;
    Tensor loss = sum_all(narrow(tokens, 0, target, 1));
    auto grads = tape.backward(loss);
    Tensor g = grads.grad(x);
    std::int64_t nonzero_outside = 0, nonzero_inside = 0;
    for (std::int64_t t = 0; t < n; ++t) {
        bool inside = (t / w) < m && (t % w) < m;
        for (std::int64_t j = 0; j < c; ++j) {
            if (g.at({t, j}) != 0.0f) (inside ? nonzero_inside : nonzero_outside)++;
        }
    }
    CHECK(nonzero_outside == 0);
    CHECK(nonzero_inside > 0);
}

TEST_CASE("chsa is global in the gradient sense") {
    double nonzero_fraction_total = 0.0;
    const int seeds = 5;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        const std::int64_t d = 4, n = 16;
        Tensor x = testutil::random_tensor<float>({1, d, n}, 500 + seed);
        x.set_requires_grad(true);
        Tape tape;
        Tape::Scope scope(tape);
        Tensor out = chsa_attend(x, x, x, positive_tau(1, 510 + seed));
        Tensor loss = sum_all(narrow(out, 2, 3, 1));  // one output token, all channels
        auto grads = tape.backward(loss);
        Tensor g = grads.grad(x);
        std::int64_t nonzero = 0;
        for (std::int64_t i = 0; i < g.numel(); ++i)
            if (g.data()[i] != 0.0f) nonzero++;
        nonzero_fraction_total += static_cast<double>(nonzero) / static_cast<double>(g.numel());
    }
    CHECK(nonzero_fraction_total / seeds >= 0.99);
}

TEST_CASE("relative position bias table has (2M-1)^2 entries and valid index") {
    RelPosBiasT<float> bias(8);
    CHECK(bias.table.numel() == 225);
    CHECK(bias.index.size() == 64 * 64);
    for (auto idx : bias.index) {
        CHECK(idx >= 0);
        CHECK(idx < 225);
    }
    // diagonal pairs share the zero-offset entry
    CHECK(bias.index[0] == bias.index[65]);
    Tensor b = bias.materialize();
    CHECK(b.shape() == Shape{64, 64});
}

TEST_CASE("tau stays above the clamp floor after adversarial optimizer steps") {
    TauScaleT<float> tau(3);
    ParamStoreT<float> store;
    tau.register_params(store, "tau");
    AdamStateT<float> state;
    state.reset(store);
    for (int step = 0; step < 200; ++step) {
        // gradients that relentlessly push log_tau down
        std::vector<Tensor> grads{Tensor::full({3}, 1.0f)};
        adam_step(store, grads, state, 0.5);
    }
    Tensor eff = tau.effective();
    for (int i = 0; i < 3; ++i) CHECK(eff.at({i}) >= 0.01f - 1e-9f);
}

TEST_CASE("tau initial effective value is 0.1") {
    TauScaleT<float> tau(2);
    Tensor eff = tau.effective();
    for (int i = 0; i < 2; ++i) CHECK(eff.at({i}) == doctest::Approx(0.1).epsilon(1e-6));
}

namespace {
ModelConfig attention_test_config(std::int64_t heads_ch) {
    ModelConfig cfg;
    cfg.channels = 16;
    cfg.depths = {1, 1, 1, 1};
    cfg.heads = {4, 4, 4, 4};
    cfg.chsa_ratio = static_cast<double>(heads_ch) / 4.0;
    cfg.window = 4;
    cfg.task = Task::color_dn;
    cfg.fusion_mobivari = MobiVariSpec{1, 1.2};
    return cfg;
}
}  // namespace

TEST_CASE("dramit attention preserves shape and mixes both branches") {
    ModelConfig cfg = attention_test_config(1);
    DRamitBlockT<float> block(cfg, 0, 0);
    block.attn.qkv.w = testutil::random_tensor<float>(block.attn.qkv.w.shape(), 600, -0.1, 0.1);
    block.mix.pw.w = testutil::random_tensor<float>(block.mix.pw.w.shape(), 601, -0.1, 0.1);
    Tensor x = testutil::random_tensor<float>({16, 8, 8}, 602);
    ReciprocalCacheT<float> cache;
    auto out = block.mixed_attention(x, cache);
    CHECK(out.attention.shape() == Shape{16, 8, 8});
    CHECK(out.cache.spsa_squeezed.shape() == Shape{64, 1});
    CHECK(out.cache.chsa_squeezed.shape() == Shape{4, 64});
    CHECK(out.cache.h == 8);
}

TEST_CASE("chsa head count zero degenerates to pure spsa") {
    ModelConfig cfg = attention_test_config(0);
    DRamitAttentionT<float> attn(cfg.attention_config(0, 0));
    CHECK_FALSE(attn.proj_ch.w.defined());
    Tensor x = testutil::random_tensor<float>({16, 8, 8}, 610);
    ReciprocalCacheT<float> cache;
    auto out = attn.forward(x, cache);
    CHECK(out.mixed_pre.shape() == Shape{16, 8, 8});
    CHECK_FALSE(out.cache.chsa_squeezed.defined());
}

TEST_CASE("helper with empty cache is bitwise identical to helper disabled") {
    ModelConfig cfg = attention_test_config(1);
    cfg.helper_enabled = true;
    DRamitAttentionT<float> attn(cfg.attention_config(0, 0));
    attn.qkv.w = testutil::random_tensor<float>(attn.qkv.w.shape(), 620, -0.2, 0.2);
    attn.proj_sp.w = testutil::random_tensor<float>(attn.proj_sp.w.shape(), 621, -0.2, 0.2);
    attn.proj_ch.w = testutil::random_tensor<float>(attn.proj_ch.w.shape(), 622, -0.2, 0.2);
    Tensor x = testutil::random_tensor<float>({16, 8, 8}, 623);

    ReciprocalCacheT<float> empty;
    CHECK(attn.cfg.helper_enabled);
    Tensor with_helper = attn.forward(x, empty).mixed_pre;
    attn.cfg.helper_enabled = false;
    Tensor without = attn.forward(x, empty).mixed_pre;
    CHECK(testutil::bitwise_equal(with_helper, without));
}

TEST_CASE("helper with a populated cache changes the result and checks resolution") {
    ModelConfig cfg = attention_test_config(1);
    cfg.helper_enabled = true;
    DRamitAttentionT<float> attn(cfg.attention_config(0, 0));
    attn.qkv.w = testutil::random_tensor<float>(attn.qkv.w.shape(), 630, -0.2, 0.2);
    attn.proj_sp.w = testutil::random_tensor<float>(attn.proj_sp.w.shape(), 631, -0.2, 0.2);
    attn.proj_ch.w = testutil::random_tensor<float>(attn.proj_ch.w.shape(), 632, -0.2, 0.2);
    Tensor x = testutil::random_tensor<float>({16, 8, 8}, 633);

    ReciprocalCacheT<float> empty;
    auto first = attn.forward(x, empty);
    auto second = attn.forward(x, first.cache);
    CHECK(testutil::max_abs_diff(first.mixed_pre, second.mixed_pre) > 0.0);

    ReciprocalCacheT<float> wrong = first.cache;
    wrong.h = 4;
    wrong.w = 4;
    CHECK_THROWS_AS((void)attn.forward(x, wrong), ShapeMismatch);
}

TEST_CASE("shift schedule alternates on odd in-stage indices") {
    ModelConfig cfg = attention_test_config(1);
    CHECK_FALSE(cfg.attention_config(0, 0).shift);
    CHECK(cfg.attention_config(0, 1).shift);
    CHECK_FALSE(cfg.attention_config(2, 2).shift);
    CHECK(cfg.attention_config(3, 3).shift);
}

TEST_CASE("shifted attention differs from unshifted but keeps shape") {
    ModelConfig cfg = attention_test_config(1);
    DRamitAttentionT<float> plain(cfg.attention_config(0, 0));
    DRamitAttentionT<float> shifted(cfg.attention_config(0, 1));
    // identical weights
    ParamStoreT<float> a, b;
    plain.register_params(a, "x");
    shifted.register_params(b, "x");
    for (std::size_t i = 0; i < a.size(); ++i) {
        Tensor w = testutil::random_tensor<float>(a.all()[i].tensor->shape(),
                                                  700 + static_cast<std::uint64_t>(i), -0.2, 0.2);
        std::copy(w.data(), w.data() + w.numel(), a.all()[i].tensor->mutable_data());
        std::copy(w.data(), w.data() + w.numel(), b.all()[i].tensor->mutable_data());
    }
    Tensor x = testutil::random_tensor<float>({16, 8, 8}, 710);
    ReciprocalCacheT<float> cache;
    Tensor y0 = plain.forward(x, cache).mixed_pre;
    Tensor y1 = shifted.forward(x, cache).mixed_pre;
    CHECK(y1.shape() == y0.shape());
    CHECK(testutil::max_abs_diff(y0, y1) > 0.0);
}

TEST_CASE("attention maps are row-stochastic") {
    Tensor q = testutil::random_tensor<float>({2, 16, 8}, 720, -2.0, 2.0);
    Tensor k = testutil::random_tensor<float>({2, 16, 8}, 721, -2.0, 2.0);
    Tensor v = testutil::random_tensor<float>({2, 16, 8}, 722);
    Tensor bias = testutil::random_tensor<float>({16, 16}, 723, -0.5, 0.5);
    AttnDebugT<float> dbg;
    (void)spsa_attend(q, k, v, bias, positive_tau(2, 724), 2, &dbg);
    // (L, nw, M^2, M^2): rows sum to one over the last axis
    const Tensor& map = dbg.spsa_map;
    std::int64_t rows = map.numel() / map.shape().back();
    for (std::int64_t r = 0; r < rows; ++r) {
        double sum = 0;
        for (std::int64_t t = 0; t < map.shape().back(); ++t)
            sum += map.data()[r * map.shape().back() + t];
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("complexity closed forms match the stated values") {
    CHECK(complexity(AttentionKind::spsa, 8, 8, 4, 8, 4) == 36864);
    CHECK(complexity(AttentionKind::chsa, 8, 8, 4, 8, 1) == 6144);
}

TEST_CASE("chsa is cheaper than spsa whenever C/L < M^2") {
    Rng rng(808);
    for (int i = 0; i < 50; ++i) {
        std::int64_t m = 2 + static_cast<std::int64_t>(rng.below(9));
        std::int64_t l = 1 + static_cast<std::int64_t>(rng.below(8));
        std::int64_t c = l * (1 + static_cast<std::int64_t>(rng.below(32)));
        std::int64_t h = 8 + static_cast<std::int64_t>(rng.below(64));
        std::int64_t w = 8 + static_cast<std::int64_t>(rng.below(64));
        if (c / l < m * m)
            CHECK(complexity(AttentionKind::chsa, h, w, c, m, l) <
                  complexity(AttentionKind::spsa, h, w, c, m, l));
    }
}

TEST_CASE("dramit core closed form reduces to the pure formulas") {
    CHECK(dramit_core_macs(8, 8, 4, 8, 4, 0) == complexity(AttentionKind::spsa, 8, 8, 4, 8, 4));
    CHECK(dramit_core_macs(8, 8, 4, 8, 4, 4) == complexity(AttentionKind::chsa, 8, 8, 4, 8, 4));
    CHECK(dramit_core_macs(16, 24, 64, 8, 4, 1) > 0);
}
