#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ramit/attention.hpp"
#include "ramit/checkpoint.hpp"
#include "ramit/layers.hpp"
#include "ramit/nn.hpp"
#include "ramit/ops.hpp"

namespace ramit {

enum class Task { sr, color_dn, gray_dn, lle, derain };

const char* task_name(Task t);
Task task_from_name(const std::string& name);

struct ModelConfig {
    std::int64_t channels = 64;  // C
    std::array<std::int64_t, 4> depths{6, 4, 4, 6};
    std::array<std::int64_t, 4> heads{4, 4, 4, 4};
    double chsa_ratio = 0.25;
    std::int64_t window = 8;  // M
    Task task = Task::sr;
    std::int64_t scale = 2;  // r, super-resolution only
    std::optional<bool> helper_enabled;  // default depends on task
    double ffn_ratio = 2.0;
    MobiVariSpec mobivari{4, 1.2};
    // Bottleneck and H-RAMi override (slim presets change these two only).
    std::optional<MobiVariSpec> fusion_mobivari;

    std::int64_t in_channels() const { return task == Task::gray_dn ? 1 : 3; }
    std::int64_t out_channels() const { return in_channels(); }
    std::int64_t upscale() const { return task == Task::sr ? scale : 1; }
    std::int64_t pad_multiple() const { return 4 * window; }
    std::int64_t hidden() const {
        return static_cast<std::int64_t>(std::llround(static_cast<double>(channels) * ffn_ratio));
    }

    // The helper lifts super-resolution and low-light enhancement but not
    // denoising or deraining; tasks pick the default, configs may override.
    bool helper() const {
        if (helper_enabled.has_value()) return *helper_enabled;
        return task == Task::sr || task == Task::lle;
    }

    std::int64_t heads_ch(int stage) const {
        return std::llround(static_cast<double>(heads[static_cast<std::size_t>(stage)]) * chsa_ratio);
    }

    MobiVariSpec fusion_spec() const { return fusion_mobivari.value_or(mobivari); }

    // X_s, stage1 at full res, stage2 shuffled x2, stage3 shuffled x4.
    std::int64_t fusion_in_channels() const { return 2 * channels + channels / 4 + channels / 16; }

    void validate() const {
        if (channels <= 0 || window <= 0) throw BadConfig("non-positive C or window");
        if (channels % 16 != 0)
            throw BadConfig("C=" + std::to_string(channels) + " must be divisible by 16 (multi-scale pixel shuffle)");
        for (int s = 0; s < 4; ++s) {
            auto si = static_cast<std::size_t>(s);
            if (depths[si] <= 0) throw BadConfig("stage depth must be >= 1");
            if (heads[si] <= 0 || channels % heads[si] != 0)
                throw BadConfig("stage " + std::to_string(s + 1) + ": C not divisible by heads");
            std::int64_t lch = heads_ch(s);
            if (lch < 0 || heads[si] - lch < 1)
                throw BadConfig("stage " + std::to_string(s + 1) + ": head split needs L_sp >= 1");
        }
        if (task == Task::sr && (scale < 2 || scale > 4)) throw InvalidScale("sr scale must be 2, 3 or 4");
        if (ffn_ratio <= 0) throw BadConfig("ffn ratio");
        if (channels % mobivari.groups != 0)
            throw BadConfig("C not divisible by MobiVari group size");
        if (fusion_in_channels() % fusion_spec().groups != 0)
            throw BadConfig("fused channel count " + std::to_string(fusion_in_channels()) +
                            " not divisible by bottleneck/H-RAMi group size " +
                            std::to_string(fusion_spec().groups));
        mobivari_expanded_channels(channels, mobivari);
        mobivari_expanded_channels(fusion_in_channels(), fusion_spec());
    }

    AttentionConfig attention_config(int stage, int block_index) const {
        AttentionConfig a;
        a.channels = channels;
        a.heads = heads[static_cast<std::size_t>(stage)];
        a.heads_ch = heads_ch(stage);
        a.window = window;
        a.shift = (block_index % 2) == 1;
        a.helper_enabled = helper();
        return a;
    }

    // JSON (keys mirror the field names above); implemented in
    // model_config.cpp.
    static ModelConfig from_json_text(const std::string& text);
    static ModelConfig from_json_file(const std::string& path);
    std::string to_json_text() const;

    static ModelConfig preset(const std::string& name);
};

// ---------------------------------------------------------------------------
// D-RAMiT block: parallel bi-dimensional attention, MobiVari mixing, then a
// post-norm transformer tail (x1 = LN(x + Attn), x' = LN(x1 + FFN(x1))).
// ---------------------------------------------------------------------------

template <typename T>
struct DRamitBlockT {
    DRamitAttentionT<T> attn;
    MobiVariT<T> mix;
    LayerNormT<T> ln1, ln2;
    FfnT<T> ffn;

    DRamitBlockT() = default;
    DRamitBlockT(const ModelConfig& cfg, int stage, int block_index)
        : attn(cfg.attention_config(stage, block_index)),
          mix(cfg.channels, cfg.channels, cfg.mobivari),
          ln1(cfg.channels),
          ln2(cfg.channels),
          ffn(FfnConfig{cfg.channels, cfg.ffn_ratio}) {}

    struct Mixed {
        TensorT<T> attention;  // (C,H,W), MobiVari-mixed, pre-layer-norm
        ReciprocalCacheT<T> cache;
    };

    // The bi-dimensional attention result: MobiVari(Concat[SPSA, CHSA]).
    // This exact tensor is what H-RAMi taps.
    Mixed mixed_attention(const TensorT<T>& x, const ReciprocalCacheT<T>& cache,
                          AttnDebugT<T>* dbg = nullptr) const {
        auto att = attn.forward(x, cache, dbg);
        return Mixed{mix.forward(att.mixed_pre), att.cache};
    }

    struct Out {
        TensorT<T> x;
        ReciprocalCacheT<T> cache;
        TensorT<T> tapped;  // mixed attention, pre-layer-norm
    };

    Out forward(const TensorT<T>& x, const ReciprocalCacheT<T>& cache,
                AttnDebugT<T>* dbg = nullptr) const {
        Mixed m = mixed_attention(x, cache, dbg);
        std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), n = h * w;
        TensorT<T> xt = reshape(permute(x, {1, 2, 0}), {n, c});
        TensorT<T> at = reshape(permute(m.attention, {1, 2, 0}), {n, c});
        TensorT<T> x1 = ln1.forward(add(xt, at));
        TensorT<T> x2 = ln2.forward(add(x1, ffn.forward(x1)));
        return Out{permute(reshape(x2, {h, w, c}), {2, 0, 1}), m.cache, m.attention};
    }

    void register_params(ParamStoreT<T>& ps, const std::string& prefix) {
        attn.register_params(ps, prefix + ".attn");
        mix.register_params(ps, prefix + ".mix");
        ps.add(prefix + ".ln1.gamma", ln1.gamma);
        ps.add(prefix + ".ln1.beta", ln1.beta);
        ffn.register_params(ps, prefix + ".ffn");
        ps.add(prefix + ".ln2.gamma", ln2.gamma);
        ps.add(prefix + ".ln2.beta", ln2.beta);
    }
};

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

// Optional capture of intermediate results for inspection and tests.
template <typename T>
struct ForwardCaptureT {
    TensorT<T> shallow;                   // X_s
    std::array<TensorT<T>, 4> stage_out;  // s1..s4
    std::array<TensorT<T>, 4> tapped;     // a1..a4 (last block of each stage)
    TensorT<T> bottleneck;
    TensorT<T> hrami;
};

template <typename T>
class RamitModelT {
public:
    explicit RamitModelT(const ModelConfig& config) : cfg(config) {
        cfg.validate();
        shallow = make_shallow<T>(cfg.in_channels(), cfg.channels);
        for (int s = 0; s < 4; ++s) {
            auto& blocks = stages[static_cast<std::size_t>(s)];
            for (int b = 0; b < cfg.depths[static_cast<std::size_t>(s)]; ++b)
                blocks.emplace_back(cfg, s, b);
        }
        down1 = DownsizeT<T>(cfg.channels, cfg.mobivari);
        down2 = DownsizeT<T>(cfg.channels, cfg.mobivari);
        bottleneck_mix = MobiVariT<T>(cfg.fusion_in_channels(), cfg.channels, cfg.fusion_spec());
        hrami_mix = MobiVariT<T>(cfg.fusion_in_channels(), cfg.channels, cfg.fusion_spec());
        recon1 = MobiVariT<T>(cfg.channels, cfg.channels, cfg.mobivari);
        recon2 = MobiVariT<T>(cfg.channels, cfg.channels, cfg.mobivari);
        std::int64_t r = cfg.upscale();
        recon_conv = Conv2dT<T>(cfg.channels, cfg.out_channels() * r * r, 3, 1, 1);
        register_all();
    }

    RamitModelT(const RamitModelT&) = delete;
    RamitModelT& operator=(const RamitModelT&) = delete;

    void init_weights(std::uint64_t seed) { params.init_weights_trunc_normal(seed); }

    // SCDP-style multi-scale fusion: shuffle the coarse maps up to full
    // resolution, concatenate with X_s and stage 1, project with MobiVari.
    TensorT<T> bottleneck(const TensorT<T>& xs, const TensorT<T>& s1, const TensorT<T>& s2,
                          const TensorT<T>& s3) const {
        TensorT<T> up2 = pixel_shuffle(s2, 2);
        TensorT<T> up3 = pixel_shuffle(s3, 4);
        return bottleneck_mix.forward(concat<T>({xs, s1, up2, up3}, 0));
    }

    // Hierarchical attention mixer over the tapped attentions of the four
    // stages. The caller gates the stage-4 output with the result.
    TensorT<T> hrami(const TensorT<T>& a1, const TensorT<T>& a2, const TensorT<T>& a3,
                     const TensorT<T>& a4) const {
        TensorT<T> up2 = pixel_shuffle(a2, 2);
        TensorT<T> up3 = pixel_shuffle(a3, 4);
        return hrami_mix.forward(concat<T>({a1, up2, up3, a4}, 0));
    }

    TensorT<T> reconstruction(const TensorT<T>& x) const {
        TensorT<T> t = recon_conv.forward(recon2.forward(recon1.forward(x)));
        return cfg.upscale() > 1 ? pixel_shuffle(t, cfg.upscale()) : t;
    }

    // I_LQ (normalized, padded) -> I_res. Input spatial dims must already be
    // multiples of 4*M; callers pad first.
    TensorT<T> forward(const TensorT<T>& x, ForwardCaptureT<T>* cap = nullptr) const {
        if (x.ndim() != 3 || x.dim(0) != cfg.in_channels())
            throw BadInputShape("expected (" + std::to_string(cfg.in_channels()) + ",H,W), got " +
                                shape_str(x.shape()));
        std::int64_t multiple = cfg.pad_multiple();
        if (x.dim(1) % multiple != 0 || x.dim(2) % multiple != 0)
            throw BadInputShape("spatial dims " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                                " must be multiples of " + std::to_string(multiple));

        TensorT<T> xs = shallow.forward(x);
        std::array<TensorT<T>, 4> taps;
        std::array<TensorT<T>, 4> souts;

        TensorT<T> cur = xs;
        for (int s = 0; s < 4; ++s) {
            if (s == 1) cur = down1.forward(cur);
            if (s == 2) cur = down2.forward(cur);
            if (s == 3) cur = bottleneck(xs, souts[0], souts[1], souts[2]);
            ReciprocalCacheT<T> cache;  // reset at each stage boundary
            for (const auto& block : stages[static_cast<std::size_t>(s)]) {
                auto out = block.forward(cur, cache);
                cur = out.x;
                cache = out.cache;
                taps[static_cast<std::size_t>(s)] = out.tapped;
            }
            souts[static_cast<std::size_t>(s)] = cur;
        }

        TensorT<T> h = hrami(taps[0], taps[1], taps[2], taps[3]);
        TensorT<T> fused = add(mul(souts[3], h), xs);
        if (cap) {
            cap->shallow = xs;
            cap->stage_out = souts;
            cap->tapped = taps;
            cap->hrami = h;
        }
        return reconstruction(fused);
    }

    ModelConfig cfg;
    Conv2dT<T> shallow;
    std::array<std::vector<DRamitBlockT<T>>, 4> stages;
    DownsizeT<T> down1, down2;
    MobiVariT<T> bottleneck_mix, hrami_mix;
    MobiVariT<T> recon1, recon2;
    Conv2dT<T> recon_conv;
    ParamStoreT<T> params;

private:
    void register_all() {
        shallow.register_params(params, "shallow");
        for (int s = 0; s < 4; ++s) {
            auto& blocks = stages[static_cast<std::size_t>(s)];
            for (std::size_t b = 0; b < blocks.size(); ++b)
                blocks[b].register_params(
                    params, "stage" + std::to_string(s + 1) + ".block" + std::to_string(b));
        }
        down1.register_params(params, "down1");
        down2.register_params(params, "down2");
        bottleneck_mix.register_params(params, "bottleneck.mix");
        hrami_mix.register_params(params, "hrami.mix");
        recon1.register_params(params, "recon.mv1");
        recon2.register_params(params, "recon.mv2");
        recon_conv.register_params(params, "recon.conv");
    }
};

using RamitModel = RamitModelT<float>;

// ---------------------------------------------------------------------------
// Budget accounting
// ---------------------------------------------------------------------------

std::int64_t count_params(const ModelConfig& cfg);

struct MacBreakdown {
    std::int64_t attention_core = 0;
    std::int64_t conv = 0;
    std::int64_t total() const { return attention_core + conv; }
};

// Analytic multiply-accumulate count at the model's true operating
// resolution for a given high-quality output size: the LQ input (HQ/r for
// super-resolution) is padded up to a multiple of 4*M first, exactly as
// inference does. Convs count k^2*Cin*Cout*H*W/groups; attention cores use
// the closed forms from attention.hpp.
MacBreakdown count_mult_adds_breakdown(const ModelConfig& cfg, std::int64_t hq_w, std::int64_t hq_h);

inline std::int64_t count_mult_adds(const ModelConfig& cfg, std::int64_t hq_w, std::int64_t hq_h) {
    return count_mult_adds_breakdown(cfg, hq_w, hq_h).total();
}

// ---------------------------------------------------------------------------
// Normalization helpers (stats are stored per input channel)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> normalize_image(const TensorT<T>& x, const NormStats& s) {
    std::int64_t c = x.dim(0);
    if (static_cast<std::int64_t>(s.mean.size()) != c) throw ShapeMismatch("norm stats channel count");
    std::vector<T> m(s.mean.begin(), s.mean.end()), d(s.std_dev.begin(), s.std_dev.end());
    TensorT<T> mt({c, 1, 1}, std::move(m));
    TensorT<T> dt({c, 1, 1}, std::move(d));
    return div(sub(x, mt), dt);
}

template <typename T>
TensorT<T> denormalize_image(const TensorT<T>& x, const NormStats& s) {
    std::int64_t c = x.dim(0);
    if (static_cast<std::int64_t>(s.mean.size()) != c) throw ShapeMismatch("norm stats channel count");
    std::vector<T> m(s.mean.begin(), s.mean.end()), d(s.std_dev.begin(), s.std_dev.end());
    TensorT<T> mt({c, 1, 1}, std::move(m));
    TensorT<T> dt({c, 1, 1}, std::move(d));
    return add(mul(x, dt), mt);
}

// Normalized padded LQ -> normalized I_RC (global LQ residual applied for
// every task except super-resolution, where I_RC = I_res).
template <typename T>
TensorT<T> restore_normalized(const RamitModelT<T>& model, const TensorT<T>& lq_norm) {
    TensorT<T> res = model.forward(lq_norm);
    if (model.cfg.task == Task::sr) return res;
    return add(res, lq_norm);
}

// ---------------------------------------------------------------------------
// Gradient attribution (plain-gradient stand-in for LAM)
// ---------------------------------------------------------------------------

struct Region {
    std::int64_t x = 0, y = 0, w = 0, h = 0;
};

// Heatmap over the LQ pixel grid: L2 over channels of d(sum of the restored
// region)/d(I_LQ), max-normalized to [0,1].
template <typename T>
TensorT<T> attribution_map(const RamitModelT<T>& model, const TensorT<T>& lq01, Region region,
                           const NormStats& stats) {
    std::int64_t c = lq01.dim(0), h0 = lq01.dim(1), w0 = lq01.dim(2);
    std::int64_t r = model.cfg.upscale();
    std::int64_t out_h = h0 * r, out_w = w0 * r;
    if (region.w <= 0 || region.h <= 0 || region.x < 0 || region.y < 0 ||
        region.x + region.w > out_w || region.y + region.h > out_h)
        throw RegionOutOfBounds("region " + std::to_string(region.x) + "," + std::to_string(region.y) +
                                "," + std::to_string(region.w) + "," + std::to_string(region.h) +
                                " vs output " + std::to_string(out_w) + "x" + std::to_string(out_h));

    TapeT<T> tape;
    typename TapeT<T>::Scope scope(tape);
    TensorT<T> lq = lq01;
    lq.set_requires_grad(true);

    std::int64_t mul_of = model.cfg.pad_multiple();
    std::int64_t ph = (h0 + mul_of - 1) / mul_of * mul_of;
    std::int64_t pw = (w0 + mul_of - 1) / mul_of * mul_of;
    TensorT<T> padded = mirror_pad_hw(lq, ph, pw);
    TensorT<T> rc_norm = restore_normalized(model, normalize_image(padded, stats));
    TensorT<T> rc = denormalize_image(rc_norm, stats);
    rc = crop_hw(rc, out_h, out_w);

    TensorT<T> rows = narrow(rc, 1, region.y, region.h);
    TensorT<T> patch = narrow(rows, 2, region.x, region.w);
    TensorT<T> target = sum_all(patch);

    GradientsT<T> grads = tape.backward(target);
    TensorT<T> g = grads.grad(lq);  // (C, h0, w0)

    TensorT<T> heat = TensorT<T>::zeros({h0, w0});
    T* hd = heat.mutable_data();
    const T* gd = g.data();
    T mx = T(0);
    for (std::int64_t i = 0; i < h0 * w0; ++i) {
        T acc = T(0);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            T v = gd[ch * h0 * w0 + i];
            acc += v * v;
        }
        hd[i] = std::sqrt(acc);
        mx = std::max(mx, hd[i]);
    }
    if (mx > T(0))
        for (std::int64_t i = 0; i < h0 * w0; ++i) hd[i] /= mx;
    return heat;
}

// ---------------------------------------------------------------------------
// Checkpoint save/load (format described in checkpoint.hpp)
// ---------------------------------------------------------------------------

template <typename T>
void save_checkpoint(const RamitModelT<T>& model, const NormStats& stats, const std::string& path) {
    CheckpointData data;
    data.norm = stats;
    for (const auto& p : model.params.all()) {
        CheckpointData::Record rec;
        rec.name = p.name;
        rec.shape = p.tensor->shape();
        rec.data.resize(static_cast<std::size_t>(p.tensor->numel()));
        const T* src = p.tensor->data();
        for (std::int64_t i = 0; i < p.tensor->numel(); ++i)
            rec.data[static_cast<std::size_t>(i)] = static_cast<float>(src[i]);
        data.records.push_back(std::move(rec));
    }
    write_checkpoint_file(path, data);
}

template <typename T>
NormStats load_checkpoint(RamitModelT<T>& model, const std::string& path) {
    CheckpointData data = read_checkpoint_file(path);
    if (data.records.size() != model.params.size()) {
        std::string msg = "checkpoint has " + std::to_string(data.records.size()) +
                          " parameters, model expects " + std::to_string(model.params.size());
        for (const auto& rec : data.records)
            if (!const_cast<RamitModelT<T>&>(model).params.find(rec.name)) msg += "; unknown " + rec.name;
        throw UnknownParameter(msg);
    }
    std::string shape_errors;
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        const auto& rec = data.records[i];
        const auto& p = model.params.all()[i];
        if (rec.name != p.name)
            throw UnknownParameter("checkpoint record " + rec.name + " does not match model parameter " + p.name);
        if (!same_shape(rec.shape, p.tensor->shape()))
            shape_errors += (shape_errors.empty() ? "" : ", ") + rec.name + " " + shape_str(rec.shape) +
                            " vs " + shape_str(p.tensor->shape());
    }
    if (!shape_errors.empty()) throw ShapeMismatch("parameter shapes differ: " + shape_errors);
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        const auto& rec = data.records[i];
        T* dst = model.params.all()[i].tensor->mutable_data();
        for (std::size_t k = 0; k < rec.data.size(); ++k) dst[k] = static_cast<T>(rec.data[k]);
    }
    return data.norm;
}

}  // namespace ramit
