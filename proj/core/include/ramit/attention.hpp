#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "ramit/nn.hpp"
#include "ramit/ops.hpp"

namespace ramit {

// ---------------------------------------------------------------------------
// Window bookkeeping. Tokens are row-major over (H, W); a window holds M*M
// tokens. partition/reverse are lossless regroupings.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> window_reverse(const TensorT<T>& x, std::int64_t h, std::int64_t w, std::int64_t m);

// (N, C) -> (nw, M*M, C). H and W must be divisible by M.
template <typename T>
TensorT<T> window_partition(const TensorT<T>& x, std::int64_t h, std::int64_t w, std::int64_t m) {
    if (x.ndim() != 2 || x.dim(0) != h * w) throw ShapeMismatch("window_partition expects (H*W, C)");
    if (h % m != 0 || w % m != 0)
        throw NotDivisible("window_partition: " + std::to_string(h) + "x" + std::to_string(w) +
                           " not divisible by M=" + std::to_string(m));
    std::int64_t c = x.dim(1), wx_n = w / m, wy_n = h / m;
    std::int64_t nw = wx_n * wy_n;
    TensorT<T> out = TensorT<T>::zeros({nw, m * m, c});
    T* od = out.mutable_data();
    const T* xd = x.data();
    for (std::int64_t wy = 0; wy < wy_n; ++wy)
        for (std::int64_t wx = 0; wx < wx_n; ++wx)
            for (std::int64_t ty = 0; ty < m; ++ty)
                for (std::int64_t tx = 0; tx < m; ++tx) {
                    std::int64_t n = (wy * m + ty) * w + wx * m + tx;
                    std::int64_t o = ((wy * wx_n + wx) * m * m + ty * m + tx);
                    std::copy(xd + n * c, xd + (n + 1) * c, od + o * c);
                }
    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            sink.add(ix, window_reverse(g, h, w, m));
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// (nw, M*M, C) -> (N, C); exact inverse of window_partition.
template <typename T>
TensorT<T> window_reverse(const TensorT<T>& x, std::int64_t h, std::int64_t w, std::int64_t m) {
    if (x.ndim() != 3 || x.dim(1) != m * m) throw ShapeMismatch("window_reverse expects (nw, M*M, C)");
    std::int64_t wx_n = w / m, wy_n = h / m;
    if (x.dim(0) != wx_n * wy_n) throw ShapeMismatch("window_reverse window count");
    std::int64_t c = x.dim(2);
    TensorT<T> out = TensorT<T>::zeros({h * w, c});
    T* od = out.mutable_data();
    const T* xd = x.data();
    for (std::int64_t wy = 0; wy < wy_n; ++wy)
        for (std::int64_t wx = 0; wx < wx_n; ++wx)
            for (std::int64_t ty = 0; ty < m; ++ty)
                for (std::int64_t tx = 0; tx < m; ++tx) {
                    std::int64_t n = (wy * m + ty) * w + wx * m + tx;
                    std::int64_t o = ((wy * wx_n + wx) * m * m + ty * m + tx);
                    std::copy(xd + o * c, xd + (o + 1) * c, od + n * c);
                }
    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            sink.add(ix, window_partition(g, h, w, m));
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// Toroidal roll of (C, H, W): out[c, y, x] = in[c, (y-dy) mod H, (x-dx) mod W].
// No attention mask accompanies shifted windows anywhere in this model.
template <typename T>
TensorT<T> cyclic_shift(const TensorT<T>& x, std::int64_t dy, std::int64_t dx) {
    if (x.ndim() != 3) throw ShapeMismatch("cyclic_shift expects (C,H,W)");
    std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto wrap = [](std::int64_t i, std::int64_t n) { return ((i % n) + n) % n; };
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    T* od = out.mutable_data();
    const T* xd = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < h; ++y) {
            std::int64_t sy = wrap(y - dy, h);
            for (std::int64_t xi = 0; xi < w; ++xi)
                od[(ch * h + y) * w + xi] = xd[(ch * h + sy) * w + wrap(xi - dx, w)];
        }
    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            sink.add(ix, cyclic_shift(g, -dy, -dx));
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Configuration and small attention parts
// ---------------------------------------------------------------------------

struct AttentionConfig {
    std::int64_t channels = 64;  // C
    std::int64_t heads = 4;      // L
    std::int64_t heads_ch = 1;   // L_ch; L_sp = heads - heads_ch
    std::int64_t window = 8;     // M
    bool shift = false;          // cyclic half-window shift for this block
    bool helper_enabled = false;

    std::int64_t heads_sp() const { return heads - heads_ch; }
    std::int64_t head_dim() const { return channels / heads; }
    std::int64_t channels_sp() const { return heads_sp() * head_dim(); }
    std::int64_t channels_ch() const { return heads_ch * head_dim(); }

    void validate() const {
        if (channels <= 0 || heads <= 0 || window <= 0) throw BadConfig("attention config sizes");
        if (channels % heads != 0)
            throw BadConfig("C=" + std::to_string(channels) + " not divisible by L=" + std::to_string(heads));
        if (heads_ch < 0 || heads_sp() < 1)
            throw BadConfig("head split L_sp=" + std::to_string(heads_sp()) + " L_ch=" + std::to_string(heads_ch));
    }
};

// Trainable relative position bias: a (2M-1)^2 table plus a fixed M^2 x M^2
// lookup shared by all windows and spatial heads.
template <typename T>
struct RelPosBiasT {
    TensorT<T> table;                 // ((2M-1)^2), zero-initialized
    std::vector<std::int64_t> index;  // M^2 * M^2 entries into the table
    std::int64_t window = 0;

    RelPosBiasT() = default;
    explicit RelPosBiasT(std::int64_t m) : window(m) {
        std::int64_t span = 2 * m - 1;
        table = TensorT<T>::zeros({span * span});
        index.resize(static_cast<std::size_t>(m * m * m * m));
        for (std::int64_t p = 0; p < m * m; ++p)
            for (std::int64_t q = 0; q < m * m; ++q) {
                std::int64_t dy = p / m - q / m + m - 1;
                std::int64_t dx = p % m - q % m + m - 1;
                index[static_cast<std::size_t>(p * m * m + q)] = dy * span + dx;
            }
    }

    TensorT<T> materialize() const {
        if (!table.defined()) throw MissingBias("relative position bias not constructed");
        return take(table, index, {window * window, window * window});
    }

    void register_params(ParamStoreT<T>& ps, const std::string& prefix) {
        ps.add(prefix + ".table", table);
    }
};

// Per-head temperature, stored as a log-scale and clamped so the effective
// tau never drops below 0.01. Initial effective value is 0.1.
template <typename T>
struct TauScaleT {
    TensorT<T> log_tau;  // (heads)

    TauScaleT() = default;
    explicit TauScaleT(std::int64_t heads)
        : log_tau(TensorT<T>::full({heads}, static_cast<T>(std::log(0.1)))) {}

    TensorT<T> effective() const { return clamp_min(exp_op(log_tau), T(0.01)); }

    void register_params(ParamStoreT<T>& ps, const std::string& prefix) {
        ps.add(prefix + ".log_tau", log_tau);
    }
};

// Squeezed attention results that block l hands to block l+1 for the
// reciprocal value coupling. Empty at the first block of every stage.
template <typename T>
struct ReciprocalCacheT {
    TensorT<T> chsa_squeezed;  // (C/L, N): CHSA per-head output, mean over heads
    TensorT<T> spsa_squeezed;  // (N, 1): SPSA output, mean over channels
    std::int64_t h = 0, w = 0;

    bool empty() const { return !chsa_squeezed.defined() && !spsa_squeezed.defined(); }
};

// Optional capture of post-softmax attention maps, used by tests.
template <typename T>
struct AttnDebugT {
    TensorT<T> spsa_map;  // (L_sp, nw, M^2, M^2)
    TensorT<T> chsa_map;  // (L_ch, d, d)
};

namespace detail {

// x / (||x||_2 + eps) along the last axis.
template <typename T>
TensorT<T> l2_normalize_rows(const TensorT<T>& x, T eps = T(1e-8)) {
    TensorT<T> n = sqrt_op(sum_axis(square(x), -1, true));
    return div(x, add_scalar(n, eps));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Attention cores: scaled-cosine attention in spatial-window and transposed
// channel form. Both take pre-projected Q,K,V in head-major channel layout
// and return the concatenated head outputs (no projection).
// ---------------------------------------------------------------------------

// Spatial windowed attention: q,k,v (nw, M^2, C_sp); bias (M^2, M^2);
// tau_eff (L_sp). Returns (nw, M^2, C_sp).
template <typename T>
TensorT<T> spsa_attend(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                       const TensorT<T>& bias, const TensorT<T>& tau_eff, std::int64_t heads,
                       AttnDebugT<T>* dbg = nullptr) {
    if (q.ndim() != 3) throw ShapeMismatch("spsa_attend expects (nw, M^2, C_sp)");
    if (!bias.defined()) throw MissingBias("spsa_attend needs a materialized bias");
    std::int64_t nw = q.dim(0), m2 = q.dim(1), c = q.dim(2);
    if (c % heads != 0) throw ShapeMismatch("spsa_attend channel/head split");
    std::int64_t d = c / heads;

    // (nw, M^2, C) -> (L, nw, M^2, d)
    auto to_heads = [&](const TensorT<T>& t) {
        return permute(reshape(t, {nw, m2, heads, d}), {2, 0, 1, 3});
    };
    TensorT<T> qh = detail::l2_normalize_rows(to_heads(q));
    TensorT<T> kh = detail::l2_normalize_rows(to_heads(k));
    TensorT<T> vh = to_heads(v);

    TensorT<T> logits;
    {
        MacCategoryScope cat(MacCategory::AttentionCore);
        logits = matmul(qh, permute(kh, {0, 1, 3, 2}));  // (L, nw, M^2, M^2)
    }
    logits = div(logits, reshape(tau_eff, {heads, 1, 1, 1}));
    logits = add(logits, bias);
    TensorT<T> attn = softmax(logits, -1);
    if (dbg) dbg->spsa_map = attn;
    TensorT<T> out;
    {
        MacCategoryScope cat(MacCategory::AttentionCore);
        out = matmul(attn, vh);  // (L, nw, M^2, d)
    }
    return reshape(permute(out, {1, 2, 0, 3}), {nw, m2, c});
}

// Channel (transposed) attention: q,k,v (L_ch, d, N); tau_eff (L_ch).
// Channels attend over all N tokens; no positional bias. Returns the
// per-head outputs (L_ch, d, N).
template <typename T>
TensorT<T> chsa_attend(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                       const TensorT<T>& tau_eff, AttnDebugT<T>* dbg = nullptr) {
    if (q.ndim() != 3) throw ShapeMismatch("chsa_attend expects (L_ch, d, N)");
    std::int64_t heads = q.dim(0);
    TensorT<T> qh = detail::l2_normalize_rows(q);
    TensorT<T> kh = detail::l2_normalize_rows(k);
    TensorT<T> logits;
    {
        MacCategoryScope cat(MacCategory::AttentionCore);
        logits = matmul(qh, permute(kh, {0, 2, 1}));  // (L_ch, d, d)
    }
    logits = div(logits, reshape(tau_eff, {heads, 1, 1}));
    TensorT<T> attn = softmax(logits, -1);
    if (dbg) dbg->chsa_map = attn;
    MacCategoryScope cat(MacCategory::AttentionCore);
    return matmul(attn, v);  // (L_ch, d, N)
}

// ---------------------------------------------------------------------------
// D-RAMiT bi-dimensional attention: one shared QKV projection feeding SPSA
// and CHSA head groups in parallel, mixed by MobiVari (owned by the caller's
// block; this module returns the concatenated branches).
// ---------------------------------------------------------------------------

template <typename T>
struct DRamitAttentionT {
    AttentionConfig cfg;
    LinearT<T> qkv;      // C -> 3C shared
    LinearT<T> proj_sp;  // C_sp -> C_sp
    LinearT<T> proj_ch;  // C_ch -> C_ch (absent when L_ch == 0)
    RelPosBiasT<T> bias;
    TauScaleT<T> tau_sp;
    TauScaleT<T> tau_ch;

    DRamitAttentionT() = default;
    explicit DRamitAttentionT(const AttentionConfig& c) : cfg(c) {
        cfg.validate();
        qkv = LinearT<T>(cfg.channels, 3 * cfg.channels);
        proj_sp = LinearT<T>(cfg.channels_sp(), cfg.channels_sp());
        bias = RelPosBiasT<T>(cfg.window);
        tau_sp = TauScaleT<T>(cfg.heads_sp());
        if (cfg.heads_ch > 0) {
            proj_ch = LinearT<T>(cfg.channels_ch(), cfg.channels_ch());
            tau_ch = TauScaleT<T>(cfg.heads_ch);
        }
    }

    struct Output {
        TensorT<T> mixed_pre;  // (C, H, W) concatenated [SPSA, CHSA] before MobiVari
        ReciprocalCacheT<T> cache;
    };

    // x: (C, H, W). Returns Concat[SPSA, CHSA] in (C, H, W) layout plus the
    // squeezed caches for the next block. The caller mixes with MobiVari.
    Output forward(const TensorT<T>& x, const ReciprocalCacheT<T>& prev,
                   AttnDebugT<T>* dbg = nullptr) const {
        std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
        if (c != cfg.channels) throw ShapeMismatch("attention channels");
        if (h % cfg.window != 0 || w % cfg.window != 0)
            throw NotDivisible("attention input not divisible by window");
        std::int64_t n = h * w, m = cfg.window;
        std::int64_t csp = cfg.channels_sp(), cch = cfg.channels_ch(), d = cfg.head_dim();

        bool use_helper = cfg.helper_enabled && !prev.empty();
        if (use_helper && (prev.h != h || prev.w != w))
            throw ShapeMismatch("reciprocal cache resolution " + std::to_string(prev.h) + "x" +
                                std::to_string(prev.w) + " vs " + std::to_string(h) + "x" + std::to_string(w));

        TensorT<T> tokens = reshape(permute(x, {1, 2, 0}), {n, c});
        TensorT<T> qkv_all;
        {
            MacCategoryScope cat(MacCategory::AttentionCore);
            qkv_all = qkv.forward(tokens);  // (N, 3C)
        }
        TensorT<T> q_all = narrow(qkv_all, 1, 0, c);
        TensorT<T> k_all = narrow(qkv_all, 1, c, c);
        TensorT<T> v_all = narrow(qkv_all, 1, 2 * c, c);

        // --- SPSA branch (heads 0..L_sp-1 -> channels [0, C_sp)) ---
        TensorT<T> q_sp = narrow(q_all, 1, 0, csp);
        TensorT<T> k_sp = narrow(k_all, 1, 0, csp);
        TensorT<T> v_sp = narrow(v_all, 1, 0, csp);
        if (use_helper && prev.chsa_squeezed.defined()) {
            // value modulated by the previous block's squeezed CHSA map,
            // broadcast over the spatial heads (token order, pre-shift)
            TensorT<T> hmap = permute(prev.chsa_squeezed, {1, 0});  // (N, d)
            TensorT<T> v3 = reshape(v_sp, {n, cfg.heads_sp(), d});
            v3 = mul(v3, reshape(hmap, {n, 1, d}));
            v_sp = reshape(v3, {n, csp});
        }
        std::int64_t sh = cfg.shift ? m / 2 : 0;
        auto shift_tokens = [&](const TensorT<T>& t, std::int64_t dy, std::int64_t dx) {
            if (dy == 0 && dx == 0) return t;
            TensorT<T> chw = permute(reshape(t, {h, w, csp}), {2, 0, 1});
            return reshape(permute(cyclic_shift(chw, dy, dx), {1, 2, 0}), {n, csp});
        };
        q_sp = shift_tokens(q_sp, -sh, -sh);
        k_sp = shift_tokens(k_sp, -sh, -sh);
        v_sp = shift_tokens(v_sp, -sh, -sh);
        TensorT<T> spsa_out = spsa_attend(window_partition(q_sp, h, w, m),
                                          window_partition(k_sp, h, w, m),
                                          window_partition(v_sp, h, w, m), bias.materialize(),
                                          tau_sp.effective(), cfg.heads_sp(), dbg);
        spsa_out = window_reverse(spsa_out, h, w, m);
        spsa_out = shift_tokens(spsa_out, sh, sh);
        {
            MacCategoryScope cat(MacCategory::AttentionCore);
            spsa_out = proj_sp.forward(spsa_out);  // (N, C_sp) branch projection
        }

        ReciprocalCacheT<T> cache;
        cache.h = h;
        cache.w = w;
        cache.spsa_squeezed = mean_axis(spsa_out, 1, true);  // (N, 1)

        // --- CHSA branch (heads L_sp..L-1 -> channels [C_sp, C)) ---
        TensorT<T> chsa_out;
        if (cch > 0) {
            auto to_ch_heads = [&](const TensorT<T>& t) {
                // (N, C_ch) -> (L_ch, d, N)
                return permute(reshape(narrow(t, 1, csp, cch), {n, cfg.heads_ch, d}), {1, 2, 0});
            };
            TensorT<T> q_ch = to_ch_heads(q_all);
            TensorT<T> k_ch = to_ch_heads(k_all);
            TensorT<T> v_ch = to_ch_heads(v_all);
            if (use_helper && prev.spsa_squeezed.defined()) {
                // value modulated by the previous block's squeezed SPSA map
                TensorT<T> hrow = reshape(prev.spsa_squeezed, {n});  // (N)
                v_ch = mul(v_ch, hrow);
            }
            TensorT<T> heads_out = chsa_attend(q_ch, k_ch, v_ch, tau_ch.effective(), dbg);
            cache.chsa_squeezed = mean_axis(heads_out, 0, false);  // (d, N)
            TensorT<T> tok = permute(reshape(heads_out, {cch, n}), {1, 0});  // (N, C_ch)
            MacCategoryScope cat(MacCategory::AttentionCore);
            chsa_out = proj_ch.forward(tok);  // branch projection
        }

        TensorT<T> merged = cch > 0 ? concat<T>({spsa_out, chsa_out}, 1) : spsa_out;
        Output out;
        out.mixed_pre = permute(reshape(merged, {h, w, c}), {2, 0, 1});
        out.cache = cache;
        return out;
    }

    void register_params(ParamStoreT<T>& ps, const std::string& prefix) {
        qkv.register_params(ps, prefix + ".qkv");
        proj_sp.register_params(ps, prefix + ".proj_sp");
        bias.register_params(ps, prefix + ".bias");
        tau_sp.register_params(ps, prefix + ".tau_sp");
        if (cfg.heads_ch > 0) {
            proj_ch.register_params(ps, prefix + ".proj_ch");
            tau_ch.register_params(ps, prefix + ".tau_ch");
        }
    }
};

// ---------------------------------------------------------------------------
// Closed-form multiply-accumulate counts (attention core = QKV + attention
// products + output projection).
// ---------------------------------------------------------------------------

enum class AttentionKind { spsa, chsa };

inline std::int64_t complexity(AttentionKind kind, std::int64_t h, std::int64_t w, std::int64_t c,
                               std::int64_t m, std::int64_t l) {
    std::int64_t n = h * w;
    if (kind == AttentionKind::spsa) return 4 * n * c * c + 2 * m * m * n * c;
    return 4 * n * c * c + 2 * n * c * c / l;
}

// Mixed D-RAMiT block core with the shared QKV counted once: reduces exactly
// to complexity(spsa, ...) when L_ch = 0 and complexity(chsa, ...) when
// L_ch = L.
inline std::int64_t dramit_core_macs(std::int64_t h, std::int64_t w, std::int64_t c,
                                     std::int64_t m, std::int64_t l, std::int64_t l_ch) {
    std::int64_t n = h * w;
    std::int64_t d = c / l;
    std::int64_t c_sp = (l - l_ch) * d;
    std::int64_t c_ch = l_ch * d;
    std::int64_t qkv = 3 * n * c * c;
    std::int64_t spsa_products = 2 * m * m * n * c_sp;
    std::int64_t chsa_products = 2 * n * l_ch * d * d;
    std::int64_t proj = n * (c_sp * c_sp + c_ch * c_ch);
    return qkv + spsa_products + chsa_products + proj;
}

}  // namespace ramit
