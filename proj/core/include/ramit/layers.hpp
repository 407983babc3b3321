#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "ramit/nn.hpp"
#include "ramit/ops.hpp"

namespace ramit {

struct MobiVariSpec {
    std::int64_t groups = 4;
    double expansion = 1.2;
};

// Largest multiple of g not above floor(c_in * e); group conv needs the
// divisibility, floor keeps the layer under budget.
inline std::int64_t mobivari_expanded_channels(std::int64_t c_in, const MobiVariSpec& spec) {
    std::int64_t ce = static_cast<std::int64_t>(std::floor(static_cast<double>(c_in) * spec.expansion));
    ce -= ce % spec.groups;
    if (ce < spec.groups)
        throw GroupMismatch("MobiVari expansion of " + std::to_string(c_in) + " channels collapses below group size " +
                            std::to_string(spec.groups));
    return ce;
}

// MobileNet-variant mixing block: grouped 1x1 expansion, depthwise 3x3 with a
// residual over its own input, pointwise 1x1 with a residual from the block
// input when the channel count is preserved. LeakyReLU(0.01) activations.
template <typename T>
struct MobiVariT {
    Conv2dT<T> expand;  // 1x1 grouped, C_in -> Ce
    Conv2dT<T> dw;      // 3x3 depthwise on Ce
    Conv2dT<T> pw;      // 1x1, Ce -> C_out
    std::int64_t c_in = 0, c_out = 0, ce = 0;

    MobiVariT() = default;
    MobiVariT(std::int64_t in, std::int64_t out, const MobiVariSpec& spec) : c_in(in), c_out(out) {
        if (in % spec.groups != 0)
            throw GroupMismatch("MobiVari input " + std::to_string(in) + " channels, groups " +
                                std::to_string(spec.groups));
        ce = mobivari_expanded_channels(in, spec);
        expand = Conv2dT<T>(in, ce, 1, spec.groups, 0);
        dw = Conv2dT<T>(ce, ce, 3, ce, 1);
        pw = Conv2dT<T>(ce, out, 1, 1, 0);
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        TensorT<T> t = leaky_relu(expand.forward(x));
        t = leaky_relu(add(dw.forward(t), t));
        TensorT<T> y = pw.forward(t);
        if (c_out == c_in) y = add(y, x);
        return y;
    }

    void register_params(ParamStoreT<T>& ps, const std::string& prefix) {
        expand.register_params(ps, prefix + ".expand");
        dw.register_params(ps, prefix + ".dw");
        pw.register_params(ps, prefix + ".pw");
    }

    std::int64_t param_count() const {
        return expand.param_count() + dw.param_count() + pw.param_count();
    }

    std::int64_t macs(std::int64_t h, std::int64_t w) const {
        return expand.macs(h, w) + dw.macs(h, w) + pw.macs(h, w);
    }
};

struct FfnConfig {
    std::int64_t channels = 64;
    double hidden_ratio = 2.0;
    std::int64_t hidden() const {
        return static_cast<std::int64_t>(std::llround(static_cast<double>(channels) * hidden_ratio));
    }
};

// Token-wise feed-forward: linear C->hidden, GELU, linear hidden->C. The
// caller wraps it post-norm: x = LN(x + FFN(x)).
template <typename T>
struct FfnT {
    LinearT<T> fc1, fc2;

    FfnT() = default;
    explicit FfnT(const FfnConfig& cfg)
        : fc1(cfg.channels, cfg.hidden()), fc2(cfg.hidden(), cfg.channels) {}

    TensorT<T> forward(const TensorT<T>& x) const { return fc2.forward(gelu(fc1.forward(x))); }

    void register_params(ParamStoreT<T>& ps, const std::string& prefix) {
        fc1.register_params(ps, prefix + ".fc1");
        fc2.register_params(ps, prefix + ".fc2");
    }

    std::int64_t param_count() const { return fc1.param_count() + fc2.param_count(); }
};

// Patch-merge downsizing: gather 2x2 neighborhoods into 4C channels, then
// MobiVari back to C. Halves the resolution, keeps the channel count.
template <typename T>
struct DownsizeT {
    MobiVariT<T> reduce;

    DownsizeT() = default;
    DownsizeT(std::int64_t channels, const MobiVariSpec& spec)
        : reduce(4 * channels, channels, spec) {}

    TensorT<T> forward(const TensorT<T>& x) const {
        if (x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
            throw OddDimension("patch merge needs even spatial dims, got " +
                               std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)));
        return reduce.forward(pixel_unshuffle(x, 2));
    }

    void register_params(ParamStoreT<T>& ps, const std::string& prefix) {
        reduce.register_params(ps, prefix + ".reduce");
    }
};

// 3x3 convolutional shallow module: I_LQ (3 or 1 channels) -> X_s (C).
template <typename T>
Conv2dT<T> make_shallow(std::int64_t in_channels, std::int64_t c) {
    return Conv2dT<T>(in_channels, c, 3, 1, 1);
}

}  // namespace ramit
