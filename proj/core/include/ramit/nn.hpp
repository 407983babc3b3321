#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ramit/ops.hpp"
#include "ramit/rng.hpp"
#include "ramit/tape.hpp"
#include "ramit/tensor.hpp"

namespace ramit {

// Named view over a model's trainable tensors. Modules register their
// tensors once after construction; registration order defines the
// checkpoint layout and the optimizer state layout.
template <typename T>
struct ParameterT {
    std::string name;  // dotted path, unique within a model
    TensorT<T>* tensor;
};

template <typename T>
class ParamStoreT {
public:
    void add(const std::string& name, TensorT<T>& t) {
        for (const auto& p : params_)
            if (p.name == name) throw UnknownParameter("duplicate parameter name " + name);
        t.set_requires_grad(true);
        params_.push_back(ParameterT<T>{name, &t});
    }

    const std::vector<ParameterT<T>>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }

    std::int64_t scalar_count() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p.tensor->numel();
        return n;
    }

    TensorT<T>* find(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return p.tensor;
        return nullptr;
    }

    // Deterministic initialization. Only conv/linear weights (names ending
    // ".w") are drawn from a truncated normal; biases, norm affines, the
    // bias table and tau keep their constructor values. Each parameter draws
    // from a stream keyed by its name, so the result does not depend on
    // registration order.
    void init_weights_trunc_normal(std::uint64_t seed, double sigma = 0.02) {
        for (auto& p : params_) {
            if (p.name.size() < 2 || p.name.substr(p.name.size() - 2) != ".w") continue;
            Rng rng(seed, p.name);
            T* d = p.tensor->mutable_data();
            for (std::int64_t i = 0; i < p.tensor->numel(); ++i)
                d[i] = static_cast<T>(rng.truncated_normal(sigma));
        }
    }

    void fill_all(T value) {
        for (auto& p : params_) {
            T* d = p.tensor->mutable_data();
            for (std::int64_t i = 0; i < p.tensor->numel(); ++i) d[i] = value;
        }
    }

private:
    std::vector<ParameterT<T>> params_;
};

// ---------------------------------------------------------------------------
// Adam (beta1=0.9, beta2=0.99, eps=1e-8), bias-corrected.
// ---------------------------------------------------------------------------

template <typename T>
struct AdamStateT {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<T>> m;  // first moment per parameter
    std::vector<std::vector<T>> v;  // second moment per parameter

    void reset(const ParamStoreT<T>& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const auto& p : params.all()) {
            m.emplace_back(static_cast<std::size_t>(p.tensor->numel()), T(0));
            v.emplace_back(static_cast<std::size_t>(p.tensor->numel()), T(0));
        }
    }
};

// One optimizer step over gradients aligned with the parameter order. Must
// run after the tape that produced them has been consumed; mutates parameter
// storage in place.
template <typename T>
void adam_step(ParamStoreT<T>& params, const std::vector<TensorT<T>>& grads, AdamStateT<T>& state,
               double lr) {
    if (state.m.size() != params.size()) throw ShapeMismatch("adam state not sized for params");
    if (grads.size() != params.size()) throw ShapeMismatch("gradient count vs params");
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        TensorT<T>& p = *params.all()[i].tensor;
        const TensorT<T>& g = grads[i];
        if (!same_shape(g.shape(), p.shape())) throw ShapeMismatch("gradient shape for " + params.all()[i].name);
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != static_cast<std::size_t>(p.numel()))
            throw ShapeMismatch("adam moment size for " + params.all()[i].name);
        T* pd = p.mutable_data();
        const T* gd = g.data();
        for (std::int64_t k = 0; k < p.numel(); ++k) {
            double gk = static_cast<double>(gd[k]);
            double mk = state.beta1 * static_cast<double>(m[k]) + (1.0 - state.beta1) * gk;
            double vk = state.beta2 * static_cast<double>(v[k]) + (1.0 - state.beta2) * gk * gk;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            double mhat = mk / bc1;
            double vhat = vk / bc2;
            pd[k] = static_cast<T>(static_cast<double>(pd[k]) - lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

template <typename T>
void adam_step(ParamStoreT<T>& params, const GradientsT<T>& grads, AdamStateT<T>& state, double lr) {
    std::vector<TensorT<T>> gs;
    gs.reserve(params.size());
    for (const auto& p : params.all()) gs.push_back(grads.grad(*p.tensor));
    adam_step(params, gs, state, lr);
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
struct LinearT {
    TensorT<T> w;  // (C_in, C_out)
    TensorT<T> b;  // (C_out)

    LinearT() = default;
    LinearT(std::int64_t c_in, std::int64_t c_out)
        : w(TensorT<T>::zeros({c_in, c_out})), b(TensorT<T>::zeros({c_out})) {}

    TensorT<T> forward(const TensorT<T>& x) const { return add(matmul(x, w), b); }

    void register_params(ParamStoreT<T>& ps, const std::string& prefix) {
        ps.add(prefix + ".w", w);
        ps.add(prefix + ".b", b);
    }

    std::int64_t param_count() const { return w.numel() + b.numel(); }
};

template <typename T>
struct Conv2dT {
    TensorT<T> w;  // (C_out, C_in/groups, kh, kw)
    TensorT<T> b;  // (C_out)
    std::int64_t groups = 1;
    std::int64_t pad = 0;

    Conv2dT() = default;
    Conv2dT(std::int64_t c_in, std::int64_t c_out, std::int64_t k, std::int64_t groups_, std::int64_t pad_)
        : groups(groups_), pad(pad_) {
        if (c_in % groups != 0 || c_out % groups != 0)
            throw GroupMismatch("conv layer " + std::to_string(c_in) + "->" + std::to_string(c_out) +
                                " groups=" + std::to_string(groups));
        w = TensorT<T>::zeros({c_out, c_in / groups, k, k});
        b = TensorT<T>::zeros({c_out});
    }

    TensorT<T> forward(const TensorT<T>& x) const { return conv2d(x, w, b, groups, pad); }

    void register_params(ParamStoreT<T>& ps, const std::string& prefix) {
        ps.add(prefix + ".w", w);
        ps.add(prefix + ".b", b);
    }

    std::int64_t param_count() const { return w.numel() + b.numel(); }
    std::int64_t macs(std::int64_t out_h, std::int64_t out_w) const {
        return w.numel() * out_h * out_w;  // k*k*(Cin/g)*Cout * spatial
    }
};

template <typename T>
struct LayerNormT {
    TensorT<T> gamma;
    TensorT<T> beta;

    LayerNormT() = default;
    explicit LayerNormT(std::int64_t c)
        : gamma(TensorT<T>::full({c}, T(1))), beta(TensorT<T>::zeros({c})) {}

    TensorT<T> forward(const TensorT<T>& x) const { return layer_norm(x, gamma, beta); }

    void register_params(ParamStoreT<T>& ps, const std::string& prefix) {
        ps.add(prefix + ".gamma", gamma);
        ps.add(prefix + ".beta", beta);
    }

    std::int64_t param_count() const { return gamma.numel() + beta.numel(); }
};

}  // namespace ramit
