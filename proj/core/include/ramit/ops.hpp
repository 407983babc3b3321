#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "ramit/tape.hpp"
#include "ramit/tensor.hpp"

namespace ramit {

// ---------------------------------------------------------------------------
// Multiply-accumulate instrumentation. A counter made active with MacScope
// collects the MAC cost of every matmul/conv forward executed in the scope,
// bucketed by the active category (attention code tags its projections and
// attention products as AttentionCore).
// ---------------------------------------------------------------------------

enum class MacCategory { Conv, AttentionCore };

struct MacCounter {
    std::int64_t conv = 0;
    std::int64_t attention_core = 0;
    std::int64_t total() const { return conv + attention_core; }
};

namespace detail {
inline MacCounter*& active_mac_counter() {
    thread_local MacCounter* c = nullptr;
    return c;
}
inline MacCategory& active_mac_category() {
    thread_local MacCategory cat = MacCategory::Conv;
    return cat;
}
inline void count_macs(std::int64_t n) {
    MacCounter* c = active_mac_counter();
    if (!c) return;
    if (active_mac_category() == MacCategory::AttentionCore)
        c->attention_core += n;
    else
        c->conv += n;
}
}  // namespace detail

struct MacScope {
    explicit MacScope(MacCounter& c) : prev_(detail::active_mac_counter()) {
        detail::active_mac_counter() = &c;
    }
    ~MacScope() { detail::active_mac_counter() = prev_; }

private:
    MacCounter* prev_;
};

struct MacCategoryScope {
    explicit MacCategoryScope(MacCategory cat) : prev_(detail::active_mac_category()) {
        detail::active_mac_category() = cat;
    }
    ~MacCategoryScope() { detail::active_mac_category() = prev_; }

private:
    MacCategory prev_;
};

// ---------------------------------------------------------------------------
// Broadcasting helpers (standard trailing-dimension rules)
// ---------------------------------------------------------------------------

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeMismatch("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides; broadcast dims (size 1 against a larger output dim) get
// stride 0 so the same element is reused.
inline std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<std::int64_t> strides(out.size(), 0);
    std::int64_t acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        std::size_t oi = i + (out.size() - s.size());
        strides[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : acc;
        acc *= s[i];
    }
    return strides;
}

template <typename T, typename F>
void bcast_loop(const Shape& out, const T* a, const std::vector<std::int64_t>& sa, const T* b,
                const std::vector<std::int64_t>& sb, T* o, F f) {
    if (out.empty()) {
        o[0] = f(a[0], b[0]);
        return;
    }
    std::size_t rank = out.size();
    std::function<void(std::size_t, std::int64_t, std::int64_t, std::int64_t)> rec =
        [&](std::size_t level, std::int64_t oa, std::int64_t ob, std::int64_t oo) {
            if (level == rank - 1) {
                std::int64_t n = out[level];
                std::int64_t da = sa[level], db = sb[level];
                for (std::int64_t i = 0; i < n; ++i)
                    o[oo + i] = f(a[oa + i * da], b[ob + i * db]);
                return;
            }
            std::int64_t inner = 1;
            for (std::size_t k = level + 1; k < rank; ++k) inner *= out[k];
            for (std::int64_t i = 0; i < out[level]; ++i)
                rec(level + 1, oa + i * sa[level], ob + i * sb[level], oo + i * inner);
        };
    rec(0, 0, 0, 0);
}

// Sums grad over the axes that were broadcast to reach `shape`.
template <typename T>
TensorT<T> reduce_to(const TensorT<T>& grad, const Shape& shape) {
    if (same_shape(grad.shape(), shape)) return grad;
    const Shape& gs = grad.shape();
    std::size_t extra = gs.size() - shape.size();
    TensorT<T> out = TensorT<T>::zeros(shape);
    T* od = out.mutable_data();
    const T* gd = grad.data();
    auto strides = broadcast_strides(shape, gs);
    // iterate grad, accumulate into out via the broadcast strides
    std::function<void(std::size_t, std::int64_t, std::int64_t)> rec =
        [&](std::size_t level, std::int64_t go, std::int64_t oo) {
            if (level == gs.size()) {
                od[oo] += gd[go];
                return;
            }
            std::int64_t inner = 1;
            for (std::size_t k = level + 1; k < gs.size(); ++k) inner *= gs[k];
            for (std::int64_t i = 0; i < gs[level]; ++i)
                rec(level + 1, go + i * inner, oo + i * strides[level]);
        };
    (void)extra;
    if (gs.empty())
        od[0] += gd[0];
    else
        rec(0, 0, 0);
    return out;
}

template <typename T>
TensorT<T> elementwise_mul_raw(const TensorT<T>& a, const TensorT<T>& b);

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename FwdF, typename RecF>
TensorT<T> binary_op(const TensorT<T>& a, const TensorT<T>& b, FwdF f, RecF record,
                     const char* name) {
    Shape os = broadcast_shape(a.shape(), b.shape());
    TensorT<T> out = TensorT<T>::zeros(os);
    bcast_loop(os, a.data(), broadcast_strides(a.shape(), os), b.data(),
               broadcast_strides(b.shape(), os), out.mutable_data(), f);
    debug_check_finite(out, name);
    if (tracked(a) || tracked(b)) record(out);
    return out;
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x + y; },
        [&](TensorT<T>& out) {
            auto& tape = *TapeT<T>::active();
            std::int32_t ia = detail::ensure_node(tape, a), ib = detail::ensure_node(tape, b);
            Shape sa = a.shape(), sb = b.shape();
            std::int32_t id = tape.record({ia, ib}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
                if (ia >= 0) sink.add(ia, detail::reduce_to(g, sa));
                if (ib >= 0) sink.add(ib, detail::reduce_to(g, sb));
            });
            out.attach_node(tape.serial(), id);
        },
        "add");
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x - y; },
        [&](TensorT<T>& out) {
            auto& tape = *TapeT<T>::active();
            std::int32_t ia = detail::ensure_node(tape, a), ib = detail::ensure_node(tape, b);
            Shape sa = a.shape(), sb = b.shape();
            std::int32_t id = tape.record({ia, ib}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
                if (ia >= 0) sink.add(ia, detail::reduce_to(g, sa));
                if (ib >= 0) {
                    TensorT<T> ng = TensorT<T>::zeros(g.shape());
                    T* d = ng.mutable_data();
                    const T* s = g.data();
                    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] = -s[i];
                    sink.add(ib, detail::reduce_to(ng, sb));
                }
            });
            out.attach_node(tape.serial(), id);
        },
        "sub");
}

namespace detail {
template <typename T>
TensorT<T> elementwise_mul_raw(const TensorT<T>& a, const TensorT<T>& b) {
    Shape os = broadcast_shape(a.shape(), b.shape());
    TensorT<T> out = TensorT<T>::zeros(os);
    bcast_loop(os, a.data(), broadcast_strides(a.shape(), os), b.data(),
               broadcast_strides(b.shape(), os), out.mutable_data(),
               [](T x, T y) { return x * y; });
    return out;
}
}  // namespace detail

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x * y; },
        [&](TensorT<T>& out) {
            auto& tape = *TapeT<T>::active();
            std::int32_t ia = detail::ensure_node(tape, a), ib = detail::ensure_node(tape, b);
            TensorT<T> av = a, bv = b;
            std::int32_t id = tape.record({ia, ib}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
                if (ia >= 0)
                    sink.add(ia, detail::reduce_to(detail::elementwise_mul_raw(g, bv), av.shape()));
                if (ib >= 0)
                    sink.add(ib, detail::reduce_to(detail::elementwise_mul_raw(g, av), bv.shape()));
            });
            out.attach_node(tape.serial(), id);
        },
        "mul");
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    for (std::int64_t i = 0; i < b.numel(); ++i)
        if (b.data()[i] == T(0)) throw DivisionByZero("div: zero denominator at flat index " + std::to_string(i));
    return detail::binary_op(
        a, b, [](T x, T y) { return x / y; },
        [&](TensorT<T>& out) {
            auto& tape = *TapeT<T>::active();
            std::int32_t ia = detail::ensure_node(tape, a), ib = detail::ensure_node(tape, b);
            TensorT<T> av = a, bv = b, ov = out;
            std::int32_t id = tape.record({ia, ib}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
                Shape os = g.shape();
                if (ia >= 0) {
                    TensorT<T> da = TensorT<T>::zeros(os);
                    detail::bcast_loop(os, g.data(), detail::broadcast_strides(g.shape(), os),
                                       bv.data(), detail::broadcast_strides(bv.shape(), os),
                                       da.mutable_data(), [](T x, T y) { return x / y; });
                    sink.add(ia, detail::reduce_to(da, av.shape()));
                }
                if (ib >= 0) {
                    // d/db (a/b) = -a / b^2 = -(a/b) / b = -out / b
                    TensorT<T> tmp = detail::elementwise_mul_raw(g, ov);
                    TensorT<T> db = TensorT<T>::zeros(os);
                    detail::bcast_loop(os, tmp.data(), detail::broadcast_strides(tmp.shape(), os),
                                       bv.data(), detail::broadcast_strides(bv.shape(), os),
                                       db.mutable_data(), [](T x, T y) { return -x / y; });
                    sink.add(ib, detail::reduce_to(db, bv.shape()));
                }
            });
            out.attach_node(tape.serial(), id);
        },
        "div");
}

// ---------------------------------------------------------------------------
// Unary elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename FwdF, typename GradF>
TensorT<T> unary_op(const TensorT<T>& x, FwdF f, GradF dfdx, const char* name) {
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const T* xd = x.data();
    T* od = out.mutable_data();
    for (std::int64_t i = 0; i < x.numel(); ++i) od[i] = f(xd[i]);
    debug_check_finite(out, name);
    if (tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        TensorT<T> xv = x, ov = out;
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            TensorT<T> dx = TensorT<T>::zeros(xv.shape());
            T* dd = dx.mutable_data();
            const T* gd = g.data();
            const T* xd2 = xv.data();
            const T* od2 = ov.data();
            for (std::int64_t i = 0; i < xv.numel(); ++i) dd[i] = gd[i] * dfdx(xd2[i], od2[i]);
            sink.add(ix, dx);
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

}  // namespace detail

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T s) {
    return detail::unary_op(
        x, [s](T v) { return v * s; }, [s](T, T) { return s; }, "scale");
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, T s) {
    return detail::unary_op(
        x, [s](T v) { return v + s; }, [](T, T) { return T(1); }, "add_scalar");
}

template <typename T>
TensorT<T> neg(const TensorT<T>& x) {
    return scale(x, T(-1));
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope = T(0.01)) {
    return detail::unary_op(
        x, [slope](T v) { return v > T(0) ? v : v * slope; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; }, "leaky_relu");
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    return detail::unary_op(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

// tanh-approximation GELU; a single fixed formula keeps runs bit-identical.
template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
    const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    const T a = static_cast<T>(0.044715);
    return detail::unary_op(
        x,
        [c, a](T v) {
            T u = c * (v + a * v * v * v);
            return T(0.5) * v * (T(1) + std::tanh(u));
        },
        [c, a](T v, T) {
            T u = c * (v + a * v * v * v);
            T t = std::tanh(u);
            T du = c * (T(1) + T(3) * a * v * v);
            return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
        },
        "gelu");
}

template <typename T>
TensorT<T> abs_op(const TensorT<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); }, "abs");
}

template <typename T>
TensorT<T> sqrt_op(const TensorT<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::sqrt(v); },
        [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); }, "sqrt");
}

template <typename T>
TensorT<T> exp_op(const TensorT<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::exp(v); }, [](T, T y) { return y; }, "exp");
}

// max(x, m); gradient passes where x >= m.
template <typename T>
TensorT<T> clamp_min(const TensorT<T>& x, T m) {
    return detail::unary_op(
        x, [m](T v) { return v < m ? m : v; }, [m](T v, T) { return v >= m ? T(1) : T(0); },
        "clamp_min");
}

template <typename T>
TensorT<T> square(const TensorT<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; }, "square");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    double acc = 0.0;
    const T* xd = x.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(xd[i]);
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc));
    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        Shape xs = x.shape();
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            sink.add(ix, TensorT<T>::full(xs, g.item()));
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
    return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

namespace detail {
inline std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank) {
    std::int64_t a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) throw InvalidAxis("axis " + std::to_string(axis) + " for rank " + std::to_string(rank));
    return a;
}
}  // namespace detail

template <typename T>
TensorT<T> sum_axis(const TensorT<T>& x, std::int64_t axis, bool keepdim) {
    std::int64_t a = detail::normalize_axis(axis, x.ndim());
    const Shape& xs = x.shape();
    std::int64_t outer = 1, inner = 1, n = xs[a];
    for (std::int64_t i = 0; i < a; ++i) outer *= xs[i];
    for (std::int64_t i = a + 1; i < x.ndim(); ++i) inner *= xs[i];
    Shape os;
    for (std::int64_t i = 0; i < x.ndim(); ++i) {
        if (i == a) {
            if (keepdim) os.push_back(1);
        } else {
            os.push_back(xs[i]);
        }
    }
    TensorT<T> out = TensorT<T>::zeros(os);
    T* od = out.mutable_data();
    const T* xd = x.data();
    std::vector<double> acc(static_cast<std::size_t>(inner));
    for (std::int64_t o = 0; o < outer; ++o) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::int64_t k = 0; k < n; ++k) {
            const T* src = xd + (o * n + k) * inner;
            for (std::int64_t i = 0; i < inner; ++i) acc[static_cast<std::size_t>(i)] += static_cast<double>(src[i]);
        }
        T* dst = od + o * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] = static_cast<T>(acc[static_cast<std::size_t>(i)]);
    }
    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        Shape xshape = xs;
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            TensorT<T> dx = TensorT<T>::zeros(xshape);
            T* dd = dx.mutable_data();
            const T* gd = g.data();
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t k = 0; k < n; ++k) {
                    T* dst = dd + (o * n + k) * inner;
                    const T* src = gd + o * inner;
                    for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                }
            sink.add(ix, dx);
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

template <typename T>
TensorT<T> mean_axis(const TensorT<T>& x, std::int64_t axis, bool keepdim) {
    std::int64_t a = detail::normalize_axis(axis, x.ndim());
    return scale(sum_axis(x, a, keepdim), T(1) / static_cast<T>(x.shape()[a]));
}

// ---------------------------------------------------------------------------
// Shape ops: reshape / permute / concat / narrow
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeMismatch("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    TensorT<T> out(new_shape, std::vector<T>(x.data(), x.data() + x.numel()));
    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        Shape xs = x.shape();
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            sink.add(ix, TensorT<T>(xs, std::vector<T>(g.data(), g.data() + g.numel())));
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// Materializing permutation of axes.
template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<std::int64_t>& dims) {
    std::int64_t rank = x.ndim();
    if (static_cast<std::int64_t>(dims.size()) != rank) throw InvalidAxis("permute rank mismatch");
    const Shape& xs = x.shape();
    Shape os(dims.size());
    for (std::size_t i = 0; i < dims.size(); ++i) os[i] = xs[static_cast<std::size_t>(dims[i])];

    std::vector<std::int64_t> xstr(rank, 1);
    for (std::int64_t i = rank - 2; i >= 0; --i) xstr[i] = xstr[i + 1] * xs[i + 1];
    std::vector<std::int64_t> src_stride(rank);
    for (std::int64_t i = 0; i < rank; ++i) src_stride[i] = xstr[dims[static_cast<std::size_t>(i)]];

    TensorT<T> out = TensorT<T>::zeros(os);
    T* od = out.mutable_data();
    const T* xd = x.data();
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t n = out.numel();
    for (std::int64_t flat = 0; flat < n; ++flat) {
        std::int64_t src = 0;
        for (std::int64_t i = 0; i < rank; ++i) src += idx[i] * src_stride[i];
        od[flat] = xd[src];
        for (std::int64_t i = rank - 1; i >= 0; --i) {
            if (++idx[i] < os[i]) break;
            idx[i] = 0;
        }
    }
    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        std::vector<std::int64_t> inv(dims.size());
        for (std::size_t i = 0; i < dims.size(); ++i) inv[static_cast<std::size_t>(dims[i])] = static_cast<std::int64_t>(i);
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            sink.add(ix, permute(g, inv));
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, std::int64_t axis) {
    if (xs.empty()) throw ShapeMismatch("concat of zero tensors");
    std::int64_t a = detail::normalize_axis(axis, xs[0].ndim());
    Shape os = xs[0].shape();
    std::int64_t total = 0;
    for (const auto& x : xs) {
        if (x.ndim() != xs[0].ndim()) throw ShapeMismatch("concat rank mismatch");
        for (std::int64_t i = 0; i < x.ndim(); ++i)
            if (i != a && x.shape()[i] != os[i]) throw ShapeMismatch("concat dim mismatch");
        total += x.shape()[a];
    }
    os[a] = total;
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t i = 0; i < a; ++i) outer *= os[i];
    for (std::int64_t i = a + 1; i < static_cast<std::int64_t>(os.size()); ++i) inner *= os[i];

    TensorT<T> out = TensorT<T>::zeros(os);
    T* od = out.mutable_data();
    std::int64_t off = 0;
    for (const auto& x : xs) {
        std::int64_t na = x.shape()[a];
        const T* xd = x.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(xd + o * na * inner, xd + (o + 1) * na * inner,
                      od + (o * total + off) * inner);
        off += na;
    }

    bool any_tracked = false;
    for (const auto& x : xs) any_tracked = any_tracked || detail::tracked(x);
    if (any_tracked) {
        auto& tape = *TapeT<T>::active();
        std::vector<std::int32_t> ids;
        std::vector<std::int64_t> sizes;
        for (const auto& x : xs) {
            ids.push_back(detail::ensure_node(tape, x));
            sizes.push_back(x.shape()[a]);
        }
        std::int32_t id = tape.record(ids, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            const T* gd = g.data();
            std::int64_t off2 = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (ids[k] >= 0) {
                    Shape ps = g.shape();
                    ps[a] = sizes[k];
                    TensorT<T> part = TensorT<T>::zeros(ps);
                    T* pd = part.mutable_data();
                    for (std::int64_t o = 0; o < outer; ++o)
                        std::copy(gd + (o * total + off2) * inner,
                                  gd + (o * total + off2 + sizes[k]) * inner,
                                  pd + o * sizes[k] * inner);
                    sink.add(ids[k], part);
                }
                off2 += sizes[k];
            }
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// Contiguous slice along an axis (copying).
template <typename T>
TensorT<T> narrow(const TensorT<T>& x, std::int64_t axis, std::int64_t start, std::int64_t len) {
    std::int64_t a = detail::normalize_axis(axis, x.ndim());
    const Shape& xs = x.shape();
    if (start < 0 || len < 0 || start + len > xs[a]) throw ShapeMismatch("narrow out of range");
    Shape os = xs;
    os[a] = len;
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t i = 0; i < a; ++i) outer *= xs[i];
    for (std::int64_t i = a + 1; i < x.ndim(); ++i) inner *= xs[i];
    TensorT<T> out = TensorT<T>::zeros(os);
    T* od = out.mutable_data();
    const T* xd = x.data();
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy(xd + (o * xs[a] + start) * inner, xd + (o * xs[a] + start + len) * inner,
                  od + o * len * inner);
    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        Shape xshape = xs;
        std::int64_t na = xs[a];
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            TensorT<T> dx = TensorT<T>::zeros(xshape);
            T* dd = dx.mutable_data();
            const T* gd = g.data();
            for (std::int64_t o = 0; o < outer; ++o)
                std::copy(gd + o * len * inner, gd + (o + 1) * len * inner,
                          dd + (o * na + start) * inner);
            sink.add(ix, dx);
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// out[i] = table[index[i]]; used to materialize the relative position bias.
template <typename T>
TensorT<T> take(const TensorT<T>& table, const std::vector<std::int64_t>& index, Shape out_shape) {
    if (shape_numel(out_shape) != static_cast<std::int64_t>(index.size()))
        throw ShapeMismatch("take: index count vs out shape");
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    T* od = out.mutable_data();
    const T* td = table.data();
    for (std::size_t i = 0; i < index.size(); ++i) od[i] = td[index[i]];
    if (detail::tracked(table)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t it = detail::ensure_node(tape, table);
        Shape ts = table.shape();
        std::int32_t id = tape.record({it}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            TensorT<T> dt = TensorT<T>::zeros(ts);
            T* dd = dt.mutable_data();
            const T* gd = g.data();
            for (std::size_t i = 0; i < index.size(); ++i) dd[index[i]] += gd[i];
            sink.add(it, dt);
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul (batched, trailing two dims are the matrix dims)
// ---------------------------------------------------------------------------

namespace detail {

// c (m x n) = a (m x k) * b (k x n). Accumulates in double even for float
// tensors: float products are exact in double, which keeps reduction results
// stable under summand reordering to well beyond float output precision.
template <typename T>
void matmul_kernel(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n,
                   std::vector<double>& scratch) {
    if (static_cast<std::int64_t>(scratch.size()) < n) scratch.resize(static_cast<std::size_t>(n));
    double* acc = scratch.data();
    for (std::int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        std::fill(acc, acc + n, 0.0);
        for (std::int64_t p = 0; p < k; ++p) {
            double av = static_cast<double>(arow[p]);
            if (av == 0.0) continue;
            const T* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
        }
        T* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[j]);
    }
}

}  // namespace detail

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() < 2 || b.ndim() < 2) throw ShapeMismatch("matmul needs rank >= 2");
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    std::int64_t m = as[as.size() - 2], k = as[as.size() - 1];
    std::int64_t kb = bs[bs.size() - 2], n = bs[bs.size() - 1];
    if (k != kb)
        throw ShapeMismatch("matmul inner dims " + shape_str(as) + " x " + shape_str(bs));

    Shape abatch(as.begin(), as.end() - 2), bbatch(bs.begin(), bs.end() - 2);
    Shape obatch = detail::broadcast_shape(abatch, bbatch);
    Shape os = obatch;
    os.push_back(m);
    os.push_back(n);

    std::int64_t nbatch = shape_numel(obatch);
    auto astr = detail::broadcast_strides(abatch, obatch);
    auto bstr = detail::broadcast_strides(bbatch, obatch);

    TensorT<T> out = TensorT<T>::zeros(os);
    T* od = out.mutable_data();
    const T* ad = a.data();
    const T* bd = b.data();

    std::vector<double> scratch;
    std::vector<std::int64_t> idx(obatch.size(), 0);
    for (std::int64_t bi = 0; bi < nbatch; ++bi) {
        std::int64_t aoff = 0, boff = 0;
        for (std::size_t d = 0; d < obatch.size(); ++d) {
            aoff += idx[d] * astr[d];
            boff += idx[d] * bstr[d];
        }
        detail::matmul_kernel(ad + aoff * m * k, bd + boff * k * n, od + bi * m * n, m, k, n, scratch);
        for (std::int64_t d = static_cast<std::int64_t>(obatch.size()) - 1; d >= 0; --d) {
            if (++idx[d] < obatch[d]) break;
            idx[d] = 0;
        }
    }
    detail::count_macs(nbatch * m * k * n);
    debug_check_finite(out, "matmul");

    if (detail::tracked(a) || detail::tracked(b)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ia = detail::ensure_node(tape, a), ib = detail::ensure_node(tape, b);
        TensorT<T> av = a, bv = b;
        std::int32_t id = tape.record({ia, ib}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            if (ia >= 0) {
                // dA = g @ B^T
                std::vector<std::int64_t> perm(bv.ndim());
                for (std::int64_t i = 0; i < bv.ndim(); ++i) perm[i] = i;
                std::swap(perm[bv.ndim() - 1], perm[bv.ndim() - 2]);
                sink.add(ia, detail::reduce_to(matmul(g, permute(bv, perm)), av.shape()));
            }
            if (ib >= 0) {
                std::vector<std::int64_t> perm(av.ndim());
                for (std::int64_t i = 0; i < av.ndim(); ++i) perm[i] = i;
                std::swap(perm[av.ndim() - 1], perm[av.ndim() - 2]);
                sink.add(ib, detail::reduce_to(matmul(permute(av, perm), g), bv.shape()));
            }
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / layer_norm
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, std::int64_t axis) {
    std::int64_t a = detail::normalize_axis(axis, x.ndim());
    const Shape& xs = x.shape();
    std::int64_t outer = 1, inner = 1, n = xs[a];
    for (std::int64_t i = 0; i < a; ++i) outer *= xs[i];
    for (std::int64_t i = a + 1; i < x.ndim(); ++i) inner *= xs[i];

    TensorT<T> out = TensorT<T>::zeros(xs);
    T* od = out.mutable_data();
    const T* xd = x.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const T* src = xd + o * n * inner + i;
            T* dst = od + o * n * inner + i;
            T mx = src[0];
            for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, src[j * inner]);
            double sum = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                double e = std::exp(static_cast<double>(src[j * inner]) - static_cast<double>(mx));
                dst[j * inner] = static_cast<T>(e);
                sum += e;
            }
            for (std::int64_t j = 0; j < n; ++j)
                dst[j * inner] = static_cast<T>(static_cast<double>(dst[j * inner]) / sum);
        }
    debug_check_finite(out, "softmax");

    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        TensorT<T> ov = out;
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            TensorT<T> dx = TensorT<T>::zeros(ov.shape());
            T* dd = dx.mutable_data();
            const T* gd = g.data();
            const T* yd = ov.data();
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < inner; ++i) {
                    std::int64_t base = o * n * inner + i;
                    T dot = T(0);
                    for (std::int64_t j = 0; j < n; ++j)
                        dot += gd[base + j * inner] * yd[base + j * inner];
                    for (std::int64_t j = 0; j < n; ++j)
                        dd[base + j * inner] =
                            yd[base + j * inner] * (gd[base + j * inner] - dot);
                }
            sink.add(ix, dx);
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// Layer norm over the last axis with affine gamma/beta of size C.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-5)) {
    std::int64_t c = x.shape().back();
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeMismatch("layer_norm affine size " + std::to_string(gamma.numel()) + " vs C=" +
                            std::to_string(c));
    std::int64_t rows = x.numel() / c;

    TensorT<T> out = TensorT<T>::zeros(x.shape());
    std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    const T* xd = x.data();
    const T* gd = gamma.data();
    const T* bd = beta.data();
    T* od = out.mutable_data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* src = xd + r * c;
        double mu = 0.0;
        for (std::int64_t j = 0; j < c; ++j) mu += static_cast<double>(src[j]);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            double d = static_cast<double>(src[j]) - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        inv_std[static_cast<std::size_t>(r)] = is;
        for (std::int64_t j = 0; j < c; ++j) {
            T xh = static_cast<T>((static_cast<double>(src[j]) - mu) * static_cast<double>(is));
            xhat[static_cast<std::size_t>(r * c + j)] = xh;
            od[r * c + j] = xh * gd[j] + bd[j];
        }
    }
    debug_check_finite(out, "layer_norm");

    if (detail::tracked(x) || detail::tracked(gamma) || detail::tracked(beta)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        std::int32_t ig = detail::ensure_node(tape, gamma);
        std::int32_t ib = detail::ensure_node(tape, beta);
        TensorT<T> gv = gamma;
        Shape xs = x.shape();
        auto xhat_p = std::make_shared<std::vector<T>>(std::move(xhat));
        auto istd_p = std::make_shared<std::vector<T>>(std::move(inv_std));
        std::int32_t id = tape.record({ix, ig, ib}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            const T* gg = g.data();
            const T* xh = xhat_p->data();
            const T* is = istd_p->data();
            const T* gam = gv.data();
            if (ig >= 0) {
                TensorT<T> dgam = TensorT<T>::zeros(gv.shape());
                T* d = dgam.mutable_data();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < c; ++j) d[j] += gg[r * c + j] * xh[r * c + j];
                sink.add(ig, dgam);
            }
            if (ib >= 0) {
                TensorT<T> dbeta = TensorT<T>::zeros(gv.shape());
                T* d = dbeta.mutable_data();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < c; ++j) d[j] += gg[r * c + j];
                sink.add(ib, dbeta);
            }
            if (ix >= 0) {
                TensorT<T> dx = TensorT<T>::zeros(xs);
                T* d = dx.mutable_data();
                for (std::int64_t r = 0; r < rows; ++r) {
                    T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
                    for (std::int64_t j = 0; j < c; ++j) {
                        T dxh = gg[r * c + j] * gam[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xh[r * c + j];
                    }
                    mean_dxhat /= static_cast<T>(c);
                    mean_dxhat_xhat /= static_cast<T>(c);
                    for (std::int64_t j = 0; j < c; ++j) {
                        T dxh = gg[r * c + j] * gam[j];
                        d[r * c + j] =
                            is[r] * (dxh - mean_dxhat - xh[r * c + j] * mean_dxhat_xhat);
                    }
                }
                sink.add(ix, dx);
            }
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d (stride 1, symmetric zero padding, grouped)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  std::int64_t groups, std::int64_t pad) {
    if (x.ndim() != 3 || w.ndim() != 4) throw ShapeMismatch("conv2d expects x (C,H,W), w (Co,Ci/g,kh,kw)");
    std::int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    std::int64_t cout = w.dim(0), cpg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (groups < 1 || cin % groups != 0 || cout % groups != 0)
        throw GroupMismatch("conv2d: C_in=" + std::to_string(cin) + " C_out=" + std::to_string(cout) +
                            " groups=" + std::to_string(groups));
    if (cpg != cin / groups)
        throw ShapeMismatch("conv2d: weight expects " + std::to_string(cpg) +
                            " input channels per group, got " + std::to_string(cin / groups));
    if (bias.defined() && bias.numel() != cout) throw ShapeMismatch("conv2d bias size");
    std::int64_t oh = h + 2 * pad - kh + 1, ow = wd + 2 * pad - kw + 1;
    if (oh <= 0 || ow <= 0) throw ShapeMismatch("conv2d output would be empty");

    TensorT<T> out = TensorT<T>::zeros({cout, oh, ow});
    T* od = out.mutable_data();
    const T* xd = x.data();
    const T* wdat = w.data();
    std::int64_t cout_pg = cout / groups;

    if (bias.defined()) {
        const T* bd = bias.data();
        for (std::int64_t oc = 0; oc < cout; ++oc)
            std::fill(od + oc * oh * ow, od + (oc + 1) * oh * ow, bd[oc]);
    }
    for (std::int64_t oc = 0; oc < cout; ++oc) {
        std::int64_t g = oc / cout_pg;
        T* oplane = od + oc * oh * ow;
        for (std::int64_t icg = 0; icg < cpg; ++icg) {
            std::int64_t ic = g * cpg + icg;
            const T* xplane = xd + ic * h * wd;
            const T* wk = wdat + ((oc * cpg + icg) * kh) * kw;
            for (std::int64_t ky = 0; ky < kh; ++ky)
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                    T wv = wk[ky * kw + kx];
                    if (wv == T(0)) continue;
                    std::int64_t oy0 = std::max<std::int64_t>(0, pad - ky);
                    std::int64_t oy1 = std::min(oh, h + pad - ky);
                    std::int64_t ox0 = std::max<std::int64_t>(0, pad - kx);
                    std::int64_t ox1 = std::min(ow, wd + pad - kx);
                    for (std::int64_t oy = oy0; oy < oy1; ++oy) {
                        const T* xrow = xplane + (oy + ky - pad) * wd + (ox0 + kx - pad);
                        T* orow = oplane + oy * ow + ox0;
                        for (std::int64_t i = 0; i < ox1 - ox0; ++i) orow[i] += wv * xrow[i];
                    }
                }
        }
    }
    detail::count_macs(kh * kw * cpg * cout * oh * ow);
    debug_check_finite(out, "conv2d");

    if (detail::tracked(x) || detail::tracked(w) || detail::tracked(bias)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        std::int32_t iw = detail::ensure_node(tape, w);
        std::int32_t ib = bias.defined() ? detail::ensure_node(tape, bias) : -1;
        TensorT<T> xv = x, wv = w;
        std::int32_t id = tape.record({ix, iw, ib}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            const T* gd = g.data();
            if (ib >= 0) {
                TensorT<T> db = TensorT<T>::zeros({cout});
                T* d = db.mutable_data();
                for (std::int64_t oc = 0; oc < cout; ++oc) {
                    T acc = T(0);
                    const T* gp = gd + oc * oh * ow;
                    for (std::int64_t i = 0; i < oh * ow; ++i) acc += gp[i];
                    d[oc] = acc;
                }
                sink.add(ib, db);
            }
            if (iw >= 0) {
                TensorT<T> dw = TensorT<T>::zeros(wv.shape());
                T* d = dw.mutable_data();
                const T* xd2 = xv.data();
                for (std::int64_t oc = 0; oc < cout; ++oc) {
                    std::int64_t gidx = oc / cout_pg;
                    const T* gplane = gd + oc * oh * ow;
                    for (std::int64_t icg = 0; icg < cpg; ++icg) {
                        std::int64_t ic = gidx * cpg + icg;
                        const T* xplane = xd2 + ic * h * wd;
                        for (std::int64_t ky = 0; ky < kh; ++ky)
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                std::int64_t oy0 = std::max<std::int64_t>(0, pad - ky);
                                std::int64_t oy1 = std::min(oh, h + pad - ky);
                                std::int64_t ox0 = std::max<std::int64_t>(0, pad - kx);
                                std::int64_t ox1 = std::min(ow, wd + pad - kx);
                                T acc = T(0);
                                for (std::int64_t oy = oy0; oy < oy1; ++oy) {
                                    const T* xrow = xplane + (oy + ky - pad) * wd + (ox0 + kx - pad);
                                    const T* grow = gplane + oy * ow + ox0;
                                    for (std::int64_t i = 0; i < ox1 - ox0; ++i)
                                        acc += xrow[i] * grow[i];
                                }
                                d[((oc * cpg + icg) * kh + ky) * kw + kx] = acc;
                            }
                    }
                }
                sink.add(iw, dw);
            }
            if (ix >= 0) {
                TensorT<T> dx = TensorT<T>::zeros(xv.shape());
                T* d = dx.mutable_data();
                const T* wdat2 = wv.data();
                for (std::int64_t oc = 0; oc < cout; ++oc) {
                    std::int64_t gidx = oc / cout_pg;
                    const T* gplane = gd + oc * oh * ow;
                    for (std::int64_t icg = 0; icg < cpg; ++icg) {
                        std::int64_t ic = gidx * cpg + icg;
                        T* xplane = d + ic * h * wd;
                        const T* wk = wdat2 + ((oc * cpg + icg) * kh) * kw;
                        for (std::int64_t ky = 0; ky < kh; ++ky)
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                T wval = wk[ky * kw + kx];
                                if (wval == T(0)) continue;
                                std::int64_t oy0 = std::max<std::int64_t>(0, pad - ky);
                                std::int64_t oy1 = std::min(oh, h + pad - ky);
                                std::int64_t ox0 = std::max<std::int64_t>(0, pad - kx);
                                std::int64_t ox1 = std::min(ow, wd + pad - kx);
                                for (std::int64_t oy = oy0; oy < oy1; ++oy) {
                                    T* xrow = xplane + (oy + ky - pad) * wd + (ox0 + kx - pad);
                                    const T* grow = gplane + oy * ow + ox0;
                                    for (std::int64_t i = 0; i < ox1 - ox0; ++i)
                                        xrow[i] += wval * grow[i];
                                }
                            }
                    }
                }
                sink.add(ix, dx);
            }
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// pixel shuffle / unshuffle: out[c, r*i+di, r*j+dj] = in[c*r^2 + di*r + dj, i, j]
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> pixel_unshuffle(const TensorT<T>& x, std::int64_t r);

template <typename T>
TensorT<T> pixel_shuffle(const TensorT<T>& x, std::int64_t r) {
    if (x.ndim() != 3) throw ShapeMismatch("pixel_shuffle expects (C,H,W)");
    std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (c % (r * r) != 0)
        throw ChannelNotDivisible("pixel_shuffle: " + std::to_string(c) + " channels, r=" + std::to_string(r));
    std::int64_t oc = c / (r * r);
    TensorT<T> out = TensorT<T>::zeros({oc, h * r, w * r});
    T* od = out.mutable_data();
    const T* xd = x.data();
    for (std::int64_t co = 0; co < oc; ++co)
        for (std::int64_t di = 0; di < r; ++di)
            for (std::int64_t dj = 0; dj < r; ++dj) {
                const T* src = xd + (co * r * r + di * r + dj) * h * w;
                for (std::int64_t i = 0; i < h; ++i) {
                    T* dst = od + co * (h * r) * (w * r) + (r * i + di) * (w * r) + dj;
                    for (std::int64_t j = 0; j < w; ++j) dst[j * r] = src[i * w + j];
                }
            }
    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            sink.add(ix, pixel_unshuffle(g, r));
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

template <typename T>
TensorT<T> pixel_unshuffle(const TensorT<T>& x, std::int64_t r) {
    if (x.ndim() != 3) throw ShapeMismatch("pixel_unshuffle expects (C,H,W)");
    std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % r != 0 || w % r != 0)
        throw NotDivisible("pixel_unshuffle: spatial " + std::to_string(h) + "x" + std::to_string(w) +
                           " not divisible by r=" + std::to_string(r));
    std::int64_t oh = h / r, ow = w / r;
    TensorT<T> out = TensorT<T>::zeros({c * r * r, oh, ow});
    T* od = out.mutable_data();
    const T* xd = x.data();
    for (std::int64_t co = 0; co < c; ++co)
        for (std::int64_t di = 0; di < r; ++di)
            for (std::int64_t dj = 0; dj < r; ++dj) {
                T* dst = od + (co * r * r + di * r + dj) * oh * ow;
                for (std::int64_t i = 0; i < oh; ++i) {
                    const T* src = xd + co * h * w + (r * i + di) * w + dj;
                    for (std::int64_t j = 0; j < ow; ++j) dst[i * ow + j] = src[j * r];
                }
            }
    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            sink.add(ix, pixel_shuffle(g, r));
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Symmetric (edge-inclusive mirror) padding on the right/bottom of (C,H,W).
// fold(i, n) tiles 0..n-1 back and forth, so a 1-pixel image extends to any
// size.
// ---------------------------------------------------------------------------

namespace detail {
inline std::int64_t mirror_fold(std::int64_t i, std::int64_t n) {
    std::int64_t period = 2 * n;
    std::int64_t j = i % period;
    return j < n ? j : period - 1 - j;
}
}  // namespace detail

template <typename T>
TensorT<T> mirror_pad_hw(const TensorT<T>& x, std::int64_t new_h, std::int64_t new_w) {
    if (x.ndim() != 3) throw ShapeMismatch("mirror_pad_hw expects (C,H,W)");
    std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (new_h < h || new_w < w) throw ShapeMismatch("mirror_pad_hw cannot shrink");
    TensorT<T> out = TensorT<T>::zeros({c, new_h, new_w});
    T* od = out.mutable_data();
    const T* xd = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < new_h; ++i) {
            std::int64_t si = detail::mirror_fold(i, h);
            for (std::int64_t j = 0; j < new_w; ++j)
                od[(ch * new_h + i) * new_w + j] = xd[(ch * h + si) * w + detail::mirror_fold(j, w)];
        }
    if (detail::tracked(x)) {
        auto& tape = *TapeT<T>::active();
        std::int32_t ix = detail::ensure_node(tape, x);
        std::int32_t id = tape.record({ix}, [=](const TensorT<T>& g, GradSinkT<T>& sink) {
            TensorT<T> dx = TensorT<T>::zeros({c, h, w});
            T* dd = dx.mutable_data();
            const T* gd = g.data();
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t i = 0; i < new_h; ++i) {
                    std::int64_t si = detail::mirror_fold(i, h);
                    for (std::int64_t j = 0; j < new_w; ++j)
                        dd[(ch * h + si) * w + detail::mirror_fold(j, w)] +=
                            gd[(ch * new_h + i) * new_w + j];
                }
            sink.add(ix, dx);
        });
        out.attach_node(tape.serial(), id);
    }
    return out;
}

// Crop the top-left (C, new_h, new_w) corner.
template <typename T>
TensorT<T> crop_hw(const TensorT<T>& x, std::int64_t new_h, std::int64_t new_w) {
    TensorT<T> t = narrow(x, 1, 0, new_h);
    return narrow(t, 2, 0, new_w);
}

}  // namespace ramit
