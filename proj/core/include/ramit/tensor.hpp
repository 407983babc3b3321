#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ramit/errors.hpp"

namespace ramit {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace detail {
// Identity of a value on a tape. Shared between copies of a tensor so a
// parameter copied into several places is still one leaf node.
struct NodeRef {
    std::uint64_t tape_serial = 0;
    std::int32_t id = -1;
};
}  // namespace detail

// Dense row-major N-dimensional value. Storage is shared on copy; all ops
// produce fresh storage (tensors that participate in a tape are never
// mutated in place). T is float for training/inference and double for
// gradient checking.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
        if (shape_numel(shape_) != static_cast<std::int64_t>(data.size()))
            throw ShapeMismatch("tensor data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape_));
        data_ = std::make_shared<std::vector<T>>(std::move(data));
    }

    static TensorT zeros(Shape shape) { return full(std::move(shape), T(0)); }

    static TensorT full(Shape shape, T value) {
        TensorT t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<T>>(shape_numel(t.shape_), value);
        return t;
    }

    static TensorT scalar(T value) { return full({}, value); }

    const Shape& shape() const { return shape_; }
    std::int64_t ndim() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t dim(std::int64_t i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
    bool defined() const { return static_cast<bool>(data_); }

    const T* data() const { return data_->data(); }
    const std::vector<T>& vec() const { return *data_; }

    // Mutable access is reserved for initialization and the optimizer; it
    // must never run while a tape referencing this storage is alive.
    T* mutable_data() { return data_->data(); }

    T item() const {
        if (numel() != 1) throw NotScalar("item() on tensor of shape " + shape_str(shape_));
        return (*data_)[0];
    }

    T at(std::initializer_list<std::int64_t> idx) const {
        if (static_cast<std::int64_t>(idx.size()) != ndim())
            throw ShapeMismatch("at(): rank mismatch");
        std::int64_t off = 0;
        std::size_t k = 0;
        for (auto i : idx) {
            off = off * shape_[k] + i;
            ++k;
        }
        return (*data_)[static_cast<std::size_t>(off)];
    }

    bool requires_grad() const { return requires_grad_; }

    TensorT& set_requires_grad(bool v) {
        requires_grad_ = v;
        if (v && !node_) node_ = std::make_shared<detail::NodeRef>();
        return *this;
    }

    // Tape linkage (managed by Tape / op recording helpers).
    const std::shared_ptr<detail::NodeRef>& node_ref() const { return node_; }
    void attach_node(std::uint64_t tape_serial, std::int32_t id) {
        if (!node_) node_ = std::make_shared<detail::NodeRef>();
        node_->tape_serial = tape_serial;
        node_->id = id;
    }
    std::int32_t node_on(std::uint64_t tape_serial) const {
        return (node_ && node_->tape_serial == tape_serial) ? node_->id : -1;
    }

    bool all_finite() const {
        for (T v : *data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> out(data_->size());
        for (std::size_t i = 0; i < data_->size(); ++i) out[i] = static_cast<U>((*data_)[i]);
        return TensorT<U>(shape_, std::move(out));
    }

private:
    Shape shape_{};
    std::shared_ptr<std::vector<T>> data_{};
    bool requires_grad_ = false;
    std::shared_ptr<detail::NodeRef> node_{};
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// Runtime-switchable NaN/Inf guard over op outputs; enabled by the test
// suites, off by default for production speed.
inline bool& finite_checks_enabled() {
    static bool enabled = false;
    return enabled;
}

template <typename T>
inline void debug_check_finite(const TensorT<T>& t, const char* op) {
    if (finite_checks_enabled() && !t.all_finite())
        throw Error(std::string("non-finite value produced by ") + op);
}

}  // namespace ramit
