#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "ramit/tensor.hpp"

namespace ramit {

template <typename T>
class TapeT;

// Gradient accumulator handed to backward rules. add() sums into the
// per-node gradient buffer.
template <typename T>
class GradSinkT {
public:
    explicit GradSinkT(std::vector<TensorT<T>>& grads) : grads_(grads) {}

    void add(std::int32_t node, const TensorT<T>& g) {
        if (node < 0) return;
        auto& slot = grads_[static_cast<std::size_t>(node)];
        if (!slot.defined()) {
            slot = g;
            return;
        }
        if (!same_shape(slot.shape(), g.shape()))
            throw ShapeMismatch("gradient accumulation shape " + shape_str(g.shape()) +
                                " vs " + shape_str(slot.shape()));
        TensorT<T> acc = TensorT<T>::zeros(slot.shape());
        T* out = acc.mutable_data();
        const T* a = slot.data();
        const T* b = g.data();
        for (std::int64_t i = 0; i < acc.numel(); ++i) out[i] = a[i] + b[i];
        slot = acc;
    }

private:
    std::vector<TensorT<T>>& grads_;
};

// Result of Tape::backward. Gradients are addressed by the tensors that were
// recorded on the tape (leaves or intermediates).
template <typename T>
class GradientsT {
public:
    GradientsT(std::uint64_t serial, std::vector<TensorT<T>> by_node)
        : serial_(serial), by_node_(std::move(by_node)) {}

    bool has(const TensorT<T>& t) const {
        std::int32_t id = t.node_on(serial_);
        return id >= 0 && by_node_[static_cast<std::size_t>(id)].defined();
    }

    // Gradient of the loss w.r.t. t; zeros if t never influenced the loss.
    TensorT<T> grad(const TensorT<T>& t) const {
        std::int32_t id = t.node_on(serial_);
        if (id < 0) throw DetachedNode("tensor was not recorded on this tape");
        const auto& g = by_node_[static_cast<std::size_t>(id)];
        return g.defined() ? g : TensorT<T>::zeros(t.shape());
    }

private:
    std::uint64_t serial_;
    std::vector<TensorT<T>> by_node_;
};

// Reverse-mode tape. Operations append nodes in execution order, so every
// input id precedes its consumer and the reverse sweep visits each node
// exactly once. A tape is made active for a scope with Tape::Scope; ops
// record only while a tape is active and an input is tracked.
template <typename T>
class TapeT {
public:
    using BackwardFn = std::function<void(const TensorT<T>& grad_out, GradSinkT<T>& sink)>;

    TapeT() : serial_(next_serial()) {}
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    std::uint64_t serial() const { return serial_; }
    std::size_t size() const { return nodes_.size(); }

    static TapeT*& active() {
        thread_local TapeT* current = nullptr;
        return current;
    }

    struct Scope {
        explicit Scope(TapeT& t) : prev_(active()) { active() = &t; }
        ~Scope() { active() = prev_; }

    private:
        TapeT* prev_;
    };

    // Ensures t has a leaf node on this tape (no inputs, no backward rule;
    // its gradient is read out of the accumulation buffer directly).
    std::int32_t leaf(const TensorT<T>& t) {
        std::int32_t id = t.node_on(serial_);
        if (id >= 0) return id;
        id = static_cast<std::int32_t>(nodes_.size());
        nodes_.push_back(Node{{}, nullptr});
        const_cast<TensorT<T>&>(t).attach_node(serial_, id);
        return id;
    }

    std::int32_t record(std::vector<std::int32_t> inputs, BackwardFn fn) {
        std::int32_t id = static_cast<std::int32_t>(nodes_.size());
        nodes_.push_back(Node{std::move(inputs), std::move(fn)});
        return id;
    }

    // Accumulates gradients of a scalar loss w.r.t. every node on the tape.
    GradientsT<T> backward(const TensorT<T>& loss) {
        if (loss.numel() != 1) throw NotScalar("backward() needs a scalar loss, got " + shape_str(loss.shape()));
        std::int32_t root = loss.node_on(serial_);
        if (root < 0) throw DetachedNode("loss tensor is not on the active tape");

        std::vector<TensorT<T>> grads(nodes_.size());
        grads[static_cast<std::size_t>(root)] = TensorT<T>::full(loss.shape(), T(1));
        GradSinkT<T> sink(grads);
        for (std::int32_t i = root; i >= 0; --i) {
            auto& node = nodes_[static_cast<std::size_t>(i)];
            const auto& g = grads[static_cast<std::size_t>(i)];
            if (!g.defined() || !node.backward) continue;
            node.backward(g, sink);
        }
        return GradientsT<T>(serial_, std::move(grads));
    }

private:
    struct Node {
        std::vector<std::int32_t> inputs;
        BackwardFn backward;
    };

    static std::uint64_t next_serial() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    std::uint64_t serial_;
    std::vector<Node> nodes_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

namespace detail {

// True when x should be recorded: a tape is active and x is either a grad
// leaf or already a node on the active tape.
template <typename T>
inline bool tracked(const TensorT<T>& x) {
    TapeT<T>* tape = TapeT<T>::active();
    if (!tape) return false;
    return x.requires_grad() || x.node_on(tape->serial()) >= 0;
}

template <typename T>
inline std::int32_t ensure_node(TapeT<T>& tape, const TensorT<T>& x) {
    std::int32_t id = x.node_on(tape.serial());
    if (id >= 0) return id;
    if (x.requires_grad()) return tape.leaf(x);
    return -1;  // untracked constant input
}

}  // namespace detail

}  // namespace ramit
