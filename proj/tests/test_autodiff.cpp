#include <doctest.h>

#include "ramit/gradcheck.hpp"
#include "ramit/nn.hpp"
#include "ramit/ops.hpp"
#include "testutil.hpp"

using namespace ramit;

TEST_CASE("backward of sum of squares") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = sum_all(square(x));
    auto grads = tape.backward(loss);
    Tensor g = grads.grad(x);
    CHECK(g.at({0}) == 2.0f);
    CHECK(g.at({1}) == 4.0f);
}

TEST_CASE("backward of softmax component matches central differences") {
    Tensor64 x({2}, {0.3, -0.7});
    x.set_requires_grad(true);
    double analytic0;
    {
        Tape64 tape;
        Tape64::Scope scope(tape);
        Tensor64 y = softmax(x, 0);
        Tensor64 loss = narrow(y, 0, 0, 1);  // pick index 0
        auto grads = tape.backward(reshape(loss, {}));
        analytic0 = grads.grad(x).at({0});
    }
    const double h = 1e-4;
    auto f = [&](double d0) {
        Tensor64 probe({2}, {0.3 + d0, -0.7});
        return softmax(probe, 0).at({0});
    };
    double numeric = (f(h) - f(-h)) / (2 * h);
    CHECK(analytic0 == doctest::Approx(numeric).epsilon(1e-5));
}

TEST_CASE("detached branch contributes zero gradient") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tensor c({2}, {5, 5});  // constant, not tracked
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = sum_all(add(mul(x, c), c));
    auto grads = tape.backward(loss);
    Tensor g = grads.grad(x);
    CHECK(g.at({0}) == 5.0f);
    CHECK(g.at({1}) == 5.0f);
    CHECK_THROWS_AS((void)grads.grad(c), DetachedNode);
}

TEST_CASE("backward demands a scalar on the active tape") {
    Tensor x = testutil::random_tensor<float>({3}, 0);
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor y = scale(x, 2.0f);
    CHECK_THROWS_AS((void)tape.backward(y), NotScalar);
    Tensor off = Tensor::scalar(1.0f);
    CHECK_THROWS_AS((void)tape.backward(off), DetachedNode);
}

TEST_CASE("parameter used twice accumulates both contributions") {
    Tensor x({1}, {3.0f});
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = sum_all(mul(x, x));  // d/dx x^2 = 2x
    auto grads = tape.backward(loss);
    CHECK(grads.grad(x).at({0}) == 6.0f);
}

TEST_CASE("gradient suite: every differentiable op under 1e-3") {
    auto reports = gradcheck::run_op_suite(2024, 10, 1e-3);
    for (const auto& r : reports) {
        INFO(r.op << " worst rel err " << r.worst);
        CHECK(r.pass);
    }
    CHECK(reports.size() >= 25);
}

TEST_CASE("gradient suite flags a corrupted backward rule") {
    auto reports = gradcheck::run_op_suite(2024, 2, 1e-3, "gelu");
    bool gelu_failed = false;
    for (const auto& r : reports)
        if (r.op == "gelu") gelu_failed = !r.pass;
    CHECK(gelu_failed);
}

TEST_CASE("adam first step decreases parameter by about lr") {
    ParamStoreT<float> store;
    Tensor p = Tensor::full({3}, 1.0f);
    store.add("p", p);
    AdamStateT<float> state;
    state.reset(store);
    std::vector<Tensor> grads{Tensor::full({3}, 1.0f)};
    adam_step(store, grads, state, 0.01);
    // mhat = vhat = 1 after bias correction, so the step is lr/(1+eps)
    for (int i = 0; i < 3; ++i) CHECK(p.at({i}) == doctest::Approx(1.0f - 0.01f).epsilon(1e-6));
    CHECK(state.step == 1);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    ParamStoreT<float> store;
    Tensor p({2}, {0.5f, -0.25f});
    store.add("p", p);
    AdamStateT<float> state;
    state.reset(store);
    std::vector<Tensor> grads{Tensor::zeros({2})};
    adam_step(store, grads, state, 0.1);
    CHECK(p.at({0}) == 0.5f);
    CHECK(p.at({1}) == -0.25f);
}

TEST_CASE("adam keeps twin parameters identical") {
    ParamStoreT<float> store;
    Tensor a = Tensor::full({4}, 0.7f), b = Tensor::full({4}, 0.7f);
    store.add("a", a);
    store.add("b", b);
    AdamStateT<float> state;
    state.reset(store);
    for (int step = 0; step < 20; ++step) {
        Tensor g = testutil::random_tensor<float>({4}, 100 + static_cast<std::uint64_t>(step));
        std::vector<Tensor> grads{g, g};
        adam_step(store, grads, state, 0.02);
    }
    CHECK(testutil::bitwise_equal(a, b));
}

TEST_CASE("adam second moment stays nonnegative") {
    ParamStoreT<float> store;
    Tensor p = Tensor::zeros({8});
    store.add("p", p);
    AdamStateT<float> state;
    state.reset(store);
    for (int step = 0; step < 10; ++step) {
        Tensor g = testutil::random_tensor<float>({8}, 55 + static_cast<std::uint64_t>(step), -3.0, 3.0);
        adam_step(store, {g}, state, 0.01);
        for (float v : state.v[0]) CHECK(v >= 0.0f);
    }
}

TEST_CASE("adam state shape mismatches are rejected") {
    ParamStoreT<float> store;
    Tensor p = Tensor::zeros({4});
    store.add("p", p);
    AdamStateT<float> state;
    state.reset(store);
    std::vector<Tensor> wrong{Tensor::zeros({3})};
    CHECK_THROWS_AS(adam_step(store, wrong, state, 0.1), ShapeMismatch);
}
