#include <functional>
#include <vector>

#include "doctest.h"
#include "metassm/autodiff.hpp"
#include "metassm/rng.hpp"
#include "support/finite_diff.hpp"

using namespace metassm;
using metassm::testing::fd_gradient;
using metassm::testing::rel_error;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Scalarize an op output with a fixed random projection, then compare the
// reverse-mode gradient for each input against central finite differences.
void gradcheck(const char* what,
               const std::function<Var(Graph&, const std::vector<Var>&)>& build,
               const std::vector<Tensor>& inputs, double tol = 1e-5,
               std::uint64_t seed = 7) {
    Graph probe_graph;
    std::vector<Var> probe_vars;
    for (const Tensor& t : inputs) probe_vars.push_back(probe_graph.leaf(t));
    Rng rng(seed);
    Tensor proj = random_tensor(rng, probe_graph.value(build(probe_graph, probe_vars)).shape(),
                                -1.0, 1.0);

    auto eval = [&](const std::vector<Tensor>& xs) {
        Graph g;
        std::vector<Var> vars;
        for (const Tensor& t : xs) vars.push_back(g.leaf(t));
        Var out = build(g, vars);
        return g.value(g.sum(g.mul(out, g.constant(proj)))).item();
    };

    Graph g;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.leaf(t));
    Var loss = g.sum(g.mul(build(g, vars), g.constant(proj)));
    GradientMap grads = g.backward(loss, vars);

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Tensor fd = fd_gradient(
            [&](const Tensor& x) {
                std::vector<Tensor> xs = inputs;
                xs[i] = x;
                return eval(xs);
            },
            inputs[i]);
        INFO(what << ", input " << i);
        CHECK(rel_error(grads.tensor(vars[i]), fd) < tol);
    }
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("relu forward matches definition") {
    Graph g;
    Var x = g.leaf(Tensor::row({-1.0, 0.0, 2.0}));
    const Tensor& y = g.value(g.relu(x));
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 2.0);
}

TEST_CASE("matmul by identity is identity") {
    Graph g;
    Var eye = g.constant(Tensor::identity(3));
    Var v = g.leaf(Tensor::row({2.5, -1.0, 0.25}));
    const Tensor& y = g.value(g.matmul(eye, v));
    CHECK(y.bit_equal(g.value(v)));
}

TEST_CASE("mean of square") {
    Graph g;
    Var x = g.leaf(Tensor::row({1.0, -2.0, 3.0}));
    CHECK(g.value(g.mean(g.square(x))).item() == doctest::Approx(14.0 / 3.0));
}

TEST_CASE("shape mismatch names the op and both shapes") {
    Graph g;
    Var a = g.leaf(Tensor::zeros({2, 3}));
    Var b = g.leaf(Tensor::zeros({4, 5}));
    try {
        g.matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,5]") != std::string::npos);
    }
}

TEST_CASE("non-finite result raises numeric error") {
    Graph g;
    Var big = g.leaf(Tensor::row({1e308}));
    CHECK_THROWS_AS(g.square(big), NumericError);
}

TEST_CASE("d/dx x^2 at 3 is 6") {
    Graph g;
    Var x = g.leaf(Tensor::scalar(3.0));
    Var loss = g.square(x);
    GradientMap grads = g.backward(loss, std::array{x});
    CHECK(grads.tensor(x).item() == doctest::Approx(6.0));
}

TEST_CASE("second derivative of x^3 at 2 via backward-of-backward") {
    Graph g;
    Var x = g.leaf(Tensor::scalar(2.0));
    Var y = g.mul(x, g.square(x));
    GradientMap first = g.backward(y, std::array{x}, /*create_graph=*/true);
    Var dy = first.node(x);
    CHECK(g.value(dy).item() == doctest::Approx(12.0));  // 3 x^2
    GradientMap second = g.backward(dy, std::array{x});
    CHECK(second.tensor(x).item() == doctest::Approx(12.0));  // 6 x
}

TEST_CASE("mse gradient w.r.t. W at zero matches finite differences") {
    // loss = mean((W v - t)^2), W = 0 (1x2), v = [1, 0], t = [1]
    const Tensor w0 = Tensor::zeros({1, 2});
    const Tensor v = Tensor::row({1.0, 0.0});
    const Tensor t = Tensor::row({1.0});

    auto loss_value = [&](const Tensor& w) {
        Graph g;
        Var diff = g.sub(g.matmul(g.leaf(w, false), g.constant(v)), g.constant(t));
        return g.value(g.mean(g.square(diff))).item();
    };

    Tensor fd = fd_gradient(loss_value, w0);

    Graph g;
    Var w = g.leaf(w0);
    Var loss = g.mean(g.square(g.sub(g.matmul(w, g.constant(v)), g.constant(t))));
    GradientMap grads = g.backward(loss, std::array{w});
    CHECK(rel_error(grads.tensor(w), fd) < 1e-5);
}

TEST_CASE("every primitive matches central finite differences") {
    Rng rng(42);
    for (int round = 0; round < 3; ++round) {
        const auto seed = static_cast<std::uint64_t>(round + 11);

        gradcheck("matmul m x m", [](Graph& g, const std::vector<Var>& v) {
            return g.matmul(v[0], v[1]);
        }, {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})}, 1e-5, seed);

        gradcheck("matmul m x vec", [](Graph& g, const std::vector<Var>& v) {
            return g.matmul(v[0], v[1]);
        }, {random_tensor(rng, {3, 4}), random_tensor(rng, {4})}, 1e-5, seed);

        gradcheck("add", [](Graph& g, const std::vector<Var>& v) {
            return g.add(v[0], v[1]);
        }, {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})}, 1e-5, seed);

        gradcheck("sub", [](Graph& g, const std::vector<Var>& v) {
            return g.sub(v[0], v[1]);
        }, {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})}, 1e-5, seed);

        gradcheck("mul", [](Graph& g, const std::vector<Var>& v) {
            return g.mul(v[0], v[1]);
        }, {random_tensor(rng, {5}), random_tensor(rng, {5})}, 1e-5, seed);

        gradcheck("scalar_mul", [](Graph& g, const std::vector<Var>& v) {
            return g.scal(-1.75, v[0]);
        }, {random_tensor(rng, {2, 2})}, 1e-5, seed);

        // keep inputs away from the kink at zero
        Tensor relu_in = random_tensor(rng, {3, 3});
        for (std::size_t i = 0; i < relu_in.size(); ++i) {
            if (std::abs(relu_in[i]) < 0.1) relu_in[i] += relu_in[i] >= 0 ? 0.2 : -0.2;
        }
        gradcheck("relu", [](Graph& g, const std::vector<Var>& v) {
            return g.relu(v[0]);
        }, {relu_in}, 1e-5, seed);

        gradcheck("square", [](Graph& g, const std::vector<Var>& v) {
            return g.square(v[0]);
        }, {random_tensor(rng, {4})}, 1e-5, seed);

        gradcheck("mean", [](Graph& g, const std::vector<Var>& v) {
            return g.mean(v[0]);
        }, {random_tensor(rng, {3, 2})}, 1e-5, seed);

        gradcheck("sum", [](Graph& g, const std::vector<Var>& v) {
            return g.sum(v[0]);
        }, {random_tensor(rng, {3, 2})}, 1e-5, seed);

        gradcheck("slice", [](Graph& g, const std::vector<Var>& v) {
            return g.slice(v[0], 0, 1, 2);
        }, {random_tensor(rng, {4, 3})}, 1e-5, seed);

        gradcheck("concat", [](Graph& g, const std::vector<Var>& v) {
            return g.concat(std::array{v[0], v[1]}, 1);
        }, {random_tensor(rng, {2, 2}), random_tensor(rng, {2, 3})}, 1e-5, seed);

        gradcheck("reshape", [](Graph& g, const std::vector<Var>& v) {
            return g.reshape(v[0], {3, 2});
        }, {random_tensor(rng, {2, 3})}, 1e-5, seed);

        gradcheck("transpose", [](Graph& g, const std::vector<Var>& v) {
            return g.transpose(v[0]);
        }, {random_tensor(rng, {2, 4})}, 1e-5, seed);
    }
}

TEST_CASE("double backward matches finite differences of the first gradient") {
    Rng rng(99);
    const Tensor w0 = random_tensor(rng, {3, 3});
    const Tensor x0 = random_tensor(rng, {3});
    const Tensor proj = random_tensor(rng, {3, 3}, -1.0, 1.0);

    // f(W) = proj . dL/dW, where L = sum(square(W x))
    auto projected_grad = [&](const Tensor& w_in) {
        Graph g;
        Var w = g.leaf(w_in);
        Var loss = g.sum(g.square(g.matmul(w, g.constant(x0))));
        GradientMap first = g.backward(loss, std::array{w}, true);
        return g.value(g.sum(g.mul(first.node(w), g.constant(proj)))).item();
    };

    Tensor fd = fd_gradient(projected_grad, w0, 1e-5);

    Graph g;
    Var w = g.leaf(w0);
    Var loss = g.sum(g.square(g.matmul(w, g.constant(x0))));
    GradientMap first = g.backward(loss, std::array{w}, true);
    Var scalarized = g.sum(g.mul(first.node(w), g.constant(proj)));
    GradientMap second = g.backward(scalarized, std::array{w});
    CHECK(rel_error(second.tensor(w), fd) < 1e-4);
}

TEST_CASE("gradients without create_graph are detached") {
    Graph g;
    Var x = g.leaf(Tensor::scalar(2.0));
    GradientMap first = g.backward(g.square(x), std::array{x}, false);
    CHECK_FALSE(g.requires_grad(first.node(x)));
}

TEST_CASE("wrt node unreachable from loss yields zero gradient") {
    Graph g;
    Var x = g.leaf(Tensor::scalar(1.0));
    Var y = g.leaf(Tensor::row({1.0, 2.0}));
    Var loss = g.square(x);
    GradientMap grads = g.backward(loss, std::array{x, y});
    CHECK(grads.tensor(y).bit_equal(Tensor::zeros({2})));
    CHECK(grads.tensor(x).item() == doctest::Approx(2.0));
}

TEST_CASE("backward rejects non-scalar loss and non-grad wrt") {
    Graph g;
    Var x = g.leaf(Tensor::row({1.0, 2.0}));
    CHECK_THROWS_AS(g.backward(g.square(x), std::array{x}), ShapeError);
    Var c = g.constant(Tensor::scalar(1.0));
    CHECK_THROWS_AS(g.backward(g.square(g.mean(x)), std::array{c}), Error);
}

TEST_CASE("backward leaves node values unchanged") {
    Rng rng(3);
    Graph g;
    Var a = g.leaf(random_tensor(rng, {3, 3}));
    Var b = g.leaf(random_tensor(rng, {3, 3}));
    Var h = g.relu(g.matmul(a, b));
    Var loss = g.mean(g.square(h));
    const Tensor before_h = g.value(h);
    const Tensor before_loss = g.value(loss);
    g.backward(loss, std::array{a, b}, true);
    CHECK(g.value(h).bit_equal(before_h));
    CHECK(g.value(loss).bit_equal(before_loss));
}

TEST_CASE("gradient accumulation is deterministic") {
    auto run = [] {
        Rng rng(17);
        Graph g;
        Var x = g.leaf(random_tensor(rng, {4, 4}));
        // x feeds several consumers so accumulation order matters
        Var loss = g.mean(g.add(g.square(x), g.mul(x, g.relu(x))));
        return g.backward(loss, std::array{x}).tensor(x);
    };
    CHECK(run().bit_equal(run()));
}

}  // TEST_SUITE
