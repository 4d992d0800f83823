#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "tsguard/graph.hpp"

using namespace tsguard;

namespace {

int fd_points_checked = 0; // tallied across the sweep; asserted >= 100 at the end

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

Tensor rand_tensor(const std::vector<std::size_t>& shape, Rng& rng, double lo = -1.0,
                   double hi = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// inputs bounded away from relu's kink so finite differences stay valid
Tensor rand_tensor_off_zero(const std::vector<std::size_t>& shape, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.data) {
        double x = rng.uniform(0.05, 1.0);
        if (rng.uniform() < 0.5) x = -x;
        v = x;
    }
    return t;
}

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

double loss_value(const Builder& build, const std::vector<Tensor>& inputs, const Tensor& target) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(g.input(t));
    return g.value(mse_loss(g, build(g, vars), target)).data[0];
}

/// Backward vs central finite differences for every input of a primitive.
void check_gradients(const Builder& build, const std::vector<Tensor>& inputs,
                     const Tensor& target) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(g.input(t));
    g.backward(mse_loss(g, build(g, vars), target));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto probe_fn = [&](const Tensor& probe) {
            std::vector<Tensor> probed = inputs;
            probed[i] = probe;
            return loss_value(build, probed, target);
        };
        const Tensor fd = finite_difference_gradient(probe_fn, inputs[i], 1e-5);
        const Tensor& got = g.grad(vars[i]);
        for (std::size_t j = 0; j < fd.size(); ++j) {
            INFO("input " << i << " component " << j);
            CHECK(rel_err(got.data[j], fd.data[j]) < 1e-4);
        }
        ++fd_points_checked;
    }
}

// independent hand-unrolled convolution used as the conv1d oracle
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad) {
    const std::size_t m = x.shape[0], cin = x.shape[1], L = x.shape[2];
    const std::size_t cout = w.shape[0], K = w.shape[2];
    const std::size_t lout = L + 2 * pad - K + 1;
    Tensor y({m, cout, lout});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t t = 0; t < lout; ++t) {
                double acc = b.data[co];
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t u = 0; u < K; ++u) {
                        const long s = static_cast<long>(t + u) - static_cast<long>(pad);
                        if (s >= 0 && s < static_cast<long>(L))
                            acc += w.at3(co, ci, u) * x.at3(i, ci, static_cast<std::size_t>(s));
                    }
                y.at3(i, co, t) = acc;
            }
    return y;
}

// independent scalar transcription of the stabilized binary cross entropy
double ce_oracle(const std::vector<std::array<double, 2>>& logits, const std::vector<int>& labels) {
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double mx = std::max(logits[i][0], logits[i][1]);
        const double z = std::exp(logits[i][0] - mx) + std::exp(logits[i][1] - mx);
        acc += std::log(z) - (logits[i][static_cast<std::size_t>(labels[i])] - mx);
    }
    return acc / static_cast<double>(logits.size());
}

} // namespace

TEST_CASE("sigmoid at the symmetry point") {
    Graph g;
    CHECK(g.value(sigmoid(g, g.input(Tensor::vec({0.0})))).data[0] == 0.5);
}

TEST_CASE("relu definition") {
    Graph g;
    Var y = relu(g, g.input(Tensor::vec({-1.0, 0.0, 2.0})));
    CHECK(g.value(y).data == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("conv1d identity kernel") {
    Graph g;
    Var y = conv1d(g, g.input(Tensor({1, 1, 3}, {1, 2, 3})), g.input(Tensor({1, 1, 1}, {1.0})),
                   g.input(Tensor::vec({0.0})), 0);
    CHECK(g.value(y).data == std::vector<double>{1, 2, 3});
}

TEST_CASE("conv1d matches the hand-unrolled oracle") {
    // frozen from the oracle: input (1,2,3), box kernel, zero padding 1
    const Tensor x({1, 1, 3}, {1, 2, 3});
    const Tensor w({1, 1, 3}, {1, 1, 1});
    const Tensor b = Tensor::vec({0.0});
    const Tensor expect = conv_oracle(x, w, b, 1);
    CHECK(expect.data == std::vector<double>{3, 6, 5});
    Graph g;
    Var y = conv1d(g, g.input(x), g.input(w), g.input(b), 1);
    CHECK(g.value(y).data == expect.data);

    Rng rng(21);
    for (int round = 0; round < 5; ++round) {
        const Tensor xr = rand_tensor({2, 2, 5}, rng);
        const Tensor wr = rand_tensor({3, 2, 3}, rng);
        const Tensor br = rand_tensor({3}, rng);
        Graph gg;
        Var yy = conv1d(gg, gg.input(xr), gg.input(wr), gg.input(br), 1);
        const Tensor oracle = conv_oracle(xr, wr, br, 1);
        for (std::size_t i = 0; i < oracle.size(); ++i)
            CHECK(rel_err(gg.value(yy).data[i], oracle.data[i]) < 1e-12);
    }
}

TEST_CASE("backward matches the hand chain rule") {
    // loss = mse(w*x, y) with w=2, x=3, y=5 -> dloss/dw = 2*(6-5)*3 = 6
    Graph g;
    Var w = g.input(Tensor({1, 1}, {2.0}));
    Var x = g.input(Tensor({1, 1}, {3.0}));
    Var loss = mse_loss(g, matmul(g, w, x), Tensor::vec({5.0}));
    g.backward(loss);
    CHECK(g.grad(w).data[0] == 6.0);
    CHECK(g.grad(x).data[0] == 4.0); // 2*(6-5)*2
}

TEST_CASE("unreachable leaf gets a zero gradient of its shape") {
    Graph g;
    Var used = g.input(Tensor::vec({1.0, 2.0}));
    Var unused = g.input(Tensor({2, 3}, 1.0));
    g.backward(mse_loss(g, used, Tensor::vec({0.0, 0.0})));
    const Tensor& gz = g.grad(unused);
    CHECK(gz.shape == std::vector<std::size_t>{2, 3});
    for (double v : gz.data) CHECK(v == 0.0);
}

TEST_CASE("gradients of repeated uses accumulate by summation") {
    const Tensor xv = Tensor::vec({0.3, -0.7, 1.1});
    const Tensor target = Tensor::vec({0.1, 0.2, 0.3});
    Graph g1;
    Var x1 = g1.input(xv);
    g1.backward(mse_loss(g1, add(g1, x1, x1), target));
    Graph g2;
    Var x2 = g2.input(xv);
    Var two = g2.input(Tensor::vec({2.0, 2.0, 2.0}), false);
    g2.backward(mse_loss(g2, mul(g2, x2, two), target));
    CHECK(g1.grad(x1).data == g2.grad(x2).data);
}

TEST_CASE("backward requires a scalar loss and runs once") {
    Graph g;
    Var x = g.input(Tensor::vec({1.0, 2.0}));
    CHECK_THROWS_AS(g.backward(x), std::invalid_argument);
    Graph g2;
    Var y = g2.input(Tensor::vec({1.0}));
    Var loss = mse_loss(g2, y, Tensor::vec({0.0}));
    g2.backward(loss);
    CHECK_THROWS_AS(g2.backward(loss), std::logic_error);
}

TEST_CASE("non-finite primitive output is surfaced as an error") {
    Graph g;
    Var big = g.input(Tensor({1, 1}, {1e308}));
    Var big2 = g.input(Tensor({1, 1}, {1e308}));
    CHECK_THROWS_AS(matmul(g, big, big2), NumericError);
    CHECK_THROWS_AS(g.input(Tensor::vec({std::numeric_limits<double>::infinity()})), NumericError);
}

TEST_CASE("finite difference oracle on closed forms") {
    // f(x) = x^2 at 3 -> 6
    const Tensor fd1 = finite_difference_gradient(
        [](const Tensor& t) { return t.data[0] * t.data[0]; }, Tensor::vec({3.0}), 1e-5);
    CHECK(std::abs(fd1.data[0] - 6.0) < 1e-6);
    // constant f -> zero vector
    const Tensor fd2 = finite_difference_gradient([](const Tensor&) { return 4.2; },
                                                  Tensor::vec({1.0, 2.0, 3.0}), 1e-5);
    for (double v : fd2.data) CHECK(v == 0.0);
    // f(x) = sum(sigmoid(x)) at (0,0) -> (0.25, 0.25)
    const Tensor fd3 = finite_difference_gradient(
        [](const Tensor& t) {
            double acc = 0.0;
            for (double v : t.data) acc += 1.0 / (1.0 + std::exp(-v));
            return acc;
        },
        Tensor::vec({0.0, 0.0}), 1e-5);
    CHECK(std::abs(fd3.data[0] - 0.25) < 1e-6);
    CHECK(std::abs(fd3.data[1] - 0.25) < 1e-6);
    CHECK_THROWS_AS(
        finite_difference_gradient([](const Tensor&) { return 0.0; }, Tensor::vec({1.0}), 0.0),
        std::invalid_argument);
    CHECK_THROWS_AS(finite_difference_gradient(
                        [](const Tensor&) { return std::numeric_limits<double>::infinity(); },
                        Tensor::vec({1.0}), 1e-5),
                    NumericError);
}

TEST_CASE("mse loss examples") {
    Graph g;
    Var p = g.input(Tensor::vec({0.4, 0.6}));
    CHECK(g.value(mse_loss(g, p, Tensor::vec({0.4, 0.6}))).data[0] == 0.0);
    Graph g2;
    Var p2 = g2.input(Tensor::vec({1.0, 1.0}));
    CHECK(g2.value(mse_loss(g2, p2, Tensor::vec({0.0, 2.0}))).data[0] == 1.0);
    Graph g3;
    Var p3 = g3.input(Tensor::vec({0.5}));
    CHECK(std::abs(g3.value(mse_loss(g3, p3, Tensor::vec({0.2}))).data[0] - 0.09) < 1e-12);
    Graph g4;
    CHECK_THROWS_AS(mse_loss(g4, g4.input(Tensor::vec({1.0})), Tensor::vec({1.0, 2.0})), ShapeError);
}

TEST_CASE("cross entropy examples") {
    {
        Graph g;
        Var logits = g.input(Tensor({1, 2}, {0.0, 0.0}));
        const double loss = g.value(cross_entropy_loss(g, logits, {1})).data[0];
        CHECK(std::abs(loss - std::log(2.0)) < 1e-9);
    }
    {
        Graph g;
        Var logits = g.input(Tensor({1, 2}, {-50.0, 50.0}));
        const double loss = g.value(cross_entropy_loss(g, logits, {1})).data[0];
        CHECK(loss >= 0.0);
        CHECK(loss < 1e-10);
    }
    {
        // oracle: mean of ln(1+e^1) and ln(1+e^3)
        const double expect = ce_oracle({{1.0, 2.0}, {3.0, 0.0}}, {0, 1});
        CHECK(std::abs(expect - 2.1809245195459823) < 1e-12);
        Graph g;
        Var logits = g.input(Tensor({2, 2}, {1.0, 2.0, 3.0, 0.0}));
        const double loss = g.value(cross_entropy_loss(g, logits, {0, 1})).data[0];
        CHECK(std::abs(loss - expect) < 1e-9);
    }
    {
        Graph g;
        Var logits = g.input(Tensor({1, 2}, {0.0, 0.0}));
        CHECK_THROWS_AS(cross_entropy_loss(g, logits, {2}), std::invalid_argument);
    }
}

TEST_CASE("determinism: identical inputs and seeds give bit-identical outputs") {
    Rng rng(31);
    const Tensor x = rand_tensor({4, 6}, rng);
    auto run = [&](std::uint64_t seed) {
        Graph g;
        Var v = dropout(g, tanh(g, g.input(x)), 0.4, Mode::train, seed);
        return g.value(v).data;
    };
    CHECK(run(77) == run(77));
    CHECK(run(77) != run(78));
    // eval mode is an exact identity
    Graph g;
    Var xin = g.input(x);
    Var id = dropout(g, xin, 0.4, Mode::eval, 1);
    CHECK(id.id == xin.id);
}

TEST_CASE("gradient sweep across every primitive") {
    Rng rng(101);
    const int rounds = 6;
    for (int round = 0; round < rounds; ++round) {
        // add, equal shapes
        check_gradients([](Graph& g, const std::vector<Var>& v) { return add(g, v[0], v[1]); },
                        {rand_tensor({2, 3}, rng), rand_tensor({2, 3}, rng)},
                        rand_tensor({2, 3}, rng));
        // add, row-broadcast bias
        check_gradients([](Graph& g, const std::vector<Var>& v) { return add(g, v[0], v[1]); },
                        {rand_tensor({3, 4}, rng), rand_tensor({4}, rng)}, rand_tensor({3, 4}, rng));
        // mul
        check_gradients([](Graph& g, const std::vector<Var>& v) { return mul(g, v[0], v[1]); },
                        {rand_tensor({2, 5}, rng), rand_tensor({2, 5}, rng)},
                        rand_tensor({2, 5}, rng));
        // matmul
        check_gradients([](Graph& g, const std::vector<Var>& v) { return matmul(g, v[0], v[1]); },
                        {rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)},
                        rand_tensor({3, 2}, rng));
        // sigmoid / tanh / relu
        check_gradients([](Graph& g, const std::vector<Var>& v) { return sigmoid(g, v[0]); },
                        {rand_tensor({2, 3}, rng)}, rand_tensor({2, 3}, rng));
        check_gradients([](Graph& g, const std::vector<Var>& v) { return tanh(g, v[0]); },
                        {rand_tensor({2, 3}, rng)}, rand_tensor({2, 3}, rng));
        check_gradients([](Graph& g, const std::vector<Var>& v) { return relu(g, v[0]); },
                        {rand_tensor_off_zero({2, 3}, rng)}, rand_tensor({2, 3}, rng));
        // conv1d, both paddings used by the classifier
        check_gradients(
            [](Graph& g, const std::vector<Var>& v) { return conv1d(g, v[0], v[1], v[2], 1); },
            {rand_tensor({2, 2, 5}, rng), rand_tensor({3, 2, 3}, rng), rand_tensor({3}, rng)},
            rand_tensor({2, 3, 5}, rng));
        check_gradients(
            [](Graph& g, const std::vector<Var>& v) { return conv1d(g, v[0], v[1], v[2], 0); },
            {rand_tensor({2, 1, 3}, rng), rand_tensor({2, 1, 1}, rng), rand_tensor({2}, rng)},
            rand_tensor({2, 2, 3}, rng));
        // layer_norm
        check_gradients(
            [](Graph& g, const std::vector<Var>& v) { return layer_norm(g, v[0], v[1], v[2]); },
            {rand_tensor({3, 6}, rng), rand_tensor({6}, rng, 0.5, 1.5), rand_tensor({6}, rng)},
            rand_tensor({3, 6}, rng));
        // batch_norm: train and eval, rank 2 and rank 3
        for (const Mode mode : {Mode::train, Mode::eval}) {
            Tensor rm = rand_tensor({4}, rng, -0.2, 0.2);
            Tensor rv = rand_tensor({4}, rng, 0.5, 1.5);
            check_gradients(
                [rm, rv, mode](Graph& g, const std::vector<Var>& v) mutable {
                    return batch_norm(g, v[0], v[1], v[2], rm, rv, mode);
                },
                {rand_tensor({5, 4}, rng), rand_tensor({4}, rng, 0.5, 1.5), rand_tensor({4}, rng)},
                rand_tensor({5, 4}, rng));
            Tensor rm3 = rand_tensor({2}, rng, -0.2, 0.2);
            Tensor rv3 = rand_tensor({2}, rng, 0.5, 1.5);
            check_gradients(
                [rm3, rv3, mode](Graph& g, const std::vector<Var>& v) mutable {
                    return batch_norm(g, v[0], v[1], v[2], rm3, rv3, mode);
                },
                {rand_tensor({3, 2, 4}, rng), rand_tensor({2}, rng, 0.5, 1.5),
                 rand_tensor({2}, rng)},
                rand_tensor({3, 2, 4}, rng));
        }
        // dropout with a fixed mask seed
        check_gradients(
            [](Graph& g, const std::vector<Var>& v) {
                return dropout(g, v[0], 0.3, Mode::train, 99);
            },
            {rand_tensor({4, 5}, rng)}, rand_tensor({4, 5}, rng));
        // global average pooling
        check_gradients([](Graph& g, const std::vector<Var>& v) { return global_avg_pool(g, v[0]); },
                        {rand_tensor({2, 3, 4}, rng)}, rand_tensor({2, 3}, rng));
        // concat along channels and along rows
        check_gradients([](Graph& g, const std::vector<Var>& v) { return concat(g, v[0], v[1], 1); },
                        {rand_tensor({2, 2, 3}, rng), rand_tensor({2, 3, 3}, rng)},
                        rand_tensor({2, 5, 3}, rng));
        check_gradients([](Graph& g, const std::vector<Var>& v) { return concat(g, v[0], v[1], 0); },
                        {rand_tensor({2, 3}, rng), rand_tensor({1, 3}, rng)},
                        rand_tensor({3, 3}, rng));
        // slice
        check_gradients(
            [](Graph& g, const std::vector<Var>& v) { return slice(g, v[0], 1, 2, 3); },
            {rand_tensor({3, 6}, rng)}, rand_tensor({3, 3}, rng));
        // cross entropy w.r.t. logits (fd through the raw loss value)
        {
            const Tensor logits = rand_tensor({4, 2}, rng);
            const std::vector<int> labels = {0, 1, 1, 0};
            Graph g;
            Var lv = g.input(logits);
            g.backward(cross_entropy_loss(g, lv, labels));
            const Tensor fd = finite_difference_gradient(
                [&](const Tensor& probe) {
                    Graph gg;
                    return gg.value(cross_entropy_loss(gg, gg.input(probe), labels)).data[0];
                },
                logits, 1e-5);
            for (std::size_t j = 0; j < fd.size(); ++j)
                CHECK(rel_err(g.grad(lv).data[j], fd.data[j]) < 1e-4);
            ++fd_points_checked;
        }
    }
}

TEST_CASE("the sweep covered at least 100 random tensors") {
    CHECK(fd_points_checked >= 100);
}
