#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "tsguard/attack.hpp"

using namespace tsguard;

namespace {

Tensor rand_tensor(const std::vector<std::size_t>& shape, Rng& rng, double lo = 0.0,
                   double hi = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// linear model pred = X w + b as an attack target; convex loss, so the
// in-ball maximum sits at a corner and can be brute-forced
DifferentiableModel linear_model(const Tensor& w, double b) {
    return [w, b](Graph& g, Var x) {
        Var wv = g.input(w, false);
        Var bv = g.input(Tensor::vec({b}), false);
        return add(g, matmul(g, x, wv), bv);
    };
}

// exhaustive corner enumeration of the l-inf ball, the attack-optimality oracle:
// rows are independent, so the max mean loss is the mean of per-row corner maxima
double corner_max_loss(const Tensor& X, const Tensor& y, const Tensor& w, double b, double eps) {
    const std::size_t m = X.shape[0], n = X.shape[1];
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double best = 0.0;
        for (std::size_t corner = 0; corner < (std::size_t{1} << n); ++corner) {
            double pred = b;
            for (std::size_t j = 0; j < n; ++j) {
                const double xj = X.at2(i, j) + ((corner >> j) & 1 ? eps : -eps);
                pred += xj * w.data[j];
            }
            const double d = pred - y.data[i];
            best = std::max(best, d * d);
        }
        total += best;
    }
    return total / static_cast<double>(m);
}

double batch_loss(const DifferentiableModel& model, const Tensor& X, const Tensor& y) {
    Graph g;
    return g.value(mse_loss(g, model(g, g.input(X, false)), y)).data[0];
}

} // namespace

TEST_CASE("epsilon budget invariants") {
    const EpsilonBudget eb(0.2, 0.3, 0.4);
    CHECK(eb.eps_d == eb.eps_f);
    CHECK_THROWS_AS(EpsilonBudget(0.4, 0.3, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(EpsilonBudget(-0.1, 0.3, 0.1), std::invalid_argument);
}

TEST_CASE("pgd_init") {
    Rng rng(3);
    const Tensor X = rand_tensor({100, 100}, rng);
    SECTION("zero init returns the batch unchanged") {
        CHECK(bit_equal(pgd_init(X, PgdInit::zero, 0.3, 1), X));
    }
    SECTION("uniform init stays inside the ball over 10^4 samples") {
        const Tensor x0 = pgd_init(X, PgdInit::uniform, 0.3, 5);
        CHECK(x0.size() == 10000);
        CHECK(linf_distance(x0, X) <= 0.3);
        CHECK(linf_distance(x0, X) > 0.2); // support is actually exercised
    }
    SECTION("degenerate radius") { CHECK(bit_equal(pgd_init(X, PgdInit::uniform, 0.0, 5), X)); }
    SECTION("negative radius rejected") {
        CHECK_THROWS_AS(pgd_init(X, PgdInit::uniform, -0.1, 5), std::invalid_argument);
    }
}

TEST_CASE("pgd_step follows the sign of the gradient") {
    Rng rng(4);
    const Tensor X = rand_tensor({6, 3}, rng);
    const Tensor w({3, 1}, {0.5, 1.0, 0.25}); // strictly positive
    Tensor y({6});                            // targets far above any prediction
    for (auto& v : y.data) v = 100.0;
    const auto model = linear_model(w, 0.0);

    SECTION("positive gradient moves every component by +alpha") {
        // prediction below target and positive weights: d(loss)/dx < 0... the
        // ascent direction is sign(grad); grad = 2(pred-y)w/m with pred-y < 0
        // and w > 0 is negative, so the step is -alpha everywhere
        const Tensor next = pgd_step(model, X, X, y, 0.05, 0.3);
        for (std::size_t i = 0; i < X.size(); ++i) CHECK(next.data[i] == X.data[i] - 0.05);
    }
    SECTION("flip the target below predictions and the step is +alpha") {
        Tensor y_low({6});
        for (auto& v : y_low.data) v = -100.0;
        const Tensor next = pgd_step(model, X, X, y_low, 0.05, 0.3);
        for (std::size_t i = 0; i < X.size(); ++i) CHECK(next.data[i] == X.data[i] + 0.05);
    }
    SECTION("oversized alpha saturates at the ball boundary, sign(0) stays put") {
        const Tensor w_sparse({3, 1}, {0.8, 0.0, 1.2}); // middle column has zero gradient
        const auto sparse = linear_model(w_sparse, 0.0);
        const double eps = 0.2;
        const Tensor next = pgd_step(sparse, X, X, y, 10 * eps, eps);
        for (std::size_t i = 0; i < X.shape[0]; ++i) {
            CHECK(next.at2(i, 0) == X.at2(i, 0) - eps);
            CHECK(next.at2(i, 1) == X.at2(i, 1)); // sign(0) = 0
            CHECK(next.at2(i, 2) == X.at2(i, 2) - eps);
        }
    }
    SECTION("zero gradient is a fixed point") {
        const Tensor w_zero({3, 1}, {0.0, 0.0, 0.0});
        Tensor y_eq({6}); // loss exactly zero
        const Tensor next = pgd_step(linear_model(w_zero, 0.0), X, X, y_eq, 0.1, 0.3);
        CHECK(bit_equal(next, X));
    }
    SECTION("iterate outside the ball is rejected") {
        Tensor far = X;
        far.data[0] += 1.0;
        CHECK_THROWS_AS(pgd_step(model, far, X, y, 0.05, 0.3), std::invalid_argument);
    }
}

TEST_CASE("pgd_attack dual outputs") {
    Rng rng(8);
    const Tensor X = rand_tensor({10, 3}, rng);
    Tensor y({10});
    for (auto& v : y.data) v = 50.0;
    const Tensor w({3, 1}, {0.7, -0.4, 1.1});
    const auto model = linear_model(w, 0.3);
    AttackConfig cfg;
    cfg.seed = 11;

    SECTION("equal radii give bit-identical outputs") {
        const PgdOutputs out = pgd_attack(model, X, y, cfg, 0.3, 0.3);
        CHECK(bit_equal(out.x_f, out.x_c));
    }
    SECTION("both outputs respect their radii and the exact clamp identity") {
        const PgdOutputs out = pgd_attack(model, X, y, cfg, 0.3, 0.2);
        CHECK(linf_distance(out.x_f, X) <= 0.3 + 1e-12);
        CHECK(linf_distance(out.x_c, X) <= 0.2 + 1e-12);
        Tensor lo(X.shape), hi(X.shape);
        for (std::size_t i = 0; i < X.size(); ++i) {
            lo.data[i] = X.data[i] - 0.2;
            hi.data[i] = X.data[i] + 0.2;
        }
        CHECK(bit_equal(out.x_c, clamp(out.x_f, lo, hi)));
    }
    SECTION("every iterate stays inside the eps_f ball") {
        int steps_seen = 0;
        pgd_attack(model, X, y, cfg, 0.3, 0.2, [&](int, const Tensor& xt) {
            CHECK(linf_distance(xt, X) <= 0.3 + 1e-9);
            ++steps_seen;
        });
        CHECK(steps_seen == cfg.steps + 1); // init plus every step
    }
    SECTION("invalid radii rejected") {
        CHECK_THROWS_AS(pgd_attack(model, X, y, cfg, 0.2, 0.3), std::invalid_argument);
    }
}

TEST_CASE("attack reaches the brute-force corner maximum on a linear surrogate") {
    Rng rng(19);
    const Tensor X = rand_tensor({16, 3}, rng);
    const Tensor w({3, 1}, {0.7, -0.4, 1.1});
    const double b = 0.3;
    // targets far above every in-ball prediction keep the loss monotone
    Tensor y({16});
    for (auto& v : y.data) v = 25.0;
    const auto model = linear_model(w, b);
    const double eps = 0.3;

    AttackConfig cfg; // T = 10, uniform init
    cfg.seed = 5;
    const PgdOutputs out = pgd_attack(model, X, y, cfg, eps, eps);
    const double achieved = batch_loss(model, out.x_f, y);
    const double best = corner_max_loss(X, y, w, b, eps);
    CHECK(achieved >= 0.99 * best);
    CHECK(std::abs(achieved - best) <= 1e-6 * best);
}

TEST_CASE("mask sampling") {
    SECTION("exact_k(n) is the all-ones mask") {
        Rng rng(1);
        const Mask m = sample_mask(3, MaskPolicy::exact_k(3), rng);
        CHECK(m.q == std::vector<std::uint8_t>{1, 1, 1});
        CHECK(m.ones() == 3);
    }
    SECTION("exact_k(1) is uniform over the three singletons") {
        Rng rng(2);
        std::map<int, int> counts;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) {
            const Mask m = sample_mask(3, MaskPolicy::exact_k(1), rng);
            REQUIRE(m.ones() == 1);
            for (int j = 0; j < 3; ++j)
                if (m.q[static_cast<std::size_t>(j)]) counts[j]++;
        }
        double chi2 = 0.0;
        for (int j = 0; j < 3; ++j) {
            CHECK(std::abs(counts[j] / double(draws) - 1.0 / 3.0) < 0.02);
            const double expect = draws / 3.0;
            chi2 += (counts[j] - expect) * (counts[j] - expect) / expect;
        }
        CHECK(chi2 < 13.82); // chi-square df=2 at alpha=0.001
    }
    SECTION("uniform_nonzero never yields the zero mask") {
        Rng rng(3);
        for (int i = 0; i < 10000; ++i)
            CHECK(sample_mask(3, MaskPolicy::uniform_nonzero(), rng).ones() > 0);
    }
    SECTION("uniform_all covers all 2^n masks") {
        Rng rng(4);
        std::map<int, int> seen;
        for (int i = 0; i < 10000; ++i) {
            const Mask m = sample_mask(3, MaskPolicy::uniform_all(), rng);
            seen[m.q[0] | m.q[1] << 1 | m.q[2] << 2]++;
        }
        CHECK(seen.size() == 8);
    }
    SECTION("invalid k rejected") {
        Rng rng(5);
        CHECK_THROWS_AS(sample_mask(3, MaskPolicy::exact_k(4), rng), std::invalid_argument);
    }
}

TEST_CASE("apply_mask column semantics") {
    Rng rng(6);
    // dyadic values make X + q had (Xt - X) exact in floating point, so the
    // algebraic form of the mask equation can be checked bit-for-bit
    Tensor X({4, 3});
    Tensor Xt({4, 3});
    for (std::size_t i = 0; i < X.size(); ++i) {
        X.data[i] = static_cast<double>(rng.below(16)) / 8.0;
        Xt.data[i] = X.data[i] + static_cast<double>(rng.below(8)) / 4.0 - 1.0;
    }

    SECTION("single-column mask touches only that column") {
        const Tensor out = apply_mask(X, Xt, Mask{{0, 0, 1}});
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(out.at2(i, 0) == X.at2(i, 0));
            CHECK(out.at2(i, 1) == X.at2(i, 1));
            CHECK(out.at2(i, 2) == Xt.at2(i, 2));
        }
    }
    SECTION("zero mask is the identity, full mask is the replacement") {
        CHECK(bit_equal(apply_mask(X, Xt, Mask{{0, 0, 0}}), X));
        CHECK(bit_equal(apply_mask(X, Xt, Mask{{1, 1, 1}}), Xt));
    }
    SECTION("all 8 masks satisfy the hadamard identity bit-exactly") {
        for (int bits = 0; bits < 8; ++bits) {
            Mask q{{static_cast<std::uint8_t>(bits & 1), static_cast<std::uint8_t>((bits >> 1) & 1),
                    static_cast<std::uint8_t>((bits >> 2) & 1)}};
            const Tensor out = apply_mask(X, Xt, q);
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = 0; j < 3; ++j) {
                    const double expect =
                        X.at2(i, j) + (q.q[j] ? 1.0 : 0.0) * (Xt.at2(i, j) - X.at2(i, j));
                    CHECK(out.at2(i, j) == expect);
                    if (!q.q[j]) CHECK(out.at2(i, j) == X.at2(i, j));
                }
        }
    }
    SECTION("shape mismatch rejected") {
        CHECK_THROWS_AS(apply_mask(X, Xt, Mask{{1, 0}}), ShapeError);
    }
}

TEST_CASE("per-row masking draws independent masks") {
    Rng data_rng(7);
    const Tensor X = rand_tensor({64, 3}, data_rng);
    Tensor Xt = X;
    for (auto& v : Xt.data) v += 1.0;
    Rng rng(8);
    const Tensor out = mask_rows(X, Xt, MaskPolicy::uniform_nonzero(), rng);
    std::map<int, int> patterns;
    for (std::size_t i = 0; i < 64; ++i) {
        int bits = 0;
        int ones = 0;
        for (std::size_t j = 0; j < 3; ++j) {
            const bool masked = out.at2(i, j) != X.at2(i, j);
            bits |= masked << j;
            ones += masked;
        }
        CHECK(ones > 0); // nonzero policy
        patterns[bits]++;
    }
    CHECK(patterns.size() > 1); // rows do not share one mask
}
