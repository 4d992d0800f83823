#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "tsguard/graph.hpp"
#include "tsguard/networks.hpp"
#include "tsguard/rng.hpp"
#include "tsguard/tensor.hpp"

namespace tsguard {

/// The four l-inf radii (fractions of the normalized data range) governing
/// all projections. eps_d is tied to eps_f; the classifier radius never
/// exceeds the forecaster radius.
struct EpsilonBudget {
    double eps_c;
    double eps_f;
    double eps_d;
    double eps_t;

    EpsilonBudget(double c, double f, double t) : eps_c(c), eps_f(f), eps_d(f), eps_t(t) {
        if (c < 0.0 || f < 0.0 || t < 0.0)
            throw std::invalid_argument("EpsilonBudget: radii must be nonnegative");
        if (c > f) throw std::invalid_argument("EpsilonBudget: eps_c must not exceed eps_f");
    }
};

enum class PgdInit { zero, uniform };

struct AttackConfig {
    int steps = 10;
    std::optional<double> alpha; // unset: 2.5 * eps / steps
    PgdInit init = PgdInit::uniform;
    std::uint64_t seed = 0;
    bool clamp_to_unit = false; // optionally confine iterates to the data domain [0,1]

    double step_size(double eps) const {
        if (alpha) return *alpha;
        return 2.5 * eps / static_cast<double>(steps);
    }
};

/// Eval-mode differentiable forward of the attacked model: input var -> prediction var.
using DifferentiableModel = std::function<Var(Graph&, Var)>;

/// Wraps a frozen forecaster for use as the attack target. Always eval mode,
/// so gradients are deterministic.
inline DifferentiableModel surrogate(const ForecasterParams& f1) {
    return [&f1](Graph& g, Var x) {
        // parameters are frozen: only the input needs a gradient
        return forecaster_forward(g, f1, lift(g, f1, false), x, Mode::eval);
    };
}

/// Initial perturbed batch: either the clean batch itself or i.i.d. uniform
/// displacement within the radius around it.
inline Tensor pgd_init(const Tensor& X, PgdInit init, double eps, std::uint64_t seed) {
    if (eps < 0.0) throw std::invalid_argument("pgd_init: eps must be nonnegative");
    if (init == PgdInit::zero || eps == 0.0) return X;
    Rng rng(seed);
    Tensor out(X.shape);
    for (std::size_t i = 0; i < X.size(); ++i) out.data[i] = X.data[i] + rng.uniform(-eps, eps);
    return out;
}

namespace detail {

inline Tensor attack_gradient(const DifferentiableModel& model, const Tensor& x_t,
                              const Tensor& y) {
    Graph g;
    Var xv = g.input(x_t);
    Var loss = mse_loss(g, model(g, xv), y);
    g.backward(loss);
    Tensor grad = g.grad(xv);
    ensure_finite(grad, "attack gradient");
    return grad;
}

inline Tensor ascend_and_project(const Tensor& x_t, const Tensor& grad, const Tensor& x0,
                                 double alpha, double eps, bool clamp_unit) {
    Tensor next(x_t.shape);
    for (std::size_t i = 0; i < next.size(); ++i) {
        const double s = (grad.data[i] > 0.0) - (grad.data[i] < 0.0);
        double v = x_t.data[i] + alpha * s;
        v = std::min(std::max(v, x0.data[i] - eps), x0.data[i] + eps);
        if (clamp_unit) v = std::min(std::max(v, 0.0), 1.0);
        next.data[i] = v;
    }
    return next;
}

} // namespace detail

/// One ascent step: x + alpha * sign(grad of the MSE w.r.t. x), clamped back
/// into the eps-ball around the clean batch x0. sign(0) = 0, so a zero
/// gradient is a fixed point.
inline Tensor pgd_step(const DifferentiableModel& model, const Tensor& x_t, const Tensor& x0,
                       const Tensor& y, double alpha, double eps, bool clamp_unit = false) {
    if (linf_distance(x_t, x0) > eps + 1e-9)
        throw std::invalid_argument("pgd_step: iterate outside the eps ball");
    const Tensor grad = detail::attack_gradient(model, x_t, y);
    return detail::ascend_and_project(x_t, grad, x0, alpha, eps, clamp_unit);
}

inline Tensor pgd_step(const ForecasterParams& f1, const Tensor& x_t, const Tensor& x0,
                       const Tensor& y, double alpha, double eps, bool clamp_unit = false) {
    return pgd_step(surrogate(f1), x_t, x0, y, alpha, eps, clamp_unit);
}

struct PgdOutputs {
    Tensor x_f; // final iterate projected at eps_f (forecaster/denoiser training)
    Tensor x_c; // same iterate projected at eps_c (classifier training)
};

using StepObserver = std::function<void(int step, const Tensor& x_t)>;

/// Full attack: steps 1..T-1 project onto the eps_f ball; the step-T ascent
/// is projected twice, at eps_f and at eps_c, around the clean batch. By
/// construction x_c == clamp(x_f, x0 - eps_c, x0 + eps_c) exactly.
inline PgdOutputs pgd_attack(const DifferentiableModel& model, const Tensor& X, const Tensor& y,
                             const AttackConfig& cfg, double eps_f, double eps_c,
                             const StepObserver& observer = {}) {
    if (eps_c > eps_f || eps_c < 0.0)
        throw std::invalid_argument("pgd_attack: requires eps_f >= eps_c >= 0");
    if (cfg.steps < 1) throw std::invalid_argument("pgd_attack: steps must be >= 1");
    const double alpha = cfg.step_size(eps_f);
    Tensor x_t = pgd_init(X, cfg.init, eps_f, cfg.seed);
    if (cfg.clamp_to_unit) x_t = clamp(x_t, 0.0, 1.0);
    if (observer) observer(0, x_t);
    for (int t = 1; t < cfg.steps; ++t) {
        x_t = pgd_step(model, x_t, X, y, alpha, eps_f, cfg.clamp_to_unit);
        if (observer) observer(t, x_t);
    }
    const Tensor grad = detail::attack_gradient(model, x_t, y);
    PgdOutputs out;
    out.x_f = detail::ascend_and_project(x_t, grad, X, alpha, eps_f, cfg.clamp_to_unit);
    out.x_c = detail::ascend_and_project(x_t, grad, X, alpha, eps_c, cfg.clamp_to_unit);
    if (observer) observer(cfg.steps, out.x_f);
    return out;
}

inline PgdOutputs pgd_attack(const ForecasterParams& f1, const Tensor& X, const Tensor& y,
                             const AttackConfig& cfg, double eps_f, double eps_c,
                             const StepObserver& observer = {}) {
    return pgd_attack(surrogate(f1), X, y, cfg, eps_f, eps_c, observer);
}

// --------------------------------------------------------------------------
// masks
// --------------------------------------------------------------------------

/// Binary step-selection vector applied column-wise to a batch.
struct Mask {
    std::vector<std::uint8_t> q;
    std::size_t ones() const {
        std::size_t k = 0;
        for (auto b : q) k += b;
        return k;
    }
};

struct MaskPolicy {
    enum class Kind { uniform_all, uniform_nonzero, exact_k };
    Kind kind = Kind::uniform_nonzero;
    std::size_t k = 0;

    static MaskPolicy uniform_all() { return {Kind::uniform_all, 0}; }
    static MaskPolicy uniform_nonzero() { return {Kind::uniform_nonzero, 0}; }
    static MaskPolicy exact_k(std::size_t k) { return {Kind::exact_k, k}; }
};

/// uniform_all draws from all 2^n masks, uniform_nonzero from the 2^n - 1
/// nonzero ones, exact_k uniformly among the C(n,k) masks with k ones.
inline Mask sample_mask(std::size_t n, const MaskPolicy& policy, Rng& rng) {
    if (n == 0 || n >= 63) throw std::invalid_argument("sample_mask: unsupported mask length");
    Mask m;
    m.q.assign(n, 0);
    switch (policy.kind) {
    case MaskPolicy::Kind::uniform_all: {
        const std::uint64_t bits = rng.below(std::uint64_t{1} << n);
        for (std::size_t i = 0; i < n; ++i) m.q[i] = (bits >> i) & 1;
        return m;
    }
    case MaskPolicy::Kind::uniform_nonzero: {
        const std::uint64_t bits = 1 + rng.below((std::uint64_t{1} << n) - 1);
        for (std::size_t i = 0; i < n; ++i) m.q[i] = (bits >> i) & 1;
        return m;
    }
    case MaskPolicy::Kind::exact_k: {
        if (policy.k > n) throw std::invalid_argument("sample_mask: k exceeds mask length");
        for (std::size_t pos : rng.sample_indices(n, policy.k)) m.q[pos] = 1;
        return m;
    }
    }
    throw std::invalid_argument("sample_mask: unknown policy");
}

/// Column j of the output is Xt's column where q_j = 1, else X's column;
/// equivalently X + q (hadamard) (Xt - X). Unmasked columns are bit-identical
/// to X.
inline Tensor apply_mask(const Tensor& X, const Tensor& Xt, const Mask& mask) {
    if (!X.same_shape(Xt) || X.rank() != 2 || mask.q.size() != X.shape[1])
        throw ShapeError("apply_mask: shapes must agree");
    Tensor out = X;
    const std::size_t m = X.shape[0], n = X.shape[1];
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (mask.q[j]) out.at2(i, j) = Xt.at2(i, j);
    return out;
}

/// Per-sequence masking: each row receives its own independently sampled mask.
inline Tensor mask_rows(const Tensor& X, const Tensor& Xt, const MaskPolicy& policy, Rng& rng) {
    if (!X.same_shape(Xt) || X.rank() != 2) throw ShapeError("mask_rows: shapes must agree");
    Tensor out = X;
    const std::size_t m = X.shape[0], n = X.shape[1];
    for (std::size_t i = 0; i < m; ++i) {
        const Mask mask = sample_mask(n, policy, rng);
        for (std::size_t j = 0; j < n; ++j)
            if (mask.q[j]) out.at2(i, j) = Xt.at2(i, j);
    }
    return out;
}

} // namespace tsguard
