#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsguard/attack.hpp"
#include "tsguard/data.hpp"
#include "tsguard/networks.hpp"
#include "tsguard/optimizer.hpp"

namespace tsguard {

struct HyperParams {
    int epochs = 10;
    double learning_rate = 0.008;
    double weight_decay = 0.2;
    double gamma = 0.5;
    int scheduler_step = 5;
    std::size_t batch_size = 512;
    std::uint64_t seed = 0;
};

/// Per-component training defaults.
namespace hyper_defaults {
inline HyperParams f1() { return {10, 0.008, 0.2, 0.5, 5, 512, 0}; }
inline HyperParams f2() { return {15, 0.008, 0.2, 0.5, 5, 512, 0}; }
inline HyperParams classifier() { return {40, 0.01, 0.02, 0.5, 10, 512, 0}; }
inline HyperParams denoiser() { return {40, 0.005, 0.1, 0.5, 5, 512, 0}; }
} // namespace hyper_defaults

// Seed derivation for the independent random streams inside one training run.
// Public so tests can reproduce a trainer's draws exactly.
inline std::uint64_t init_seed(std::uint64_t run_seed) { return derive_seed(run_seed, {0}); }
inline std::uint64_t dropout_seed(std::uint64_t run_seed, int epoch, int batch) {
    return derive_seed(run_seed, {1, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batch)});
}
inline std::uint64_t attack_seed(std::uint64_t run_seed, int epoch, int batch) {
    return derive_seed(run_seed, {2, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batch)});
}
inline std::uint64_t mask_seed(std::uint64_t run_seed, int epoch, int batch) {
    return derive_seed(run_seed, {3, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batch)});
}

struct TrainHooks {
    /// After each batch's gradient computation (parameters untouched until epoch end).
    std::function<void(int epoch, int batch, const std::vector<const Tensor*>& trainable)> on_batch;
    /// The accumulated mean-of-batch gradients, just before the epoch's Adam step.
    std::function<void(int epoch, const std::vector<Tensor>& mean_grads)> on_epoch_grads;
};

namespace detail {

struct BatchGraph {
    Var loss;
    std::vector<Var> param_vars; // aligned with Params::trainable()
};

/// Shared epoch driver: sequential batches, gradient accumulation as the MEAN
/// of per-batch gradients, exactly one Adam step (plus decoupled weight
/// decay) per epoch, step-decay learning rate, JSONL metrics.
template <typename Params, typename BuildLoss>
Params train_loop(Params params, const WindowedDataset& data, const HyperParams& hp,
                  const std::string& component, std::ostream* metrics, const TrainHooks& hooks,
                  BuildLoss&& build) {
    if (data.rows() == 0) throw ConfigError("train " + component + ": dataset is empty");
    if (hp.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
    if (hp.epochs < 0) throw std::invalid_argument("train: epochs must be nonnegative");

    std::vector<Tensor*> trainable = params.trainable();
    std::vector<const Tensor*> trainable_view(trainable.begin(), trainable.end());
    AdamState adam(trainable_view);
    const std::size_t n = data.rows();
    const std::size_t n_batches = (n + hp.batch_size - 1) / hp.batch_size;

    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, hp.learning_rate, hp.gamma, hp.scheduler_step);
        std::vector<Tensor> accum;
        accum.reserve(trainable.size());
        for (const Tensor* t : trainable) accum.emplace_back(t->shape);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t start = b * hp.batch_size;
            const std::size_t count = std::min(hp.batch_size, n - start);
            Graph g;
            BatchGraph bg = build(g, params, data, start, count, epoch, static_cast<int>(b));
            g.backward(bg.loss);
            for (std::size_t i = 0; i < bg.param_vars.size(); ++i) {
                const Tensor& grad = g.grad(bg.param_vars[i]);
                for (std::size_t j = 0; j < grad.size(); ++j) accum[i].data[j] += grad.data[j];
            }
            loss_sum += g.value(bg.loss).data[0];
            if (hooks.on_batch) hooks.on_batch(epoch, static_cast<int>(b), trainable_view);
        }
        const double inv = 1.0 / static_cast<double>(n_batches);
        for (Tensor& t : accum)
            for (double& v : t.data) v *= inv;
        if (hooks.on_epoch_grads) hooks.on_epoch_grads(epoch, accum);
        adam.epoch_update(trainable, accum, lr, hp.weight_decay);
        if (metrics) {
            nlohmann::json line = {{"component", component},
                                   {"epoch", epoch},
                                   {"loss", loss_sum * inv},
                                   {"lr", lr}};
            *metrics << line.dump() << '\n';
        }
    }
    return params;
}

} // namespace detail

// --------------------------------------------------------------------------
// batch builders (public so composition rules are directly testable)
// --------------------------------------------------------------------------

struct ClassifierBatch {
    Tensor x;                // m x n, first ceil(m/2) rows clean
    std::vector<int> labels; // 0 clean, 1 perturbed
};

/// Exactly ceil(m/2) clean rows (label 0) followed by floor(m/2) rows replaced
/// by their masked eps_c attack outputs (label 1).
inline ClassifierBatch make_classifier_batch(const Tensor& Xb, const Tensor& yb,
                                             const ForecasterParams& f1, double eps_c, double eps_f,
                                             const AttackConfig& cfg, Rng& mask_rng,
                                             const MaskPolicy& masks = MaskPolicy::uniform_nonzero()) {
    const std::size_t m = Xb.shape.at(0);
    ClassifierBatch out{Xb, std::vector<int>(m, 0)};
    const std::size_t clean_count = (m + 1) / 2;
    if (clean_count >= m) return out;
    const Tensor xp = Xb.rows(clean_count, m - clean_count);
    const Tensor yp = yb.rows(clean_count, m - clean_count);
    const PgdOutputs atk = pgd_attack(f1, xp, yp, cfg, eps_f, eps_c);
    out.x.set_rows(clean_count, mask_rows(xp, atk.x_c, masks, mask_rng));
    for (std::size_t i = clean_count; i < m; ++i) out.labels[i] = 1;
    return out;
}

struct DenoiserBatch {
    Tensor input;  // masked perturbed windows
    Tensor target; // the clean originals
};

inline DenoiserBatch make_denoiser_batch(const Tensor& Xb, const Tensor& yb,
                                         const ForecasterParams& f1, double eps_d,
                                         const AttackConfig& cfg, Rng& mask_rng,
                                         const MaskPolicy& masks = MaskPolicy::uniform_nonzero()) {
    const PgdOutputs atk = pgd_attack(f1, Xb, yb, cfg, eps_d, eps_d);
    return {mask_rows(Xb, atk.x_f, masks, mask_rng), Xb};
}

// --------------------------------------------------------------------------
// the four training regimens
// --------------------------------------------------------------------------

/// Standard empirical risk minimization on clean windows.
inline ForecasterParams train_f1(const WindowedDataset& train, const ForecasterArch& arch,
                                 const HyperParams& hp, std::ostream* metrics = nullptr,
                                 const TrainHooks& hooks = {}) {
    ForecasterParams init = init_forecaster(arch, init_seed(hp.seed));
    return detail::train_loop(
        std::move(init), train, hp, "f1", metrics, hooks,
        [&hp](Graph& g, const ForecasterParams& p, const WindowedDataset& data, std::size_t start,
              std::size_t count, int epoch, int batch) {
            ForecasterVars v = lift(g, p);
            Var x = g.input(data.X.rows(start, count), false);
            Var pred = forecaster_forward(g, p, v, x, Mode::train, dropout_seed(hp.seed, epoch, batch));
            return detail::BatchGraph{mse_loss(g, pred, data.y.rows(start, count)), v.ordered()};
        });
}

/// Adversarial risk minimization: every training window is replaced by its
/// masked eps_f attack output against the frozen f1 (regenerated fresh every
/// epoch); targets stay clean. f2's own parameters never influence example
/// generation.
inline ForecasterParams train_f2(const WindowedDataset& train, const ForecasterParams& f1,
                                 const ForecasterArch& arch, const HyperParams& hp, double eps_f,
                                 const AttackConfig& attack_cfg, std::ostream* metrics = nullptr,
                                 const TrainHooks& hooks = {},
                                 const MaskPolicy& masks = MaskPolicy::uniform_nonzero()) {
    if (eps_f < 0.0) throw std::invalid_argument("train_f2: eps_f must be nonnegative");
    ForecasterParams init = init_forecaster(arch, init_seed(hp.seed));
    return detail::train_loop(
        std::move(init), train, hp, "f2", metrics, hooks,
        [&hp, &f1, eps_f, &attack_cfg, &masks](Graph& g, const ForecasterParams& p,
                                               const WindowedDataset& data, std::size_t start,
                                               std::size_t count, int epoch, int batch) {
            const Tensor xb = data.X.rows(start, count);
            const Tensor yb = data.y.rows(start, count);
            AttackConfig cfg = attack_cfg;
            cfg.seed = attack_seed(hp.seed, epoch, batch);
            const PgdOutputs atk = pgd_attack(f1, xb, yb, cfg, eps_f, eps_f);
            Rng mask_rng(mask_seed(hp.seed, epoch, batch));
            ForecasterVars v = lift(g, p);
            Var x = g.input(mask_rows(xb, atk.x_f, masks, mask_rng), false);
            Var pred = forecaster_forward(g, p, v, x, Mode::train, dropout_seed(hp.seed, epoch, batch));
            return detail::BatchGraph{mse_loss(g, pred, yb), v.ordered()};
        });
}

/// Balanced detection training: each batch is half clean (label 0) and half
/// masked eps_c attack outputs (label 1), cross-entropy loss.
inline ClassifierParams train_classifier(const WindowedDataset& train, const ForecasterParams& f1,
                                         const ClassifierArch& arch, const HyperParams& hp,
                                         double eps_c, double eps_f, const AttackConfig& attack_cfg,
                                         std::ostream* metrics = nullptr, const TrainHooks& hooks = {},
                                         const MaskPolicy& masks = MaskPolicy::uniform_nonzero()) {
    if (eps_c < 0.0 || eps_f < eps_c)
        throw std::invalid_argument("train_classifier: requires eps_f >= eps_c >= 0");
    ClassifierParams init = init_classifier(arch, init_seed(hp.seed));
    return detail::train_loop(
        std::move(init), train, hp, "classifier", metrics, hooks,
        [&hp, &f1, eps_c, eps_f, &attack_cfg, &masks](Graph& g, const ClassifierParams& p,
                                                      const WindowedDataset& data, std::size_t start,
                                                      std::size_t count, int epoch, int batch) {
            AttackConfig cfg = attack_cfg;
            cfg.seed = attack_seed(hp.seed, epoch, batch);
            Rng mask_rng(mask_seed(hp.seed, epoch, batch));
            ClassifierBatch cb = make_classifier_batch(data.X.rows(start, count),
                                                       data.y.rows(start, count), f1, eps_c, eps_f,
                                                       cfg, mask_rng, masks);
            ClassifierVars v = lift(g, p);
            Var x = g.input(cb.x.reshaped({count, std::size_t{1}, p.arch.window}), false);
            Var logits = classifier_forward(g, p, v, x, Mode::train, dropout_seed(hp.seed, epoch, batch));
            return detail::BatchGraph{cross_entropy_loss(g, logits, cb.labels), v.ordered()};
        });
}

/// Reconstruction training on fully adversarial inputs: masked eps_d attack
/// outputs in, clean originals as targets, MSE loss.
inline DenoiserParams train_denoiser(const WindowedDataset& train, const ForecasterParams& f1,
                                     const DenoiserArch& arch, const HyperParams& hp, double eps_d,
                                     const AttackConfig& attack_cfg, std::ostream* metrics = nullptr,
                                     const TrainHooks& hooks = {},
                                     const MaskPolicy& masks = MaskPolicy::uniform_nonzero()) {
    if (eps_d < 0.0) throw std::invalid_argument("train_denoiser: eps_d must be nonnegative");
    DenoiserParams init = init_denoiser(arch, init_seed(hp.seed));
    return detail::train_loop(
        std::move(init), train, hp, "denoiser", metrics, hooks,
        [&hp, &f1, eps_d, &attack_cfg, &masks](Graph& g, const DenoiserParams& p,
                                               const WindowedDataset& data, std::size_t start,
                                               std::size_t count, int epoch, int batch) {
            AttackConfig cfg = attack_cfg;
            cfg.seed = attack_seed(hp.seed, epoch, batch);
            Rng mask_rng(mask_seed(hp.seed, epoch, batch));
            DenoiserBatch db = make_denoiser_batch(data.X.rows(start, count),
                                                   data.y.rows(start, count), f1, eps_d, cfg,
                                                   mask_rng, masks);
            DenoiserVars v = lift(g, p);
            Var rec = denoiser_forward(g, p, v, g.input(db.input, false), Mode::train,
                                       dropout_seed(hp.seed, epoch, batch));
            return detail::BatchGraph{mse_loss(g, rec, db.target), v.ordered()};
        });
}

} // namespace tsguard
