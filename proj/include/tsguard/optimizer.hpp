#pragma once

#include <cmath>
#include <vector>

#include "tsguard/tensor.hpp"

namespace tsguard {

/// Step decay: base_lr * gamma^floor(epoch / step_size).
inline double lr_schedule(int epoch, double base_lr, double gamma, int step_size) {
    if (step_size <= 0) throw std::invalid_argument("lr_schedule: step_size must be positive");
    if (epoch < 0) throw std::invalid_argument("lr_schedule: epoch must be nonnegative");
    return base_lr * std::pow(gamma, epoch / step_size);
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction followed by decoupled weight decay
/// p <- p * (1 - lr * weight_decay). Called once per epoch on the mean of the
/// epoch's per-batch gradients.
class AdamState {
public:
    explicit AdamState(const std::vector<const Tensor*>& params, AdamConfig cfg = {}) : cfg_(cfg) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->shape);
            v_.emplace_back(p->shape);
        }
    }

    void epoch_update(const std::vector<Tensor*>& params, const std::vector<Tensor>& mean_grads,
                      double lr, double weight_decay) {
        if (params.size() != m_.size() || mean_grads.size() != m_.size())
            throw ShapeError("AdamState: parameter/gradient count mismatch");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = mean_grads[i];
            if (!p.same_shape(g) || !p.same_shape(m_[i]))
                throw ShapeError("AdamState: gradient shape mismatch");
            for (std::size_t j = 0; j < p.size(); ++j) {
                m_[i].data[j] = cfg_.beta1 * m_[i].data[j] + (1.0 - cfg_.beta1) * g.data[j];
                v_[i].data[j] = cfg_.beta2 * v_[i].data[j] + (1.0 - cfg_.beta2) * g.data[j] * g.data[j];
                const double mhat = m_[i].data[j] / bc1;
                const double vhat = v_[i].data[j] / bc2;
                p.data[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
            const double decay = 1.0 - lr * weight_decay;
            for (double& w : p.data) w *= decay;
        }
    }

    long steps_taken() const { return step_; }
    const Tensor& first_moment(std::size_t i) const { return m_[i]; }
    const Tensor& second_moment(std::size_t i) const { return v_[i]; }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long step_ = 0;
};

} // namespace tsguard
